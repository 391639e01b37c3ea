"""Preference-pair data: JSONL persistence, the synthetic task corpus, the
toy reward oracle, and the on-policy pair construction pipeline."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

from .model import EOS, PolicyModel, TokenSequence, Vocabulary, sample


class PairParseError(ValueError):
    """Malformed JSONL record; carries the offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class PairValidationError(ValueError):
    """A structurally valid record that violates PreferencePair invariants."""

    def __init__(self, message: str, record_id: str = "", line_no: int | None = None):
        where = f"line {line_no}: " if line_no is not None else ""
        ident = f" (id={record_id!r})" if record_id else ""
        super().__init__(f"{where}{message}{ident}")
        self.record_id = record_id
        self.line_no = line_no


@dataclass
class PreferencePair:
    id: str
    prompt: bytes
    chosen: bytes
    rejected: bytes
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.prompt:
            raise PairValidationError("prompt must be nonempty", self.id)
        if self.chosen == self.rejected:
            raise PairValidationError("chosen and rejected must differ", self.id)


def _encode_bytes(data: bytes) -> str:
    try:
        text = data.decode("utf-8")
        if not text.startswith("b64:"):
            return text
    except UnicodeDecodeError:
        pass
    return "b64:" + base64.b64encode(data).decode("ascii")


def _decode_bytes(text: str) -> bytes:
    if text.startswith("b64:"):
        return base64.b64decode(text[4:])
    return text.encode("utf-8")


def save_pairs(pairs, path) -> None:
    lines = []
    for p in pairs:
        record = {
            "id": p.id,
            "prompt": _encode_bytes(p.prompt),
            "chosen": _encode_bytes(p.chosen),
            "rejected": _encode_bytes(p.rejected),
            "meta": p.meta,
        }
        lines.append(json.dumps(record, ensure_ascii=False))
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def load_pairs(path) -> list[PreferencePair]:
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise PairParseError(line_no, str(e)) from e
            if not isinstance(record, dict):
                raise PairParseError(line_no, "record is not a JSON object")
            missing = {"id", "prompt", "chosen", "rejected"} - record.keys()
            if missing:
                raise PairParseError(line_no, f"missing keys {sorted(missing)}")
            try:
                pairs.append(PreferencePair(
                    id=str(record["id"]),
                    prompt=_decode_bytes(record["prompt"]),
                    chosen=_decode_bytes(record["chosen"]),
                    rejected=_decode_bytes(record["rejected"]),
                    meta=record.get("meta", {}),
                ))
            except PairValidationError as e:
                raise PairValidationError(str(e.args[0]).split(": ", 1)[-1],
                                          str(record.get("id", "")), line_no) from e
    return pairs


def edit_distance(a: bytes, b: bytes) -> int:
    """Levenshtein distance, numpy row DP."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    bv = np.frombuffer(b, dtype=np.uint8).astype(np.int64)
    prev = np.arange(len(b) + 1, dtype=np.int64)
    for i, ca in enumerate(a, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        sub = prev[:-1] + (bv != ca)
        np.minimum(sub, prev[1:] + 1, out=sub)
        # insertion column depends on the running minimum; do it serially
        running = cur[0]
        for j in range(1, len(b) + 1):
            running = min(sub[j - 1], running + 1)
            cur[j] = running
        prev = cur
    return int(prev[-1])


ORACLE_KINDS = ("target_match", "length_penalized_match")


@dataclass
class RewardOracle:
    """Deterministic stand-in for an external reward model.

    target_match scores a response by negated edit distance to the prompt's
    target answer; length_penalized_match additionally subtracts
    brevity_coefficient * len(response). A negative brevity coefficient
    rewards length, which makes verbosity-biased corpora constructible.
    """

    kind: str = "target_match"
    targets: dict = field(default_factory=dict)
    brevity_coefficient: float = 0.0

    def __post_init__(self):
        if self.kind not in ORACLE_KINDS:
            raise ValueError(f"unknown oracle kind {self.kind!r}")


class UnknownPromptError(KeyError):
    pass


def oracle_score(oracle: RewardOracle, prompt: bytes, response: bytes) -> float:
    try:
        target = oracle.targets[bytes(prompt)]
    except KeyError:
        raise UnknownPromptError(f"no target for prompt {prompt!r}") from None
    score = -float(edit_distance(response, target))
    if oracle.kind == "length_penalized_match":
        score -= oracle.brevity_coefficient * len(response)
    return score


def synthetic_corpus(n_prompts: int, seed: int, min_target_len: int = 4,
                     max_target_len: int = 16, alphabet: bytes = b"abcdefgh") -> dict:
    """Prompt -> target-answer lookup with controlled target lengths."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 11])))
    corpus = {}
    while len(corpus) < n_prompts:
        prompt = bytes(alphabet[i] for i in rng.integers(0, len(alphabet), size=4)) + b"?"
        if prompt in corpus:
            continue
        tlen = int(rng.integers(min_target_len, max_target_len + 1))
        corpus[prompt] = bytes(alphabet[i] for i in rng.integers(0, len(alphabet), size=tlen))
    return corpus


def response_bytes(seq: TokenSequence) -> bytes:
    """Response as raw bytes; special tokens have no byte rendering and
    are dropped (EOS terminates sampling, but a fresh near-uniform model
    can emit BOS mid-response)."""
    return bytes(t for t in seq.response_tokens if 0 <= t < 256)


def build_onpolicy_pairs(model: PolicyModel, oracle: RewardOracle, prompts,
                         K: int = 5, temperature: float = 0.8, seed: int = 0,
                         max_len: int = 256):
    """Sample K responses per prompt and pair the best against the worst.

    Returns (pairs, skipped) where skipped counts prompts whose K samples
    all tied at one score. Each prompt uses an independent generator seeded
    by (seed, prompt index), so output is independent of scheduling order.
    """
    if K < 2:
        raise ValueError("K must be >= 2")
    pairs = []
    skipped = 0
    for i, prompt in enumerate(prompts):
        prompt = bytes(prompt)
        ctx = [256] + Vocabulary.encode(prompt)  # BOS-prefixed
        responses = []
        scores = []
        for k in range(K):
            sub = np.random.SeedSequence([int(seed) & (2**63 - 1), i, k])
            s = int(sub.generate_state(1, np.uint64)[0] & (2**63 - 1))
            seq = sample(model, ctx, temperature, max_len, s)
            resp = response_bytes(seq)
            responses.append(resp)
            scores.append(oracle_score(oracle, prompt, resp))
        best = int(np.argmax(scores))   # earliest index wins ties
        worst = int(np.argmin(scores))
        if scores[best] == scores[worst]:
            skipped += 1
            continue
        pairs.append(PreferencePair(
            id=f"onpolicy-{i}",
            prompt=prompt,
            chosen=responses[best],
            rejected=responses[worst],
            meta={"chosen_score": scores[best], "rejected_score": scores[worst],
                  "chosen_len": len(responses[best]), "rejected_len": len(responses[worst])},
        ))
    return pairs, skipped
