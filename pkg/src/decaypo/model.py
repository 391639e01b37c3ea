"""Tiny byte-level autoregressive policy model.

Architecture ("causal-mixer"): token + position embeddings, two residual
blocks that mix each position with the causal running mean of the prefix
through multiplicative gating and a logsigmoid nonlinearity, and a
zero-initialized output projection (so a fresh model is exactly uniform).
Built entirely from the autodiff primitive set so the same forward pass
serves training and inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor

VOCAB_SIZE = 258
BOS = 256
EOS = 257


class Vocabulary:
    """Byte vocabulary: 256 byte values plus BOS (256) and EOS (257)."""

    size = VOCAB_SIZE
    bos = BOS
    eos = EOS

    @staticmethod
    def encode(data: bytes) -> list[int]:
        return list(data)

    @staticmethod
    def decode(tokens) -> bytes:
        out = bytearray()
        for t in tokens:
            if not 0 <= t < 256:
                raise ValueError(f"token {t} is not a byte value")
            out.append(t)
        return bytes(out)


@dataclass
class TokenSequence:
    """A prompt (BOS-prefixed) and a response (ideally EOS-terminated)."""

    prompt_tokens: list[int]
    response_tokens: list[int]

    def __post_init__(self):
        if len(self.prompt_tokens) < 1:
            raise ValueError("prompt must be nonempty (BOS always present)")
        if len(self.response_tokens) < 1:
            raise ValueError("response must be nonempty")

    @property
    def prompt_len(self) -> int:
        return len(self.prompt_tokens)

    @property
    def response_len(self) -> int:
        return len(self.response_tokens)


def make_sequence(prompt: bytes, response: bytes, terminate: bool = True) -> TokenSequence:
    resp = Vocabulary.encode(response) + ([EOS] if terminate else [])
    return TokenSequence([BOS] + Vocabulary.encode(prompt), resp)


PARAM_NAMES = ("embed", "pos", "w1_0", "w2_0", "w3_0", "w1_1", "w2_1", "w3_1", "w_out")


@dataclass
class PolicyModel:
    dim: int = 64
    context: int = 256
    blocks: int = 2
    seed: int = 0
    params: dict = field(default=None)

    architecture = "causal-mixer"

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.dim, self.context, self.blocks, self.seed)

    def param_names(self):
        names = ["embed", "pos"]
        for b in range(self.blocks):
            names += [f"w1_{b}", f"w2_{b}", f"w3_{b}"]
        names.append("w_out")
        return names

    def copy(self) -> "PolicyModel":
        return PolicyModel(self.dim, self.context, self.blocks, self.seed,
                           {k: v.copy() for k, v in self.params.items()})


def init_params(dim: int, context: int, blocks: int, seed: int) -> dict:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    s = 1.0 / np.sqrt(dim)
    params = {
        "embed": rng.normal(0.0, s, size=(VOCAB_SIZE, dim)),
        "pos": rng.normal(0.0, s, size=(context, dim)),
    }
    for b in range(blocks):
        params[f"w1_{b}"] = rng.normal(0.0, s, size=(dim, dim))
        params[f"w2_{b}"] = rng.normal(0.0, s, size=(dim, dim))
        params[f"w3_{b}"] = rng.normal(0.0, s, size=(dim, dim))
    # Zero output head: a fresh model is exactly uniform over the vocabulary.
    params["w_out"] = np.zeros((dim, VOCAB_SIZE))
    return params


def _causal_mean(n: int) -> np.ndarray:
    L = np.tril(np.ones((n, n)))
    return L / np.arange(1, n + 1)[:, None]


def forward_logits(model: PolicyModel, tokens, tape: Tape | None = None,
                   param_tensors: dict | None = None) -> Tensor:
    """Logits for every position of ``tokens`` (n x V).

    When ``param_tensors`` is given (leaf tensors on ``tape``) the result is
    differentiable with respect to the parameters.
    """
    tokens = list(tokens)
    n = len(tokens)
    if n == 0:
        raise ValueError("empty context")
    if n > model.context:
        raise ValueError(f"context of length {n} exceeds limit {model.context}")
    if any(not 0 <= t < VOCAB_SIZE for t in tokens):
        raise ValueError("token id out of vocabulary range")
    if tape is None:
        tape = Tape()
    if param_tensors is None:
        param_tensors = {k: ad.constant(tape, v) for k, v in model.params.items()}

    onehot = np.zeros((n, VOCAB_SIZE))
    onehot[np.arange(n), tokens] = 1.0
    sel = np.eye(n, model.context)
    L = ad.constant(tape, _causal_mean(n))

    x = ad.add(ad.matmul(ad.constant(tape, onehot), param_tensors["embed"]),
               ad.matmul(ad.constant(tape, sel), param_tensors["pos"]))
    for b in range(model.blocks):
        m = ad.matmul(L, x)
        u = ad.logsigmoid(ad.matmul(ad.add(x, m), param_tensors[f"w1_{b}"]))
        x = ad.add(x, ad.add(ad.matmul(u, param_tensors[f"w2_{b}"]),
                             ad.matmul(ad.mul(x, m), param_tensors[f"w3_{b}"])))
    return ad.matmul(x, param_tensors["w_out"])


def _softmax(row: np.ndarray) -> np.ndarray:
    z = row - np.max(row)
    e = np.exp(z)
    return e / np.sum(e)


def next_token_distribution(model: PolicyModel, context) -> np.ndarray:
    """Probability distribution over the next token given ``context``."""
    logits = forward_logits(model, context).value
    return _softmax(logits[-1])


def token_logprobs(model: PolicyModel, seq: TokenSequence,
                   tape: Tape | None = None, param_tensors: dict | None = None):
    """Per-token conditional log-probabilities of the response.

    Returns a numpy array, or a differentiable tensor when ``param_tensors``
    is supplied.
    """
    tokens = seq.prompt_tokens + seq.response_tokens
    l, T = seq.prompt_len, seq.response_len
    differentiable = param_tensors is not None
    logits = forward_logits(model, tokens, tape=tape, param_tensors=param_tensors)
    sel = np.zeros((T, len(tokens)))
    sel[np.arange(T), l - 1 + np.arange(T)] = 1.0
    rows = ad.matmul(ad.constant(logits.tape, sel), logits)
    out = ad.log_softmax_gather(rows, seq.response_tokens)
    return out if differentiable else out.value


def sample_token_id(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw; the tie/rounding behavior is fixed and portable."""
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, probs.shape[0] - 1))


def sample(model: PolicyModel, prompt, temperature: float, max_len: int,
           seed: int) -> TokenSequence:
    """Autoregressive sampling; temperature 0 is argmax with lowest-id ties."""
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    prompt = list(prompt)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**63 - 1))))
    context = list(prompt)
    response: list[int] = []
    limit = min(max_len, model.context - len(prompt))
    if limit < 1:
        raise ValueError("prompt leaves no room for a response")
    for _ in range(limit):
        logits = forward_logits(model, context).value[-1]
        if temperature == 0.0:
            tok = int(np.argmax(logits))
        else:
            tok = sample_token_id(_softmax(logits / temperature), rng.random())
        response.append(tok)
        context.append(tok)
        if tok == EOS:
            break
    return TokenSequence(prompt, response)
