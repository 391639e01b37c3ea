"""Preference training on the toy model: AdamW, cosine schedule with
warmup, checkpoint container IO, NLL pretraining for building an SFT-style
init, and oracle-based win-rate evaluation."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import RewardOracle, oracle_score, response_bytes
from .losses import LossConfig, PairScore, batch_loss
from .model import (VOCAB_SIZE, PolicyModel, make_sequence, sample, token_logprobs)


@dataclass
class TrainConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    base_lr: float = 5e-7          # scaled up by lr_multiplier for desk-scale runs
    lr_multiplier: float = 1e3     # desk-scale models want ~5e-4
    batch_size: int = 32
    warmup_fraction: float = 0.10
    epochs: int = 1
    max_steps: int | None = None
    seed: int = 0
    max_response_len: int = 256
    weight_decay: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = None

    def __post_init__(self):
        if not self.base_lr * self.lr_multiplier > 0:
            raise ValueError("learning rate must be > 0")
        if not 0 <= self.warmup_fraction < 1:
            raise ValueError("warmup fraction must be in [0, 1)")

    @property
    def lr(self) -> float:
        return self.base_lr * self.lr_multiplier


def cosine_lr(step: int, total_steps: int, warmup_fraction: float, base_lr: float) -> float:
    """Linear warmup to base_lr, then a half cosine down to zero."""
    if not 0 <= step <= total_steps:
        raise ValueError("step must be in [0, total_steps]")
    warmup = math.ceil(warmup_fraction * total_steps)
    if step < warmup:
        return base_lr * step / warmup
    if total_steps == warmup:
        return base_lr
    progress = (step - warmup) / (total_steps - warmup)
    return base_lr * (1.0 + math.cos(math.pi * progress)) / 2.0


# ---------------------------------------------------------------------------
# checkpoint container: [u32 manifest length][manifest JSON][f32 LE arrays]

@dataclass
class Checkpoint:
    model: PolicyModel
    step: int = 0
    seed: int = 0
    config_hash: str = ""


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    model = ckpt.model
    names = model.param_names()
    manifest = {
        "format": "decaypo-checkpoint-v1",
        "architecture": {"kind": model.architecture, "dim": model.dim,
                         "context": model.context, "blocks": model.blocks},
        "vocab_size": VOCAB_SIZE,
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
        "step": ckpt.step,
        "seed": ckpt.seed,
        "config_hash": ckpt.config_hash,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for n in names:
            f.write(model.params[n].astype("<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        (length,) = struct.unpack("<I", f.read(4))
        manifest = json.loads(f.read(length).decode("utf-8"))
        if manifest.get("format") != "decaypo-checkpoint-v1":
            raise ValueError(f"not a checkpoint file: {path}")
        arch = manifest["architecture"]
        params = {}
        for entry in manifest["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape))
            data = np.frombuffer(f.read(4 * count), dtype="<f4")
            params[entry["name"]] = data.astype(np.float64).reshape(shape)
    model = PolicyModel(dim=arch["dim"], context=arch["context"],
                        blocks=arch["blocks"], seed=manifest["seed"], params=params)
    return Checkpoint(model=model, step=manifest["step"], seed=manifest["seed"],
                      config_hash=manifest.get("config_hash", ""))


class AdamW:
    """Adam with decoupled weight decay; update order is the fixed
    parameter-name order, so runs are bit-reproducible."""

    def __init__(self, params: dict, names, lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.names = list(names)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}

    def step(self, grads: dict, lr: float | None = None):
        if lr is None:
            lr = self.lr
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for n in self.names:
            g = grads[n]
            self.m[n] = self.b1 * self.m[n] + (1.0 - self.b1) * g
            self.v[n] = self.b2 * self.v[n] + (1.0 - self.b2) * g * g
            update = (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * self.params[n]
            self.params[n] -= lr * update


def score_pair_tensors(policy: PolicyModel, reference: PolicyModel | None,
                       pair, tape: Tape, param_tensors: dict,
                       max_response_len: int, example_id: int = 0) -> PairScore | None:
    """Differentiable PairScore for one preference pair; None on overflow."""
    chosen = pair.chosen[:max_response_len]
    rejected = pair.rejected[:max_response_len]
    seq_w = make_sequence(pair.prompt, chosen)
    seq_l = make_sequence(pair.prompt, rejected)
    for seq in (seq_w, seq_l):
        if seq.prompt_len + seq.response_len > policy.context:
            return None
    return PairScore(
        chosen_logps=token_logprobs(policy, seq_w, tape, param_tensors),
        rejected_logps=token_logprobs(policy, seq_l, tape, param_tensors),
        chosen_ref_logps=None if reference is None else token_logprobs(reference, seq_w),
        rejected_ref_logps=None if reference is None else token_logprobs(reference, seq_l),
        prompt_len=seq_w.prompt_len,
        example_id=example_id,
    )


REFERENCE_FREE_METHODS = ("d2po_ref_free", "simpo", "orpo")


def _batch_gradients(policy, reference, batch, cfg: TrainConfig):
    """One forward/backward over a batch; returns (loss, margin, grads) or
    None when every example overflowed the context."""
    tape = Tape()
    names = policy.param_names()
    leaves = {n: ad.leaf(tape, policy.params[n]) for n in names}
    ref = None if cfg.loss.method in REFERENCE_FREE_METHODS else reference
    scores = []
    skipped = 0
    for pair, eid in batch:
        score = score_pair_tensors(policy, ref, pair, tape, leaves,
                                   cfg.max_response_len, example_id=eid)
        if score is None:
            skipped += 1
            continue
        scores.append(score)
    if not scores:
        return None, skipped
    loss = batch_loss(scores, cfg.loss)
    grads_by_tensor = ad.gradients(loss, [leaves[n] for n in names])
    grads = {n: grads_by_tensor[leaves[n]] for n in names}
    margins = [float(np.sum(s.chosen_logps.value) - np.sum(s.rejected_logps.value))
               for s in scores]
    return (float(loss.value), float(np.mean(margins)), grads), skipped


def grad_norm(grads: dict, names) -> float:
    return float(math.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in names)))


def train(cfg: TrainConfig, pairs, init: Checkpoint,
          reference: Checkpoint | None = None):
    """Run preference optimization; returns (Checkpoint, metrics list).

    Metrics is one dict per optimizer step: step, loss, margin, grad_norm,
    lr, skipped. Fully deterministic in (cfg, pairs, init, reference).
    """
    if cfg.loss.method in REFERENCE_FREE_METHODS:
        ref_model = None
    else:
        if reference is None:
            raise ValueError(f"method {cfg.loss.method} requires a reference checkpoint")
        ref_model = reference.model
    policy = init.model.copy()
    names = policy.param_names()
    opt = AdamW(policy.params, names, cfg.lr, (cfg.adam_beta1, cfg.adam_beta2),
                cfg.adam_eps, cfg.weight_decay)
    n_batches = max(1, math.ceil(len(pairs) / cfg.batch_size))
    total_steps = cfg.epochs * n_batches
    if cfg.max_steps is not None:
        total_steps = min(total_steps, cfg.max_steps) if cfg.epochs else cfg.max_steps
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(cfg.seed) & (2**63 - 1), 0])))  # data substream
    metrics = []
    step = 0
    epoch = 0
    while step < total_steps:
        order = rng.permutation(len(pairs))
        for b in range(n_batches):
            if step >= total_steps:
                break
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            batch = [(pairs[i], int(i)) for i in idx]
            result, skipped = _batch_gradients(policy, ref_model, batch, cfg)
            lr = cosine_lr(step, total_steps, cfg.warmup_fraction, cfg.lr)
            if result is None:
                metrics.append({"step": step, "loss": None, "margin": None,
                                "grad_norm": 0.0, "lr": lr, "skipped": skipped})
                step += 1
                continue
            loss, margin, grads = result
            gn = grad_norm(grads, names)
            if cfg.grad_clip is not None and gn > cfg.grad_clip:
                scale = cfg.grad_clip / gn
                grads = {n: g * scale for n, g in grads.items()}
            opt.step(grads, lr=lr)
            metrics.append({"step": step, "loss": loss, "margin": margin,
                            "grad_norm": gn, "lr": lr, "skipped": skipped})
            step += 1
        epoch += 1
    if step == 0:
        return Checkpoint(policy, init.step, init.seed, init.config_hash), metrics
    return Checkpoint(policy, init.step + step, cfg.seed), metrics


def pretrain_nll(model: PolicyModel, corpus: dict, steps: int, lr: float,
                 batch_size: int, seed: int) -> PolicyModel:
    """Plain NLL training on (prompt -> target) items; builds the SFT init."""
    model = model.copy()
    names = model.param_names()
    opt = AdamW(model.params, names, lr)
    items = list(corpus.items())
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(seed) & (2**63 - 1), 1])))
    for step in range(steps):
        idx = rng.integers(0, len(items), size=batch_size)
        tape = Tape()
        leaves = {n: ad.leaf(tape, model.params[n]) for n in names}
        total = None
        for i in idx:
            prompt, target = items[int(i)]
            seq = make_sequence(prompt, target)
            lp = token_logprobs(model, seq, tape, leaves)
            nll = ad.scale(ad.weighted_sum(lp, np.full(seq.response_len,
                                                       1.0 / seq.response_len)), -1.0)
            total = nll if total is None else ad.add(total, nll)
        loss = ad.scale(total, 1.0 / batch_size)
        grads_by_tensor = ad.gradients(loss, [leaves[n] for n in names])
        opt.step({n: grads_by_tensor[leaves[n]] for n in names}, lr=lr)
    return model


def evaluate_winrate(candidate: Checkpoint, baseline: Checkpoint,
                     oracle: RewardOracle, prompts, temperature: float,
                     seed: int, max_len: int = 256):
    """Paired-seed sampling; (win, tie, lose) for the candidate."""
    win = tie = lose = 0
    for i, prompt in enumerate(prompts):
        prompt = bytes(prompt)
        ctx = [256] + list(prompt)
        sub = np.random.SeedSequence([int(seed) & (2**63 - 1), 2, i])
        s = int(sub.generate_state(1, np.uint64)[0] & (2**63 - 1))
        resp_c = response_bytes(sample(candidate.model, ctx, temperature, max_len, s))
        resp_b = response_bytes(sample(baseline.model, ctx, temperature, max_len, s))
        sc = oracle_score(oracle, prompt, resp_c)
        sb = oracle_score(oracle, prompt, resp_b)
        if sc > sb:
            win += 1
        elif sc == sb:
            tie += 1
        else:
            lose += 1
    return win, tie, lose
