"""Pairwise preference losses over per-token log-probability records.

All losses accept a :class:`PairScore` whose arrays may be plain numpy
arrays or autodiff tensors; when tensors are supplied the returned loss is
a tensor on the same tape, otherwise a float.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .schedules import UNIFORM, DecaySchedule, weights

METHODS = ("d2po", "dpo", "d2po_ref_free", "simpo", "ipo", "kto", "orpo", "sampo")


@dataclass
class PairScore:
    """Per-token log-probabilities for one preference pair.

    Reference log-probs are absent (None) in reference-free mode. Arrays may
    be numpy arrays or autodiff tensors; reference arrays are always treated
    as constants.
    """

    chosen_logps: object
    rejected_logps: object
    chosen_ref_logps: object = None
    rejected_ref_logps: object = None
    prompt_len: int = 0
    example_id: int = 0


@dataclass
class LossConfig:
    method: str = "d2po"
    beta: float = 0.1
    schedule: DecaySchedule = field(default_factory=DecaySchedule)
    tau: float = 0.1
    lambda_w: float = 1.0
    lambda_l: float = 1.0
    lambda_orpo: float = 1.0
    target_margin: float = 0.0
    sampo_seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown loss method {self.method!r}")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")


def _tape_of(*arrays):
    for a in arrays:
        if isinstance(a, Tensor):
            return a.tape, True
    return Tape(), False


def _value(x):
    return float(x.value) if isinstance(x, Tensor) else float(x)


def _maybe_value(loss: Tensor, had_tensor: bool):
    return loss if had_tensor else float(loss.value)


def _len_of(x) -> int:
    return int(x.value.shape[0]) if isinstance(x, Tensor) else int(np.shape(x)[0])


def _require_ref(score: PairScore):
    if score.chosen_ref_logps is None or score.rejected_ref_logps is None:
        raise ValueError("reference log-probs are required for this loss")


def _ratios(tape, logps, ref_logps):
    x = ad.as_tensor(tape, logps)
    if ref_logps is None:
        return x
    r = np.asarray(ref_logps.value if isinstance(ref_logps, Tensor) else ref_logps)
    return ad.sub(x, ad.constant(tape, r))


def _decayed_margin(score: PairScore, cfg: LossConfig, use_ref: bool) -> tuple:
    tape, had_tensor = _tape_of(score.chosen_logps, score.rejected_logps)
    cw = _ratios(tape, score.chosen_logps, score.chosen_ref_logps if use_ref else None)
    cl = _ratios(tape, score.rejected_logps, score.rejected_ref_logps if use_ref else None)
    w_w = weights(cfg.schedule, _len_of(score.chosen_logps), score.prompt_len)
    w_l = weights(cfg.schedule, _len_of(score.rejected_logps), score.prompt_len)
    margin = ad.sub(ad.scale(ad.weighted_sum(cw, w_w), cfg.beta),
                    ad.scale(ad.weighted_sum(cl, w_l), cfg.beta))
    return margin, had_tensor


def d2po_loss(score: PairScore, cfg: LossConfig):
    """-log sigma of the decay-weighted log-ratio margin."""
    _require_ref(score)
    margin, had_tensor = _decayed_margin(score, cfg, use_ref=True)
    return _maybe_value(-ad.logsigmoid(margin), had_tensor)


def d2po_ref_free_loss(score: PairScore, cfg: LossConfig):
    """Same as d2po_loss with raw log-probs in place of log-ratios."""
    margin, had_tensor = _decayed_margin(score, cfg, use_ref=False)
    return _maybe_value(-ad.logsigmoid(margin), had_tensor)


def dpo_loss(score: PairScore, cfg: LossConfig):
    """Vanilla DPO: the uniform-schedule special case of d2po_loss."""
    return d2po_loss(score, replace(cfg, schedule=UNIFORM))


def simpo_loss(score: PairScore, cfg: LossConfig):
    tape, had_tensor = _tape_of(score.chosen_logps, score.rejected_logps)
    cw = ad.as_tensor(tape, score.chosen_logps)
    cl = ad.as_tensor(tape, score.rejected_logps)
    Tw, Tl = _len_of(cw), _len_of(cl)
    mean_w = ad.weighted_sum(cw, np.full(Tw, 1.0 / Tw))
    mean_l = ad.weighted_sum(cl, np.full(Tl, 1.0 / Tl))
    arg = ad.sub(ad.sub(ad.scale(mean_w, cfg.beta), ad.scale(mean_l, cfg.beta)),
                 ad.constant(tape, cfg.target_margin))
    return _maybe_value(-ad.logsigmoid(arg), had_tensor)


def ipo_loss(score: PairScore, cfg: LossConfig):
    _require_ref(score)
    if not cfg.tau > 0:
        raise ValueError("ipo requires tau > 0")
    tape, had_tensor = _tape_of(score.chosen_logps, score.rejected_logps)
    cw = _ratios(tape, score.chosen_logps, score.chosen_ref_logps)
    cl = _ratios(tape, score.rejected_logps, score.rejected_ref_logps)
    h = ad.sub(ad.sub(ad.arraysum(cw), ad.arraysum(cl)),
               ad.constant(tape, 1.0 / (2.0 * cfg.tau)))
    return _maybe_value(ad.square(h), had_tensor)


def _seq_ratio(tape, logps, ref_logps):
    return ad.arraysum(_ratios(tape, logps, ref_logps))


def kto_loss(batch, cfg: LossConfig, z_ref: float):
    """Mean KTO loss over a batch of (PairScore, chosen_is_desirable) items.

    z_ref is a constant (no gradient flows through it), clamped at 0.
    """
    if not batch:
        raise ValueError("kto_loss requires a nonempty batch")
    z = max(0.0, float(z_ref))
    arrays = []
    for score, _label in batch:
        arrays.extend([score.chosen_logps, score.rejected_logps])
    tape, had_tensor = _tape_of(*arrays)
    total = None
    for score, label in batch:
        _require_ref(score)
        rw = _seq_ratio(tape, score.chosen_logps, score.chosen_ref_logps)
        rl = _seq_ratio(tape, score.rejected_logps, score.rejected_ref_logps)
        if not label:
            rw, rl = rl, rw
        term_w = ad.scale(ad.sigmoid(ad.sub(ad.scale(rw, cfg.beta),
                                            ad.constant(tape, z))), -cfg.lambda_w)
        term_l = ad.scale(ad.sigmoid(ad.sub(ad.constant(tape, z),
                                            ad.scale(rl, cfg.beta))), cfg.lambda_l)
        item = ad.add(term_w, term_l)
        total = item if total is None else ad.add(total, item)
    return _maybe_value(ad.scale(total, 1.0 / len(batch)), had_tensor)


def estimate_z_ref(batch, cfg: LossConfig) -> float:
    """Batch estimate of the KTO KL anchor.

    Mean over rejected responses of beta * (sequence log-ratio) / T,
    clamped at 0. Treated as a detached constant by kto_loss.
    """
    vals = []
    for score, _label in batch:
        _require_ref(score)
        rl = np.asarray(score.rejected_logps.value if isinstance(score.rejected_logps, Tensor)
                        else score.rejected_logps, dtype=np.float64)
        rr = np.asarray(score.rejected_ref_logps.value if isinstance(score.rejected_ref_logps, Tensor)
                        else score.rejected_ref_logps, dtype=np.float64)
        vals.append(cfg.beta * float(np.sum(rl - rr)) / rl.shape[0])
    return max(0.0, float(np.mean(vals)))


def orpo_loss(score: PairScore, cfg: LossConfig):
    tape, had_tensor = _tape_of(score.chosen_logps, score.rejected_logps)
    cw = ad.as_tensor(tape, score.chosen_logps)
    cl = ad.as_tensor(tape, score.rejected_logps)
    Tw, Tl = _len_of(cw), _len_of(cl)
    mean_w = ad.weighted_sum(cw, np.full(Tw, 1.0 / Tw))
    mean_l = ad.weighted_sum(cl, np.full(Tl, 1.0 / Tl))
    if float(mean_w.value) >= 0.0 or float(mean_l.value) >= 0.0:
        raise ValueError("orpo requires strictly negative mean log-probs "
                         "(odds are singular at probability 1)")
    # log odds(p) with p = exp(mean logp):  m - log(1 - e^m)
    lo_w = ad.sub(mean_w, ad.log1mexp(mean_w))
    lo_l = ad.sub(mean_l, ad.log1mexp(mean_l))
    penalty = ad.scale(ad.logsigmoid(ad.sub(lo_w, lo_l)), -cfg.lambda_orpo)
    nll = ad.scale(mean_w, -1.0)
    return _maybe_value(ad.add(nll, penalty), had_tensor)


def sampo_indices(T_w: int, T_l: int, sampo_seed: int, example_id: int):
    """Deterministic token index sets for SamPO subsampling.

    The longer response is subsampled to T_m = min(T_w, T_l) indices drawn
    uniformly without replacement; the shorter keeps all its tokens.
    """
    T_m = min(T_w, T_l)
    idx_w = np.arange(T_w)
    idx_l = np.arange(T_l)
    if T_w != T_l:
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([int(sampo_seed) & (2**63 - 1), int(example_id) & (2**63 - 1)])))
        if T_w > T_m:
            idx_w = np.sort(rng.choice(T_w, size=T_m, replace=False))
        else:
            idx_l = np.sort(rng.choice(T_l, size=T_m, replace=False))
    return idx_w, idx_l


def sampo_loss(score: PairScore, cfg: LossConfig, example_id: int | None = None):
    _require_ref(score)
    if example_id is None:
        example_id = score.example_id
    tape, had_tensor = _tape_of(score.chosen_logps, score.rejected_logps)
    cw = _ratios(tape, score.chosen_logps, score.chosen_ref_logps)
    cl = _ratios(tape, score.rejected_logps, score.rejected_ref_logps)
    Tw, Tl = _len_of(cw), _len_of(cl)
    idx_w, idx_l = sampo_indices(Tw, Tl, cfg.sampo_seed, example_id)
    mask_w = np.zeros(Tw)
    mask_w[idx_w] = 1.0
    mask_l = np.zeros(Tl)
    mask_l[idx_l] = 1.0
    margin = ad.sub(ad.scale(ad.weighted_sum(cw, mask_w), cfg.beta),
                    ad.scale(ad.weighted_sum(cl, mask_l), cfg.beta))
    return _maybe_value(-ad.logsigmoid(margin), had_tensor)


_PAIRWISE = {
    "d2po": d2po_loss,
    "dpo": dpo_loss,
    "d2po_ref_free": d2po_ref_free_loss,
    "simpo": simpo_loss,
    "ipo": ipo_loss,
    "orpo": orpo_loss,
    "sampo": sampo_loss,
}


def pair_loss(score: PairScore, cfg: LossConfig):
    """Dispatch a single-pair loss by cfg.method (KTO is batch-native)."""
    if cfg.method == "kto":
        batch = [(score, True)]
        return kto_loss(batch, cfg, estimate_z_ref(batch, cfg))
    return _PAIRWISE[cfg.method](score, cfg)


def batch_loss(scores, cfg: LossConfig):
    """Arithmetic mean of per-example losses in index order.

    KTO is handled batch-natively with z_ref estimated from the batch.
    """
    if not scores:
        raise ValueError("batch_loss requires a nonempty batch")
    if cfg.method == "kto":
        batch = [(s, True) for s in scores]
        return kto_loss(batch, cfg, estimate_z_ref(batch, cfg))
    losses = [_PAIRWISE[cfg.method](s, cfg) for s in scores]
    if isinstance(losses[0], Tensor):
        total = losses[0]
        for item in losses[1:]:
            total = ad.add(total, item)
        return ad.scale(total, 1.0 / len(losses))
    return float(np.mean(losses))
