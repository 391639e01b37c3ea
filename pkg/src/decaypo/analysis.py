"""Diagnostic analyses over models and preference data, emitted as CSV:
per-position KL between two models, reference-margin density, realized
probability per position, and loss binned by chosen/rejected length gap."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PreferencePair
from .losses import LossConfig, PairScore, pair_loss
from .model import PolicyModel, TokenSequence, forward_logits, make_sequence, token_logprobs


@dataclass
class PositionCurve:
    positions: list[int]
    values: list[float]

    def __post_init__(self):
        if list(self.positions) != sorted(set(self.positions)):
            raise ValueError("positions must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("curve values must be finite")


@dataclass
class DensityHistogram:
    centers: np.ndarray
    density: np.ndarray
    bin_width: float


def _position_distribution_logs(model: PolicyModel, seq: TokenSequence) -> np.ndarray:
    """Log next-token distributions at every response position (T x V)."""
    tokens = seq.prompt_tokens + seq.response_tokens
    logits = forward_logits(model, tokens).value
    rows = logits[seq.prompt_len - 1: seq.prompt_len - 1 + seq.response_len]
    m = np.max(rows, axis=1, keepdims=True)
    lse = m + np.log(np.sum(np.exp(rows - m), axis=1, keepdims=True))
    return rows - lse


def kl_categorical(logp: np.ndarray, logq: np.ndarray) -> float:
    """KL(p || q) from log-distributions; tiny negative roundoff clamped."""
    return max(0.0, float(np.sum(np.exp(logp) * (logp - logq))))


def kl_per_position(policy: PolicyModel, reference: PolicyModel, samples,
                    max_pos: int) -> PositionCurve:
    """Survivor-mean KL(policy || reference) at each response position."""
    if not samples:
        raise ValueError("kl_per_position requires samples")
    if policy.context != reference.context:
        raise ValueError("models must share context length")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for seq in samples:
        lp = _position_distribution_logs(policy, seq)
        lq = _position_distribution_logs(reference, seq)
        for p in range(min(seq.response_len, max_pos + 1)):
            sums[p] = sums.get(p, 0.0) + kl_categorical(lp[p], lq[p])
            counts[p] = counts.get(p, 0) + 1
    positions = sorted(sums)
    return PositionCurve(positions, [sums[p] / counts[p] for p in positions])


def prob_per_position(model: PolicyModel, samples, max_pos: int) -> PositionCurve:
    """Survivor-mean realized next-token probability per response position."""
    if not samples:
        raise ValueError("prob_per_position requires samples")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    for seq in samples:
        probs = np.exp(token_logprobs(model, seq))
        for p in range(min(seq.response_len, max_pos + 1)):
            sums[p] = sums.get(p, 0.0) + float(probs[p])
            counts[p] = counts.get(p, 0) + 1
    positions = sorted(sums)
    return PositionCurve(positions, [sums[p] / counts[p] for p in positions])


def sequence_logprob(model: PolicyModel, prompt: bytes, response: bytes) -> float:
    return float(np.sum(token_logprobs(model, make_sequence(prompt, response))))


def ref_margin_density(reference: PolicyModel, pairs, bins: int) -> DensityHistogram:
    """Histogram density of chosen-minus-rejected sequence log-prob margins
    under the reference model."""
    if not pairs:
        raise ValueError("ref_margin_density requires pairs")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    margins = np.array([
        sequence_logprob(reference, p.prompt, p.chosen)
        - sequence_logprob(reference, p.prompt, p.rejected)
        for p in pairs])
    lo, hi = float(np.min(margins)), float(np.max(margins))
    if hi == lo:
        # degenerate single spike; give it one unit-width bin
        lo, hi = lo - 0.5, hi + 0.5
    density, edges = np.histogram(margins, bins=bins, range=(lo, hi), density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return DensityHistogram(centers=centers, density=density,
                            bin_width=float(edges[1] - edges[0]))


@dataclass
class LengthGapRow:
    gap_lo: float
    gap_hi: float
    mean_loss: float
    count: int


def loss_by_length_gap(cfg: LossConfig, scored_pairs, gap_bins) -> list[LengthGapRow]:
    """Mean configured loss per length-gap (T_w - T_l) bin.

    gap_bins is a sorted list of integer boundaries; gaps outside all bins
    land in an overflow row."""
    boundaries = list(gap_bins)
    if boundaries != sorted(boundaries) or len(boundaries) < 2:
        raise ValueError("gap_bins must be >= 2 sorted boundaries")
    n_bins = len(boundaries) - 1
    sums = np.zeros(n_bins + 1)
    counts = np.zeros(n_bins + 1, dtype=np.int64)
    for score in scored_pairs:
        gap = np.shape(score.chosen_logps)[0] - np.shape(score.rejected_logps)[0]
        idx = n_bins  # overflow
        for b in range(n_bins):
            if boundaries[b] <= gap < boundaries[b + 1]:
                idx = b
                break
        sums[idx] += pair_loss(score, cfg)
        counts[idx] += 1
    rows = []
    for b in range(n_bins):
        if counts[b]:
            rows.append(LengthGapRow(boundaries[b], boundaries[b + 1],
                                     sums[b] / counts[b], int(counts[b])))
    if counts[n_bins]:
        rows.append(LengthGapRow(float("-inf"), float("inf"),
                                 sums[n_bins] / counts[n_bins], int(counts[n_bins])))
    return rows


def write_curve_csv(path, curve: PositionCurve, comments=()) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in comments:
            f.write(f"# {c}\n")
        f.write("position,value\n")
        for p, v in zip(curve.positions, curve.values):
            f.write(f"{p},{v!r}\n")


def read_curve_csv(path) -> PositionCurve:
    positions, values = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line == "position,value":
                continue
            p, v = line.split(",")
            positions.append(int(p))
            values.append(float(v))
    return PositionCurve(positions, values)


def write_histogram_csv(path, hist: DensityHistogram, comments=()) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for c in comments:
            f.write(f"# {c}\n")
        f.write("value,density\n")
        for c_, d in zip(hist.centers, hist.density):
            f.write(f"{float(c_)!r},{float(d)!r}\n")


def read_histogram_csv(path) -> DensityHistogram:
    centers, density = [], []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#") or line == "value,density":
                continue
            c, d = line.split(",")
            centers.append(float(c))
            density.append(float(d))
    centers = np.asarray(centers)
    width = float(centers[1] - centers[0]) if len(centers) > 1 else 1.0
    return DensityHistogram(np.asarray(centers), np.asarray(density), width)
