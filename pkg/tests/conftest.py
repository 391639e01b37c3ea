import numpy as np
import pytest

from decaypo.losses import PairScore


def random_pairscore(rng, with_ref=True, max_len=8, prompt_len=None):
    """A random valid PairScore with strictly negative log-probs."""
    T_w = int(rng.integers(1, max_len + 1))
    T_l = int(rng.integers(1, max_len + 1))

    def logps(n):
        return -np.abs(rng.normal(1.0, 0.7, size=n)) - 1e-3

    return PairScore(
        chosen_logps=logps(T_w),
        rejected_logps=logps(T_l),
        chosen_ref_logps=logps(T_w) if with_ref else None,
        rejected_ref_logps=logps(T_l) if with_ref else None,
        prompt_len=int(rng.integers(0, 6)) if prompt_len is None else prompt_len,
        example_id=int(rng.integers(0, 1000)),
    )


def central_difference(f, x, eps=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xp[idx] += eps
        xm = x.copy()
        xm[idx] -= eps
        g[idx] = (f(xp) - f(xm)) / (2.0 * eps)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
