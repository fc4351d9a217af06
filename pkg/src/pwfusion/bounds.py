"""Closed-form maximal predictive power of three weighting schemes in the
two-modality binary case, plus a numerical verifier of their ordering.

For a linear score s_m = sum_d theta_d * mu_m[d] the predicted probability of
the positive class is the sigmoid of a weighted combination of the two
modality scores.  Over the feasible weights (per-element convex combinations
omega_1[d] + omega_2[d] = 1, entries in [0, 1]) the best achievable values
are

    uniform      : sigmoid((s_1 + s_2) / 2)
    per-modality : sigmoid(max(s_1, s_2))
    per-element  : sigmoid(sum_d max(theta_d mu_1[d], theta_d mu_2[d]))

and per-element >= per-modality >= uniform always holds: finer weighting
never has less headroom.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np


@dataclass
class PowerInstance:
    theta: np.ndarray
    mu1: np.ndarray
    mu2: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        self.mu1 = np.asarray(self.mu1, dtype=np.float64).ravel()
        self.mu2 = np.asarray(self.mu2, dtype=np.float64).ravel()
        if not (self.theta.shape == self.mu1.shape == self.mu2.shape):
            raise ValueError("theta, mu1, mu2 must have identical length")
        if not (np.isfinite(self.theta).all() and np.isfinite(self.mu1).all()
                and np.isfinite(self.mu2).all()):
            raise ValueError("instance entries must be finite")


@dataclass
class PowerTriple:
    p_uniform: float
    sup_coarse: float
    sup_fine: float


@dataclass
class OrderingReport:
    trials: int
    violations: int
    worst_gap: float


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


def power_triple(inst: PowerInstance) -> PowerTriple:
    a = inst.theta * inst.mu1
    b = inst.theta * inst.mu2
    s1, s2 = float(a.sum()), float(b.sum())
    return PowerTriple(
        p_uniform=_sigmoid(0.5 * (s1 + s2)),
        sup_coarse=_sigmoid(max(s1, s2)),
        sup_fine=_sigmoid(float(np.maximum(a, b).sum())),
    )


def verify_ordering(n_trials: int, d_range: tuple[int, int] = (1, 8),
                    seed: int = 0, tolerance: float = 1e-12) -> OrderingReport:
    """Sample random instances (standard normal entries, dimension uniform in
    d_range) and count violations of sup_fine >= sup_coarse >= p_uniform
    beyond the tolerance.  worst_gap is the smallest margin seen (negative
    would be a violation)."""
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    lo, hi = d_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid dimension range {d_range}")
    rng = np.random.default_rng(seed)
    violations = 0
    worst = np.inf
    for _ in range(n_trials):
        d = int(rng.integers(lo, hi + 1))
        inst = PowerInstance(rng.standard_normal(d), rng.standard_normal(d),
                             rng.standard_normal(d))
        triple = power_triple(inst)
        margin = min(triple.sup_fine - triple.sup_coarse,
                     triple.sup_coarse - triple.p_uniform)
        worst = min(worst, margin)
        if margin < -tolerance:
            violations += 1
    return OrderingReport(trials=n_trials, violations=violations,
                          worst_gap=float(worst))


_GRID_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _weight_grid(d: int, points: int) -> np.ndarray:
    key = (d, points)
    if key not in _GRID_CACHE:
        axis = np.linspace(0.0, 1.0, points)
        _GRID_CACHE[key] = np.array(list(product(axis, repeat=d)))
    return _GRID_CACHE[key]


def grid_search_fine(inst: PowerInstance, step: float = 0.01) -> float:
    """Brute-force maximum of the per-element weighting over the grid
    {0, step, ..., 1}^D of first-modality weights (second = complement)."""
    d = inst.theta.shape[0]
    points = int(round(1.0 / step)) + 1
    grid = _weight_grid(d, points)
    a = inst.theta * inst.mu1
    b = inst.theta * inst.mu2
    scores = grid @ (a - b) + b.sum()
    return _sigmoid(float(scores.max()))
