"""Anisotropic distance, third differences, and Holder exponent probes.

Block h of the Kalman decomposition carries the exponent
1/(1 + alpha*(h-1)); the distance sums block-wise Euclidean norms raised
to these powers, and the time-space distance adds |s-t|^(1/alpha).
Regularity along a block is probed through third differences, which
detect orders up to (and excluding) 3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateFit
from .kalman import KalmanDecomposition

__all__ = [
    "Anisotropy",
    "HolderEstimate",
    "distance",
    "parabolic_distance",
    "third_difference",
    "estimate_holder",
    "block_directions",
    "default_offsets",
]

_DIRECTION_SEED = 20231117
_TINY = 1e-300


@dataclass(frozen=True)
class Anisotropy:
    """A Kalman decomposition together with a stability index alpha in (0, 2)."""

    dec: KalmanDecomposition
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")

    @property
    def exponents(self) -> np.ndarray:
        """Block exponents 1/(1 + alpha*(h-1)), strictly decreasing in h."""
        h = np.arange(1, self.dec.n + 1)
        return 1.0 / (1.0 + self.alpha * (h - 1))

    def block_exponent(self, h: int) -> float:
        return 1.0 / (1.0 + self.alpha * (h - 1))

    def intrinsic_time_scale(self, h: int) -> float:
        """Exponent s with block-h spatial scale t^s at time t."""
        return (1.0 + self.alpha * (h - 1)) / self.alpha


def distance(aniso: Anisotropy, x, y) -> float:
    """Sum over blocks of |E_h (x - y)|^(1/(1 + alpha (h-1)))."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    total = 0.0
    for h, E in enumerate(aniso.dec.projections, start=1):
        r = np.linalg.norm(E @ diff)
        total += r ** aniso.block_exponent(h)
    return total


def parabolic_distance(aniso: Anisotropy, p, q) -> float:
    """Time-space distance |s - t|^(1/alpha) + d(x, x')."""
    (s, x), (t, y) = p, q
    return abs(s - t) ** (1.0 / aniso.alpha) + distance(aniso, x, y)


def third_difference(phi, x0, z) -> float:
    """phi(x0+3z) - 3 phi(x0+2z) + 3 phi(x0+z) - phi(x0).

    Annihilates polynomials of degree <= 2. ``phi`` must accept a stacked
    (4, N) array of points (all built-in test functions do).
    """
    x0 = np.asarray(x0, dtype=float)
    z = np.asarray(z, dtype=float)
    pts = x0[None, :] + np.arange(4)[:, None] * z[None, :]
    vals = np.asarray(phi(pts), dtype=float)
    return float(vals[3] - 3.0 * vals[2] + 3.0 * vals[1] - vals[0])


def block_directions(dec: KalmanDecomposition, h: int, n_random: int = 8,
                     seed: int = _DIRECTION_SEED) -> np.ndarray:
    """Deterministic probe directions spanning block h.

    The block axes plus ``n_random`` seeded pseudo-random unit vectors
    inside E_h(R^N); reproducible across runs by construction.
    """
    cols = dec.index_sets[h - 1]
    U = dec.basis[:, cols]  # (N, d_h)
    d_h = U.shape[1]
    dirs = [U[:, j] for j in range(d_h)]
    if d_h > 1:
        rng = np.random.default_rng(seed + h)
        for _ in range(n_random):
            w = rng.standard_normal(d_h)
            w /= np.linalg.norm(w)
            dirs.append(U @ w)
    return np.array(dirs)


def default_offsets(n_scales: int = 24, lo: float = 2.0 ** -16,
                    hi: float = 2.0 ** -2) -> np.ndarray:
    """Log-spaced scale grid, defaulting to 24 offsets in [2^-16, 2^-2]."""
    return np.geomspace(lo, hi, n_scales)


@dataclass(frozen=True)
class HolderEstimate:
    """Fitted third-difference scaling of a function along one block.

    ``exponent_fit`` is the least-squares slope of log max|D3| against
    log|z|; ``seminorm`` is the largest ratio |D3|/|z|^gamma at the fitted
    gamma, ``seminorm_at_target`` the same at a caller-supplied target
    exponent (NaN when no target was given). ``trivial`` marks functions
    whose third differences vanish at every probe.
    """

    block: int
    exponent_fit: float
    fit_residual: float
    seminorm: float
    seminorm_at_target: float
    target_exponent: float
    probe_count: int
    scales: np.ndarray
    max_third_diff: np.ndarray
    trivial: bool = False

    def rows(self):
        """JSON-friendly per-scale rows {block, scale, max_third_diff}."""
        return [
            {"block": self.block, "scale": float(s), "max_third_diff": float(v)}
            for s, v in zip(self.scales, self.max_third_diff)
        ]

    def summary(self) -> dict:
        return {
            "block": self.block,
            "exponent_fit": float(self.exponent_fit),
            "residual": float(self.fit_residual),
            "seminorm": float(self.seminorm),
            "seminorm_at_target": float(self.seminorm_at_target),
            "target_exponent": float(self.target_exponent),
            "probe_count": self.probe_count,
            "trivial": self.trivial,
        }


def _default_x0_samples(N: int, count: int = 8, seed: int = 914) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.5, 1.5, size=(count, N))


def estimate_holder(phi, aniso: Anisotropy, h: int, offsets=None,
                    x0_samples=None, target_exponent=None,
                    directions=None) -> HolderEstimate:
    """Estimate the Holder order of ``phi`` along block h.

    At each scale the third difference is evaluated over a deterministic
    set of unit directions in E_h(R^N) and base points; the per-scale
    maximum is fitted against the scale on log-log axes. The sup over all
    of R^N is thereby replaced by a finite, reproducible probe sup.

    Raises
    ------
    DegenerateFit
        If fewer than 3 scales are supplied.
    """
    offsets = default_offsets() if offsets is None else np.asarray(offsets, float)
    if offsets.size < 3:
        raise DegenerateFit(f"need >= 3 scales, got {offsets.size}")
    if np.any(offsets <= 0) or np.any(offsets > 1):
        raise ValueError("offsets must lie in (0, 1]")
    if x0_samples is None:
        x0_samples = _default_x0_samples(aniso.dec.N)
    x0_samples = np.atleast_2d(np.asarray(x0_samples, float))
    if directions is None:
        directions = block_directions(aniso.dec, h)
    directions = np.atleast_2d(np.asarray(directions, float))

    # phi on the full (scan, 4, N) probe stack in one vectorized call.
    steps = np.arange(4.0)
    maxima = np.empty(offsets.size)
    for k, s in enumerate(offsets):
        z = s * directions  # (n_dir, N)
        pts = (x0_samples[:, None, None, :]
               + steps[None, None, :, None] * z[None, :, None, :])
        vals = np.asarray(phi(pts.reshape(-1, aniso.dec.N)), dtype=float)
        vals = vals.reshape(x0_samples.shape[0], directions.shape[0], 4)
        d3 = vals[..., 3] - 3.0 * vals[..., 2] + 3.0 * vals[..., 1] - vals[..., 0]
        maxima[k] = np.abs(d3).max()

    probe_count = int(offsets.size * x0_samples.shape[0] * directions.shape[0])
    target = np.nan if target_exponent is None else float(target_exponent)

    if maxima.max() < _TINY:
        return HolderEstimate(
            block=h, exponent_fit=np.nan, fit_residual=0.0, seminorm=0.0,
            seminorm_at_target=0.0 if target_exponent is not None else np.nan,
            target_exponent=target, probe_count=probe_count,
            scales=offsets, max_third_diff=maxima, trivial=True)

    logs = np.log(np.maximum(maxima, _TINY))
    logx = np.log(offsets)
    slope, intercept = np.polyfit(logx, logs, 1)
    residual = float(np.sqrt(np.mean((logs - (slope * logx + intercept)) ** 2)))
    seminorm = float(np.max(maxima / offsets ** slope))
    sem_target = (float(np.max(maxima / offsets ** target))
                  if target_exponent is not None else np.nan)

    return HolderEstimate(
        block=h, exponent_fit=float(slope), fit_residual=residual,
        seminorm=seminorm, seminorm_at_target=sem_target,
        target_exponent=target, probe_count=probe_count,
        scales=offsets, max_third_diff=maxima)
