"""Bounded probe functions with prescribed roughness.

Lacunary cosine sums realize any target Holder exponent over the probed
scale window; they also expose their frequency content (``modes``), which
downstream code exploits for exact semigroup evaluation. The registry
maps the names accepted by experiment configs onto constructors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "CosineSum",
    "weierstrass",
    "cosine_pack",
    "calibrated_holder_function",
    "indicator_smoothed",
    "affine_windowed",
    "REGISTRY",
    "resolve",
]


@dataclass(frozen=True)
class CosineSum:
    """f(x) = sum_k a_k cos(<xi_k, x> + p_k).

    Attributes
    ----------
    amplitudes : ndarray (K,)
    frequencies : ndarray (K, N)
    phases : ndarray (K,)
    """

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.amplitudes, float))
        F = np.atleast_2d(np.asarray(self.frequencies, float))
        p = np.atleast_1d(np.asarray(self.phases, float))
        if not (a.shape[0] == F.shape[0] == p.shape[0]):
            raise ValueError("amplitudes, frequencies, phases must align")
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "frequencies", F)
        object.__setattr__(self, "phases", p)

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    @property
    def modes(self):
        """(amplitude, frequency, phase) triples for exact pushforward."""
        return list(zip(self.amplitudes, self.frequencies, self.phases))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        args = x @ self.frequencies.T + self.phases  # (..., K)
        return np.cos(args) @ self.amplitudes

    def __add__(self, other):
        if not isinstance(other, CosineSum):
            return NotImplemented
        return CosineSum(
            np.concatenate([self.amplitudes, other.amplitudes]),
            np.vstack([self.frequencies, other.frequencies]),
            np.concatenate([self.phases, other.phases]),
        )

    def scaled(self, factor: float) -> "CosineSum":
        return CosineSum(self.amplitudes * factor, self.frequencies, self.phases)


def weierstrass(direction, beta: float, K: int = 20, base: float = 2.0,
                normalize: bool = True, phase: float = 0.0) -> CosineSum:
    """W_beta along a direction: sum_{k=0}^{K} base^(-beta k) cos(base^k u).

    The lacunary sum has classical Holder order exactly beta (for beta in
    (0, 1)) over scales down to base^-K. When ``normalize`` is set the sup
    norm is 1.
    """
    direction = np.atleast_1d(np.asarray(direction, float))
    k = np.arange(K + 1)
    amps = base ** (-beta * k)
    if normalize:
        amps = amps / amps.sum()
    freqs = base ** k
    return CosineSum(amps, np.outer(freqs, direction), np.full(K + 1, phase))


def cosine_pack(frequencies, amplitudes=None, phases=None) -> CosineSum:
    """Plain finite cosine sum; defaults to unit amplitudes, zero phases."""
    F = np.atleast_2d(np.asarray(frequencies, float))
    K = F.shape[0]
    a = np.ones(K) / K if amplitudes is None else np.asarray(amplitudes, float)
    p = np.zeros(K) if phases is None else np.asarray(phases, float)
    return CosineSum(a, F, p)


def calibrated_holder_function(aniso, beta: float, K: int = 20,
                               seed: int = 52) -> CosineSum:
    """Anisotropic C^beta function: per block h a Weierstrass sum of
    classical order beta/(1 + alpha (h-1)) along the leading block axis.

    Saturates the anisotropic beta-seminorm in every block, so it is a
    witness (not merely a member) of the class.
    """
    rng = np.random.default_rng(seed)
    total = None
    n = aniso.dec.n
    for h in range(1, n + 1):
        axis = aniso.dec.basis[:, aniso.dec.index_sets[h - 1][0]]
        beta_h = beta * aniso.block_exponent(h)
        w = weierstrass(axis, beta_h, K=K, phase=rng.uniform(0, 2 * np.pi))
        w = w.scaled(1.0 / n)
        total = w if total is None else total + w
    return total


def indicator_smoothed(center, radius: float, sharpness: float = 0.05):
    """Smoothed indicator of a ball: 1 inside, 0 outside, tanh transition."""
    center = np.atleast_1d(np.asarray(center, float))

    def phi(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x - center, axis=-1)
        return 0.5 * (1.0 + np.tanh((radius - r) / sharpness))

    return phi


def affine_windowed(slope, window: float = 20.0):
    """<slope, x> damped by a smooth window; equals the affine map near 0.

    The window is exp(-(|x|/window)^4), flat to fourth order at the
    origin, so derivatives at small |x| match the plain affine function.
    """
    slope = np.atleast_1d(np.asarray(slope, float))

    def phi(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1) / window ** 2
        return (x @ slope) * np.exp(-(r2 ** 2))

    return phi


def _build_weierstrass(params, N):
    direction = params.get("direction")
    if direction is None:
        direction = np.eye(N)[int(params.get("axis", 0))]
    return weierstrass(direction, float(params["beta"]),
                       K=int(params.get("K", 20)),
                       base=float(params.get("base", 2.0)),
                       phase=float(params.get("phase", 0.0)))


def _build_cosine_pack(params, N):
    return cosine_pack(params["frequencies"], params.get("amplitudes"),
                       params.get("phases"))


def _build_indicator(params, N):
    center = params.get("center", np.zeros(N))
    return indicator_smoothed(center, float(params.get("radius", 1.0)),
                              float(params.get("sharpness", 0.05)))


def _build_affine(params, N):
    slope = params.get("slope", np.eye(N)[0])
    return affine_windowed(slope, float(params.get("window", 20.0)))


REGISTRY = {
    "weierstrass": _build_weierstrass,
    "cosine_pack": _build_cosine_pack,
    "indicator_smoothed": _build_indicator,
    "affine_windowed": _build_affine,
}


def resolve(name: str, params: dict, N: int):
    """Instantiate a registered test function for dimension N."""
    if name not in REGISTRY:
        raise KeyError(f"unknown test function {name!r}; "
                       f"choices: {sorted(REGISTRY)}")
    return REGISTRY[name](params or {}, N)
