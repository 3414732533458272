"""Empirical verification of the quantitative regularity claims.

Each check produces an ExponentReport: a fitted log-log slope against the
predicted exponent, with the fit residual and the exact probe
configuration hash (reruns with the same seed are bit-identical). The
claims covered: directional gradient decay of the semigroup in time,
continuity between anisotropic Holder classes, the elliptic/parabolic
regularity bootstrap of order alpha, and density tail behaviour under
the self-similar rescaling.

Upper-bound claims are verified two-sided only for the canonical rough
inputs (lacunary cosine sums), where saturation is expected; otherwise
one-sided. A finite harness exhibits witnesses, not proofs; the reports
record that epistemic status rather than overclaiming.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateFit
from .geometry import Anisotropy, estimate_holder
from .levy import sample_increments
from .semigroup import (
    OUModel,
    apply_semigroup_modes,
    density_fft,
    derivative_estimate,
    suggest_grid,
)
from .solver import EllipticProblem, ParabolicProblem, solve_elliptic, solve_parabolic

__all__ = [
    "ExponentReport",
    "fit_power_law",
    "verify_gradient_decay",
    "verify_holder_continuity",
    "verify_schauder",
    "verify_density_tail",
    "holder_norm_estimate",
]

DEFAULT_EXPONENT_TOL = 0.1
DEFAULT_RESIDUAL_CAP = 0.05


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExponentReport:
    """Fitted vs predicted power-law exponent for one claim.

    ``passed`` is two-sided (|fitted - predicted| <= tolerance and
    residual <= cap) unless ``one_sided`` is set, in which case only
    fitted >= predicted - tolerance is required (upper-bound claims need
    not saturate for generic inputs).
    """

    claim_id: str
    predicted_exponent: float
    fitted_exponent: float
    fit_residual: float
    fit_range: tuple
    tolerance: float = DEFAULT_EXPONENT_TOL
    residual_cap: float = DEFAULT_RESIDUAL_CAP
    one_sided: bool = False
    config_hash: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        if self.extra.get("trivial"):
            return True
        if not np.isfinite(self.fitted_exponent):
            return False
        if self.one_sided:
            return self.fitted_exponent >= self.predicted_exponent - self.tolerance
        return (abs(self.fitted_exponent - self.predicted_exponent)
                <= self.tolerance
                and self.fit_residual <= self.residual_cap)

    def to_dict(self) -> dict:
        return {
            "claim_id": self.claim_id,
            "predicted_exponent": self.predicted_exponent,
            "fitted_exponent": self.fitted_exponent,
            "fit_residual": self.fit_residual,
            "fit_range": list(self.fit_range),
            "tolerance": self.tolerance,
            "residual_cap": self.residual_cap,
            "one_sided": self.one_sided,
            "passed": bool(self.passed),
            "config_hash": self.config_hash,
            "extra": self.extra,
        }


def fit_power_law(samples):
    """Least-squares slope of log value against log scale.

    Parameters
    ----------
    samples : iterable of (scale, value), both positive

    Returns
    -------
    (slope, residual) with residual the RMS of the log-fit errors.
    """
    pts = [(float(s), float(v)) for s, v in samples]
    if len(pts) < 3:
        raise DegenerateFit(f"need >= 3 samples, got {len(pts)}")
    arr = np.array(pts)
    if np.any(arr <= 0):
        raise DegenerateFit("power-law fit needs positive scales and values")
    logx = np.log(arr[:, 0])
    logy = np.log(arr[:, 1])
    slope, intercept = np.polyfit(logx, logy, 1)
    resid = float(np.sqrt(np.mean((logy - (slope * logx + intercept)) ** 2)))
    return float(slope), resid


def _probe_points(N: int, count: int, seed: int, half_width: float = np.pi):
    rng = np.random.default_rng(seed)
    return rng.uniform(-half_width, half_width, size=(count, N))


def _block_base_points(model: OUModel, h: int, count: int, seed: int,
                       half_width: float = 1.5) -> np.ndarray:
    """Base points with the coordinates of blocks below h zeroed out.

    Time integrals of the solution representations dephase at points with
    nonzero leading-block coordinates (the flow rotates a block-h mode's
    phase at a rate set by the block-(h-1) coordinate), so the
    third-difference sup along block h is attained, and is numerically
    clean, on this subspace.
    """
    rng = np.random.default_rng(seed + h)
    coords = rng.uniform(-half_width, half_width, size=(count, model.N))
    for hp in range(1, h):
        for i in model.dec.index_sets[hp - 1]:
            coords[:, i] = 0.0
    return coords @ model.dec.basis.T


def verify_gradient_decay(model: OUModel, phi, blocks, t_grid,
                          n_probes: int = 1024, seed: int = 1301,
                          tolerance: float = DEFAULT_EXPONENT_TOL,
                          residual_cap: float = DEFAULT_RESIDUAL_CAP,
                          two_sided: bool = True,
                          t_window=(0.0, 0.25)):
    """First-derivative decay of P_t phi per block against the predicted
    slope -(1 + alpha (h-1))/alpha.

    The sup over x is replaced by the max over seeded probe points; phi
    must carry modes (the exact pushforward keeps tiny FD steps honest at
    the smallest times).
    """
    t_grid = np.asarray([t for t in np.atleast_1d(t_grid)
                         if t_window[0] <= t <= t_window[1]], dtype=float)
    if t_grid.size < 3:
        raise DegenerateFit("need >= 3 times inside the fit window")
    alpha = model.alpha
    probes = _probe_points(model.N, n_probes, seed)
    chash = _config_hash({"claim": "gradient_decay", "t": t_grid.tolist(),
                          "probes": n_probes, "seed": seed,
                          "model": model.levy.content_hash()})
    reports = []
    for h in blocks:
        predicted = -(1.0 + alpha * (h - 1)) / alpha
        for i in model.dec.index_sets[h - 1]:
            sups = np.empty(t_grid.size)
            for k, t in enumerate(t_grid):
                vals = derivative_estimate(model, t, phi, probes, i,
                                           order=1, method="modes")
                sups[k] = np.abs(vals).max()
            slope, resid = fit_power_law(zip(t_grid, sups))
            reports.append(ExponentReport(
                claim_id=f"gradient_decay_h{h}_i{i}",
                predicted_exponent=predicted, fitted_exponent=slope,
                fit_residual=resid, fit_range=(t_grid.min(), t_grid.max()),
                tolerance=tolerance, residual_cap=residual_cap,
                one_sided=not two_sided, config_hash=chash,
                extra={"sup_values": sups.tolist(),
                       "note": "upper-bound claim; two-sided only for "
                               "canonical rough input"}))
    return reports


def verify_holder_continuity(model: OUModel, beta: float, gamma: float,
                             phi, t_grid, seed: int = 1409,
                             tolerance: float = 0.12,
                             residual_cap: float = DEFAULT_RESIDUAL_CAP,
                             offsets=None):
    """Fitted time-slope of the gamma-seminorm of P_t phi for phi of
    anisotropic order beta; predicted slope (beta - gamma)/alpha.

    The norm estimate is the max over blocks of the third-difference
    seminorm at the block-scaled target exponent.
    """
    t_grid = np.asarray(np.atleast_1d(t_grid), dtype=float)
    aniso = Anisotropy(model.dec, model.alpha)
    predicted = (beta - gamma) / model.alpha
    chash = _config_hash({"claim": "holder_continuity", "beta": beta,
                          "gamma": gamma, "t": t_grid.tolist(), "seed": seed,
                          "model": model.levy.content_hash()})
    values = np.empty(t_grid.size)
    trivial = True
    for k, t in enumerate(t_grid):
        def pushed(X, _t=t):
            return apply_semigroup_modes(model, _t, phi.modes, X)
        block_vals = []
        for h in range(1, model.dec.n + 1):
            est = estimate_holder(pushed, aniso, h,
                                  target_exponent=gamma * aniso.block_exponent(h),
                                  offsets=offsets)
            trivial = trivial and est.trivial
            block_vals.append(0.0 if est.trivial else est.seminorm_at_target)
        values[k] = max(block_vals)
    if trivial:
        return ExponentReport(
            claim_id="holder_continuity", predicted_exponent=predicted,
            fitted_exponent=np.nan, fit_residual=0.0,
            fit_range=(t_grid.min(), t_grid.max()), tolerance=tolerance,
            residual_cap=residual_cap, config_hash=chash,
            extra={"trivial": True})
    slope, resid = fit_power_law(zip(t_grid, values))
    return ExponentReport(
        claim_id="holder_continuity", predicted_exponent=predicted,
        fitted_exponent=slope, fit_residual=resid,
        fit_range=(t_grid.min(), t_grid.max()), tolerance=tolerance,
        residual_cap=residual_cap, config_hash=chash,
        extra={"seminorms": values.tolist(), "beta": beta, "gamma": gamma})


def holder_norm_estimate(phi, aniso: Anisotropy, gamma: float,
                         probes: np.ndarray, offsets=None) -> float:
    """Probe estimate of the anisotropic gamma-norm: sup-norm plus the max
    over blocks of the block-scaled third-difference seminorm."""
    sup = float(np.abs(np.asarray(phi(probes))).max())
    semis = []
    for h in range(1, aniso.dec.n + 1):
        est = estimate_holder(phi, aniso, h,
                              target_exponent=gamma * aniso.block_exponent(h),
                              offsets=offsets)
        semis.append(0.0 if est.trivial else est.seminorm_at_target)
    return sup + max(semis)


def verify_schauder(problem, beta: float, x_probes=None, seed: int = 1511,
                    tolerance: float = 0.08,
                    residual_cap: float = DEFAULT_RESIDUAL_CAP,
                    t_slices=None, offsets=None, n_s: int = 48,
                    laplace_nodes: int = 96):
    """Regularity bootstrap of the solution: per block h the fitted Holder
    exponent of u must reach (alpha + beta)/(1 + alpha (h-1)) (one-sided;
    the third difference detects orders only below 3).

    For an elliptic problem one report per block is produced; for a
    parabolic problem the block reports are repeated on each time slice.
    The empirical ratio of the (alpha+beta)-norm of u to the beta-norm of
    the source rides along in ``extra``.
    """
    model = problem.model
    alpha = model.alpha
    aniso = Anisotropy(model.dec, alpha)
    if x_probes is None:
        x_probes = _probe_points(model.N, 16, seed, half_width=1.0)
    x_probes = np.atleast_2d(np.asarray(x_probes, dtype=float))
    chash = _config_hash({"claim": "schauder", "beta": beta, "seed": seed,
                          "elliptic": isinstance(problem, EllipticProblem),
                          "model": model.levy.content_hash()})

    def block_reports(u_fn, tag, source_fn):
        norm_u = holder_norm_estimate(u_fn, aniso, alpha + beta, x_probes,
                                      offsets=offsets)
        norm_g = holder_norm_estimate(source_fn, aniso, beta, x_probes,
                                      offsets=offsets)
        ratio = norm_u / norm_g if norm_g > 0 else np.inf
        out = []
        for h in range(1, model.dec.n + 1):
            target = (alpha + beta) * aniso.block_exponent(h)
            est = estimate_holder(
                u_fn, aniso, h, target_exponent=target, offsets=offsets,
                x0_samples=_block_base_points(model, h, 8, seed))
            out.append(ExponentReport(
                claim_id=f"schauder_{tag}_h{h}",
                predicted_exponent=min(target, 2.95),
                fitted_exponent=est.exponent_fit,
                fit_residual=est.fit_residual,
                fit_range=(float(est.scales.min()), float(est.scales.max())),
                tolerance=tolerance, residual_cap=residual_cap,
                one_sided=True, config_hash=chash,
                extra={"trivial": est.trivial,
                       "seminorm_at_target": est.seminorm_at_target,
                       "empirical_constant": ratio}))
        return out

    if isinstance(problem, EllipticProblem):
        sol = solve_elliptic(problem, x_probes, n_nodes=laplace_nodes)
        return block_reports(sol.evaluate, "elliptic", problem.g)
    if isinstance(problem, ParabolicProblem):
        if t_slices is None:
            t_slices = np.linspace(0.25, 1.0, 4) * problem.T
        sol = solve_parabolic(problem, t_slices, x_probes, n_s=n_s)
        reports = []
        for t in t_slices:
            def u_t(X, _t=t):
                return sol.evaluate(_t, X)
            src = problem.u0 if problem.f is None else (
                lambda X, _t=t: np.atleast_1d(problem.f(_t, X)))
            reports.extend(block_reports(u_t, f"parabolic_t{t:.3g}",
                                         problem.u0))
        return reports
    raise TypeError("problem must be EllipticProblem or ParabolicProblem")


def verify_density_tail(model: OUModel, t_grid, grid_M: int = 4096,
                        box: float = 64.0, u_max: float = 6.0,
                        tail_window=(3.0, 20.0), seed: int = 1627,
                        collapse_tol: float = 0.02,
                        mc_paths: int = 200_000):
    """Self-similarity collapse and radial tail exponent of the density.

    For a pure jump model with A = 0 (N = d = 1) the rescaled densities
    t^(1/alpha) p(t, t^(1/alpha) u) are compared on a common lattice; the
    tail slope of the largest-t density is fitted in the scaled variable
    and cross-checked against Monte Carlo exceedance frequencies. A
    Gaussian model reports "no power law" instead of a slope.
    """
    from .semigroup import FourierGrid

    if model.N != 1:
        raise ValueError("density-tail check is a 1-d diagnostic")
    t_grid = np.sort(np.asarray(np.atleast_1d(t_grid), dtype=float))
    alpha = model.alpha
    chash = _config_hash({"claim": "density_tail", "t": t_grid.tolist(),
                          "M": grid_M, "box": box, "seed": seed,
                          "model": model.levy.content_hash()})
    grid = FourierGrid(1, grid_M, box)
    fields = {t: density_fft(model, t, grid) for t in t_grid}
    lattice = np.linspace(-u_max, u_max, 481)
    curves = []
    for t in t_grid:
        scale = t ** (1.0 / alpha)
        y = fields[t].grid.space_axis(0)
        p = fields[t].values
        curves.append(scale * np.interp(lattice * scale, y, p))
    curves = np.array(curves)
    peak = curves.max()
    collapse_dev = float(
        max(np.abs(curves[i] - curves[j]).max()
            for i in range(len(t_grid)) for j in range(i + 1, len(t_grid)))
        / peak) if len(t_grid) > 1 else 0.0

    if not model.levy.has_jumps:
        return ExponentReport(
            claim_id="density_tail", predicted_exponent=np.nan,
            fitted_exponent=np.nan, fit_residual=0.0,
            fit_range=tuple(tail_window), tolerance=collapse_tol,
            residual_cap=np.inf, config_hash=chash,
            extra={"trivial": True, "power_law": False,
                   "collapse_deviation": collapse_dev,
                   "note": "super-polynomial (Gaussian) tail"})

    t_big = float(t_grid[-1])
    scale = t_big ** (1.0 / alpha)
    y = fields[t_big].grid.space_axis(0)
    p = fields[t_big].values
    sel = (y >= tail_window[0] * scale) & (y <= tail_window[1] * scale)
    slope, resid = fit_power_law(zip(y[sel], np.maximum(p[sel], 1e-300)))

    # Monte Carlo exceedance cross-check: P(|Z_t| > y) ~ y^-alpha, so the
    # density slope should sit one order below the exceedance slope
    rng = np.random.default_rng(seed)
    Z = sample_increments(model.levy, t_big, mc_paths, rng)[:, 0]
    qs = np.geomspace(tail_window[0] * scale, 0.5 * tail_window[1] * scale, 6)
    exceed = np.array([(np.abs(Z) > q).mean() for q in qs])
    mc_slope = np.nan
    if np.all(exceed > 0):
        mc_slope, _ = fit_power_law(zip(qs, exceed))

    return ExponentReport(
        claim_id="density_tail", predicted_exponent=-(1.0 + alpha),
        fitted_exponent=slope, fit_residual=resid,
        fit_range=tuple(tail_window), tolerance=0.15, residual_cap=0.1,
        config_hash=chash,
        extra={"collapse_deviation": collapse_dev,
               "collapse_tol": collapse_tol,
               "collapse_ok": collapse_dev <= collapse_tol,
               "mc_exceedance_slope": mc_slope,
               "power_law": True})
