"""Kalman controllability structure of a drift/embedding pair (A, B).

Builds the nested subspaces V_h spanned by [B, AB, ..., A^(h-1)B], the
orthogonal projections E_h onto their successive complements, and the
canonical (block sub-diagonal) form of A and B in the adapted basis.
Also provides the intrinsic diagonal scaling matrix, its reduced
resolvent, and a fixed-step resolvent integrator for time-dependent
drifts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import KalmanFailure, RankDeficientB, StepTooLarge

__all__ = [
    "SystemPair",
    "KalmanDecomposition",
    "compute_decomposition",
    "scaling_matrix",
    "reduced_resolvent",
    "resolvent_ode",
]


@dataclass(frozen=True)
class SystemPair:
    """Drift matrix A (N x N) and embedding matrix B (N x d), d <= N.

    B must have full column rank at the numerical tolerance used by
    :func:`compute_decomposition`.
    """

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        if B.shape[1] > B.shape[0]:
            raise ValueError("B cannot have more columns than rows")

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class KalmanDecomposition:
    """Adapted orthonormal basis and block data of a controllable pair.

    Attributes
    ----------
    n : int
        Minimal number of Krylov steps with rank[B, ..., A^(n-1)B] = N.
    dims : tuple of int
        Block dimensions d_1 >= d_2 >= ... >= d_n, summing to N.
    basis : ndarray (N, N)
        Orthonormal columns spanning the blocks in order; the canonical
        coordinates are x_canon = basis.T @ x.
    projections : tuple of ndarray
        Orthogonal projections E_h onto each block, in the original frame.
    index_sets : tuple of tuple of int
        Canonical coordinate indices belonging to each block.
    A_canon, B_canon : ndarray
        The pair expressed in the adapted basis; B_canon is (B0; 0; ...; 0)
        with B0 invertible and A_canon has full-rank sub-diagonal blocks
        and (numerically) zero blocks below them.
    subdiag_conditioning : tuple of float
        Condition numbers of the sub-diagonal blocks A_2..A_n; reported so
        near-degenerate chains are visible without imposing a cutoff.
    """

    sys: SystemPair
    n: int
    dims: tuple
    basis: np.ndarray
    projections: tuple
    index_sets: tuple
    A_canon: np.ndarray
    B_canon: np.ndarray
    subdiag_conditioning: tuple = field(default=())

    @property
    def N(self) -> int:
        return self.sys.N

    @property
    def d(self) -> int:
        return self.sys.d

    def block_of_coordinate(self, i: int) -> int:
        """1-based block index h with i in I_h (canonical coordinates)."""
        for h, idx in enumerate(self.index_sets, start=1):
            if i in idx:
                return h
        raise IndexError(f"coordinate {i} outside 0..{self.N - 1}")

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "dims": list(self.dims),
            "basis": self.basis.tolist(),
            "projections": [np.asarray(P).tolist() for P in self.projections],
            "index_sets": [list(ix) for ix in self.index_sets],
            "A_canon": self.A_canon.tolist(),
            "B_canon": self.B_canon.tolist(),
            "subdiag_conditioning": list(self.subdiag_conditioning),
        }


def _numerical_rank(M: np.ndarray, tol: float):
    """Rank of M via singular values above tol * sigma_max."""
    if M.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def compute_decomposition(sys: SystemPair, tol: float = 1e-10) -> KalmanDecomposition:
    """Build the canonical block decomposition of a controllable pair.

    The subspaces V_h are the column spaces of the growing Krylov matrices
    [B, AB, ..., A^(h-1)B]; block h is an orthonormal basis of the part of
    V_h orthogonal to V_(h-1), ordered by decreasing singular value of the
    defining column batch.

    Raises
    ------
    RankDeficientB
        If B drops column rank at the tolerance.
    KalmanFailure
        If the full Krylov matrix never reaches rank N.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    A, B = sys.A, sys.B
    N, d = sys.N, sys.d

    rank_B, _ = _numerical_rank(B, tol)
    if rank_B < d:
        raise RankDeficientB(f"rank(B) = {rank_B} < d = {d} at tol {tol:g}")

    blocks = []
    P_prev = np.zeros((N, N))  # projection onto V_{h-1}
    K = B.copy()  # current batch A^{h-1} B
    total = 0
    n = 0
    for h in range(1, N + 1):
        residual = K - P_prev @ K
        U, s, _ = np.linalg.svd(residual, full_matrices=False)
        # Gauge against the incoming batch: a residual made purely of
        # projection noise must count as rank zero.
        batch_scale = np.linalg.norm(K, 2)
        d_h = int(np.sum(s > tol * max(batch_scale, 1e-300)))
        if h == 1 and d_h != d:
            raise RankDeficientB(f"first block rank {d_h} != d = {d}")
        if d_h == 0:
            break
        blocks.append(U[:, :d_h])
        total += d_h
        n = h
        if total == N:
            break
        P_prev = P_prev + U[:, :d_h] @ U[:, :d_h].T
        K = A @ K

    if total < N:
        raise KalmanFailure(
            f"rank[B, AB, ..., A^{N - 1}B] = {total} < N = {N} at tol {tol:g}"
        )

    dims = tuple(U.shape[1] for U in blocks)
    basis = np.hstack(blocks)
    projections = tuple(U @ U.T for U in blocks)
    offsets = np.concatenate([[0], np.cumsum(dims)])
    index_sets = tuple(
        tuple(range(offsets[h], offsets[h + 1])) for h in range(n)
    )
    A_canon = basis.T @ A @ basis
    B_canon = basis.T @ B

    cond = []
    for h in range(1, n):
        rows = index_sets[h]
        cols = index_sets[h - 1]
        block = A_canon[np.ix_(rows, cols)]
        s = np.linalg.svd(block, compute_uv=False)
        cond.append(float(s[0] / s[-1]) if s[-1] > 0 else np.inf)

    return KalmanDecomposition(
        sys=sys,
        n=n,
        dims=dims,
        basis=basis,
        projections=projections,
        index_sets=index_sets,
        A_canon=A_canon,
        B_canon=B_canon,
        subdiag_conditioning=tuple(cond),
    )


def scaling_matrix(dec: KalmanDecomposition, t: float) -> np.ndarray:
    """Diagonal matrix with block h scaled by t^(h-1), in canonical order."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    entries = np.concatenate(
        [np.full(d_h, float(t) ** h) for h, d_h in enumerate(dec.dims)]
    )
    return np.diag(entries)


def _scaling_diagonal(dec: KalmanDecomposition, t: float) -> np.ndarray:
    return np.concatenate(
        [np.full(d_h, float(t) ** h) for h, d_h in enumerate(dec.dims)]
    )


def reduced_resolvent(dec: KalmanDecomposition, t: float) -> np.ndarray:
    """R_t with e^(t A_canon) M_t = M_t R_t; R_0 is the identity by definition.

    The definition is piecewise: M_t is singular at t = 0, and the t -> 0+
    limit of R_t is generally not the identity (the two-block chain has
    R_t constant in t), so no continuity is claimed at 0.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    N = dec.N
    if t == 0.0:
        return np.eye(N)
    m = _scaling_diagonal(dec, t)
    E = expm(t * dec.A_canon)
    return E * (m[None, :] / m[:, None])


def resolvent_ode(A_fn, s: float, t: float, step: float) -> np.ndarray:
    """Resolvent R_{s,t} of dR/dt = A_t R, R_{s,s} = I, by fixed-step RK4.

    Integrates forward or backward depending on the sign of t - s. For a
    constant A the result matches expm((t-s) A) to O(step^4).
    """
    probe = np.atleast_2d(np.asarray(A_fn(s), dtype=float))
    N = probe.shape[0]
    if s == t:
        return np.eye(N)
    if step <= 0:
        raise ValueError("step must be positive")
    if step > abs(t - s):
        raise StepTooLarge(f"step {step:g} exceeds |t - s| = {abs(t - s):g}")
    n_steps = int(np.ceil(abs(t - s) / step))
    h = (t - s) / n_steps
    R = np.eye(N)
    u = s
    for _ in range(n_steps):
        k1 = np.asarray(A_fn(u)) @ R
        k2 = np.asarray(A_fn(u + 0.5 * h)) @ (R + 0.5 * h * k1)
        k3 = np.asarray(A_fn(u + 0.5 * h)) @ (R + 0.5 * h * k2)
        k4 = np.asarray(A_fn(u + h)) @ (R + h * k3)
        R = R + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        u += h
    return R
