# Dense complex linear algebra for the per-AP precoder subproblem
import logging
from typing import Optional

import numba
import numpy as np

from shared.errors import EigenConvergenceError, SingularSystemError
from shared.models import FlopCounter, HermitianEig, KappaMode, LowRankOperator

logger = logging.getLogger(__name__)

MAX_SWEEPS = 100
CONVERGENCE_RTOL = 1e-14  # off-diagonal Frobenius norm relative to ‖A‖_F
SKIP_RTOL = 1e-30
DEFAULT_RANK_TOL = 1e-10


# ---------------------------------------------------------------------------
# Operation counts
# ---------------------------------------------------------------------------


def lu_factor_flops(n: int) -> FlopCounter:
    """Complex multiplies/adds of an n×n LU factorisation with partial pivoting."""
    return FlopCounter(
        complex_multiplies=n * (n * n + 2) // 3,
        complex_adds=n * (n - 1) * (2 * n - 1) // 6,
    )


def lu_solve_flops(n: int, nrhs: int = 1) -> FlopCounter:
    """Forward and back substitution against an existing LU factorisation."""
    return FlopCounter(complex_multiplies=nrhs * n * n, complex_adds=nrhs * (n * n - n))


# ---------------------------------------------------------------------------
# Hermitian eigendecomposition (cyclic Jacobi)
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _off_norm(a):
    m = a.shape[0]
    total = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                total += a[i, j].real ** 2 + a[i, j].imag ** 2
    return np.sqrt(total)


@numba.njit(cache=True)
def _jacobi_sweeps(a, v, tol, skip, max_sweeps):
    """
    Run cyclic Jacobi sweeps in place on Hermitian ``a``, accumulating rotations in ``v``.

    Returns (sweeps, rotations, off-diagonal norm).
    """
    m = a.shape[0]
    sweeps = 0
    rotations = 0
    off = _off_norm(a)
    while off >= tol and sweeps < max_sweeps:
        sweeps += 1
        rotated = 0
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= skip:
                    continue
                u = apq / mag
                theta = (a[q, q].real - a[p, p].real) / (2.0 * mag)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                su = s * np.conj(u)
                cu = c * np.conj(u)
                # A <- A G, V <- V G
                for i in range(m):
                    aip = a[i, p]
                    aiq = a[i, q]
                    a[i, p] = c * aip - su * aiq
                    a[i, q] = s * aip + cu * aiq
                    vip = v[i, p]
                    viq = v[i, q]
                    v[i, p] = c * vip - su * viq
                    v[i, q] = s * vip + cu * viq
                # A <- G^H A
                su = s * u
                cu = c * u
                for j in range(m):
                    apj = a[p, j]
                    aqj = a[q, j]
                    a[p, j] = c * apj - su * aqj
                    a[q, j] = s * apj + cu * aqj
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                rotated += 1
        rotations += rotated
        off = _off_norm(a)
        if rotated == 0:
            break
    return sweeps, rotations, off


def hermitian_eig(
    a: np.ndarray, fc: Optional[FlopCounter] = None, max_sweeps: int = MAX_SWEEPS
) -> HermitianEig:
    """
    Full eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    The input is symmetrised as (A + A^H)/2 first. Eigenvalues come back in
    descending order with their eigenvectors as columns.

    Args:
        a: Complex m×m matrix, Hermitian up to rounding
        fc: Optional counter charged 12m multiplies and 6m adds per rotation
            plus m² multiplies per sweep for the convergence test
        max_sweeps: Sweep budget

    Returns:
        HermitianEig: eigen-pairs sorted descending

    Raises:
        EigenConvergenceError: off-diagonal norm still above tolerance after ``max_sweeps``
    """
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
    m = a.shape[0]
    work = np.ascontiguousarray(0.5 * (a + a.conj().T))
    v = np.eye(m, dtype=np.complex128)

    scale = np.linalg.norm(work)
    if scale == 0.0:
        return HermitianEig(eigenvalues=np.zeros(m), eigenvectors=v, sweeps=0)

    sweeps, rotations, off = _jacobi_sweeps(
        work, v, CONVERGENCE_RTOL * scale, SKIP_RTOL * scale, max_sweeps
    )
    if off >= CONVERGENCE_RTOL * scale:
        raise EigenConvergenceError(residual=float(off), sweeps=int(sweeps))

    if fc is not None:
        fc.add(multiplies=12 * m * rotations + m * m * (sweeps + 1), adds=6 * m * rotations)

    eigenvalues = np.real(np.diag(work)).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return HermitianEig(
        eigenvalues=eigenvalues[order],
        eigenvectors=np.ascontiguousarray(v[:, order]),
        sweeps=int(sweeps),
    )


def effective_rank(eig: HermitianEig, rel_tol: float = DEFAULT_RANK_TOL) -> int:
    """Numerical rank: eigenvalues above rel_tol times the largest (floored at the float tiny)."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must lie in (0, 1), got {rel_tol}")
    if eig.dim == 0:
        return 0
    threshold = rel_tol * max(float(eig.eigenvalues[0]), np.finfo(float).tiny)
    return int(np.count_nonzero(eig.eigenvalues > threshold))


def low_rank_operator(
    eig: HermitianEig, shift: float, rel_tol: float = DEFAULT_RANK_TOL
) -> LowRankOperator:
    """Truncate an eigendecomposition to its numerical rank and attach the shift λ."""
    r = effective_rank(eig, rel_tol)
    return LowRankOperator(
        basis=eig.eigenvectors[:, :r],
        eigenvalues=eig.eigenvalues[:r].copy(),
        shift=float(shift),
        dim=eig.dim,
    )


# ---------------------------------------------------------------------------
# Regularised solves
# ---------------------------------------------------------------------------


def solve_regularized_exact(
    op: LowRankOperator, b: np.ndarray, fc: Optional[FlopCounter] = None
) -> np.ndarray:
    """
    Closed-form Z⁻¹b in the eigenbasis.

    x = J diag(1/(ε+λ)) J^H b + (b − J J^H b)/λ. ``b`` may be a vector or an
    m×n matrix of right-hand sides.

    Raises:
        SingularSystemError: λ = 0 and the operator is rank deficient
    """
    lam = op.shift
    m, r = op.dim, op.rank
    if lam == 0.0 and r < m:
        raise SingularSystemError(f"zero shift with rank {r} < dimension {m}")

    rhs = np.asarray(b, dtype=np.complex128)
    cols = rhs.reshape(m, -1)
    coeffs = op.basis.conj().T @ cols
    x = op.basis @ (coeffs / (op.eigenvalues + lam)[:, None])
    if r < m:
        x += (cols - op.basis @ coeffs) / lam

    if fc is not None:
        n = cols.shape[1]
        if r < m:
            fc.add(multiplies=n * (3 * r * m + r + m), adds=n * (3 * r * m - r))
        else:
            fc.add(multiplies=n * (2 * r * m + r), adds=n * (2 * r * m - r - m))
    return x.reshape(rhs.shape)


def solve_dense(
    h: np.ndarray, shift: float, b: np.ndarray, fc: Optional[FlopCounter] = None
) -> np.ndarray:
    """Direct (H + λI)⁻¹b via LU, charged with the standard LU operation counts."""
    m = h.shape[0]
    rhs = np.asarray(b, dtype=np.complex128)
    cols = rhs.reshape(m, -1)
    z = h + shift * np.eye(m)
    try:
        x = np.linalg.solve(z, cols)
    except np.linalg.LinAlgError as e:
        raise SingularSystemError(f"dense solve failed: {e}") from e
    if fc is not None:
        fc.merge(lu_factor_flops(m))
        fc.merge(lu_solve_flops(m, cols.shape[1]))
    return x.reshape(rhs.shape)


# ---------------------------------------------------------------------------
# Neumann series
# ---------------------------------------------------------------------------


def nse_scaling(eig_max: float, eig_min_used: float, lam: float) -> float:
    """β = 2/(κ_max + κ_min) with κ_max = ε_max + λ and κ_min = ε_min + λ."""
    if lam <= 0.0:
        raise ValueError(f"shift must be positive, got {lam}")
    if not eig_max >= eig_min_used >= 0.0:
        raise ValueError(f"need eig_max >= eig_min_used >= 0, got {eig_max}, {eig_min_used}")
    return 2.0 / ((eig_max + lam) + (eig_min_used + lam))


def nse_scaling_for(op: LowRankOperator, mode: KappaMode = KappaMode.RETAINED) -> float:
    """Scaling factor for ``op``; tight mode uses κ_min = λ when the operator is rank deficient."""
    if op.rank == 0:
        return nse_scaling(0.0, 0.0, op.shift)
    eig_max = float(op.eigenvalues[0])
    eig_min = float(op.eigenvalues[-1])
    if mode == KappaMode.TIGHT and op.rank < op.dim:
        eig_min = 0.0
    return nse_scaling(eig_max, eig_min, op.shift)


def nse_contraction(op: LowRankOperator, beta: float) -> float:
    """max over the spectrum of Z of |1 − βκ|; below one means the series converges."""
    kappas = list(op.eigenvalues + op.shift)
    if op.rank < op.dim:
        kappas.append(op.shift)
    return float(max(abs(1.0 - beta * k) for k in kappas))


def nse_solve(
    op: LowRankOperator,
    beta: float,
    t: int,
    b: np.ndarray,
    fc: Optional[FlopCounter] = None,
    x0: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Truncated Neumann series β Σ_{s=0..t} (I − βZ)^s b.

    Evaluated by repeated operator application, never by forming powers of Z,
    so the cost is t low-rank applications plus O(m) vector work each.

    With a starting point ``x0`` the series is applied to the residual
    b − Z·x0 and added to x0, so the error of x0 shrinks by (I − βZ)^(t+1).
    One extra operator application is charged for the residual.
    """
    if t < 0:
        raise ValueError(f"series order must be non-negative, got {t}")
    m = op.dim
    rhs = np.asarray(b, dtype=np.complex128)
    width = rhs.size // m
    start = None
    if x0 is not None:
        start = np.asarray(x0, dtype=np.complex128).reshape(rhs.shape)
        rhs = rhs - op.apply(start, fc)
        if fc is not None:
            fc.add(adds=2 * width * m)

    term = rhs.copy()
    acc = term.copy()
    for _ in range(t):
        term = term - beta * op.apply(term, fc)
        acc += term
        if fc is not None:
            fc.add(multiplies=width * m, adds=2 * width * m)
    if fc is not None:
        fc.add(multiplies=width * m)
    return beta * acc if start is None else start + beta * acc
