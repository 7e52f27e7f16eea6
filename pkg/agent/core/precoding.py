# Per-AP precoder subproblem: gram matrix, power multiplier bisection, regularised solves
import logging
import math
from typing import Optional, Tuple

import numpy as np

from shared.errors import BisectionError
from shared.models import (
    ExactSolver,
    FlopCounter,
    HermitianEig,
    KappaMode,
)
from shared.numerics import (
    effective_rank,
    low_rank_operator,
    nse_scaling_for,
    nse_solve,
    solve_dense,
    solve_regularized_exact,
)

logger = logging.getLogger(__name__)

LAMBDA_FLOOR_RTOL = 1e-12
MAX_BISECTION_STEPS = 200
ZF_LOADING = 1e-10
BOUND_SLACK = 1e-9


def gram_matrix(channels: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    H = Σ_k weights[k] · h̄_k h̄_k^H for the rows h̄_k of ``channels`` (K×N_RF).

    UEs with zero weight do not contribute.
    """
    h = np.asarray(channels)
    gram = h.T @ (np.asarray(weights)[:, None] * h.conj())
    return 0.5 * (gram + gram.conj().T)


def lambda_floor(eig: HermitianEig) -> float:
    """Smallest multiplier used; keeps H + λI invertible when H is rank deficient."""
    return LAMBDA_FLOOR_RTOL * (max(float(eig.eigenvalues[0]), 0.0) + 1.0)


def power_given_lambda(
    eig: HermitianEig, rhs: np.ndarray, lam: float, rank_tol: float = 1e-10
) -> float:
    """
    Σ_k ‖(H + λI)⁻¹ rhs_k‖² evaluated in the eigenbasis of H.

    ``rhs`` holds one right-hand side per row. Returns +inf at λ = 0 when H is
    rank deficient.
    """
    rhs = np.atleast_2d(rhs)
    if lam == 0.0 and effective_rank(eig, rank_tol) < eig.dim:
        return math.inf
    coeffs = eig.eigenvectors.conj().T @ rhs.T  # m × n
    denom = (eig.eigenvalues + lam) ** 2
    return float(np.sum(np.abs(coeffs) ** 2 / denom[:, None]))


def bisect_lambda(
    eig: HermitianEig,
    rhs: np.ndarray,
    p_max: float,
    tol: float = 1e-8,
    max_steps: int = MAX_BISECTION_STEPS,
) -> Tuple[float, float]:
    """
    Find the power multiplier λ* of one AP.

    When the floor multiplier already meets the budget the constraint is
    inactive and the floor is returned. Otherwise λ is bisected on
    [λ_floor, λ_max], λ_max = sqrt(Σ_k ‖rhs_k‖² / P_max), keeping the upper
    end of the bracket so the returned power never exceeds the budget.

    Returns:
        Tuple[float, float]: (λ*, power at λ*)

    Raises:
        BisectionError: the analytic upper bound does not satisfy the budget
    """
    rhs = np.atleast_2d(rhs)
    lo = lambda_floor(eig)
    power_lo = power_given_lambda(eig, rhs, lo)
    if power_lo <= p_max:
        return lo, power_lo

    hi = math.sqrt(float(np.sum(np.abs(rhs) ** 2)) / p_max)
    power_hi = power_given_lambda(eig, rhs, hi)
    if power_hi > p_max * (1.0 + BOUND_SLACK):
        raise BisectionError(
            f"power {power_hi:.6e} at the analytic bound λ={hi:.6e} exceeds budget {p_max:.6e}"
        )

    for _ in range(max_steps):
        if p_max - power_hi <= tol * p_max:
            break
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        power_mid = power_given_lambda(eig, rhs, mid)
        if power_mid > p_max:
            lo = mid
        else:
            hi, power_hi = mid, power_mid
    else:
        logger.warning(f"λ bisection stopped after {max_steps} steps with power {power_hi:.6e}")
    return hi, power_hi


def solve_precoders(
    gram: np.ndarray,
    eig: HermitianEig,
    rhs: np.ndarray,
    lam: float,
    nse_order: Optional[int] = None,
    exact_solver: ExactSolver = ExactSolver.LOWRANK,
    kappa_mode: KappaMode = KappaMode.RETAINED,
    rank_tol: float = 1e-10,
    fc: Optional[FlopCounter] = None,
    initial: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Apply (H + λI)⁻¹ to every row of ``rhs``.

    ``nse_order=None`` solves exactly (low-rank closed form or dense LU);
    an integer selects the truncated Neumann series of that order, started
    from the rows of ``initial`` when given. Exact solves ignore ``initial``.

    Returns:
        np.ndarray: one precoder per row of ``rhs``
    """
    cols = np.atleast_2d(rhs).T
    if nse_order is None and exact_solver == ExactSolver.DENSE:
        return solve_dense(gram, lam, cols, fc).T

    op = low_rank_operator(eig, lam, rank_tol)
    if nse_order is None:
        return solve_regularized_exact(op, cols, fc).T
    beta = nse_scaling_for(op, kappa_mode)
    x0 = None if initial is None else np.atleast_2d(initial).T
    return nse_solve(op, beta, nse_order, cols, fc, x0=x0).T


def zero_forcing(channels: np.ndarray, p_max: float) -> Tuple[np.ndarray, bool]:
    """
    Zero-forcing precoders for the rows of ``channels`` (served UEs only).

    Columns of H̄^H (H̄ H̄^H)⁻¹ are normalised to unit norm and scaled by
    sqrt(P_max / |K_l|), so each UE gets an equal share and the AP spends
    exactly P_max.

    Returns:
        Tuple[np.ndarray, bool]: (precoders as rows, whether diagonal loading was needed)
    """
    h = np.atleast_2d(channels)
    num = h.shape[0]
    if num == 0:
        return np.zeros_like(h), False

    # rows of H̄ are h̄_k^H
    hbar = h.conj()
    gram = hbar @ hbar.conj().T
    if np.real(np.trace(gram)) == 0.0:
        return np.zeros_like(h), False
    loaded = np.linalg.matrix_rank(gram) < num
    if loaded:
        gram = gram + ZF_LOADING * np.real(np.trace(gram)) * np.eye(num)
    w = hbar.conj().T @ np.linalg.inv(gram)  # N_RF × |K_l|

    norms = np.linalg.norm(w, axis=0)
    norms[norms == 0.0] = 1.0
    w = w / norms * math.sqrt(p_max / num)
    return w.T, bool(loaded)


def matched_filter(channels: np.ndarray, served: np.ndarray, p_max: float) -> np.ndarray:
    """
    Full-power matched-filter precoders z_k = c·h̄_k for the served rows.

    One scale factor c per AP makes the total power exactly P_max; an AP whose
    served channels are all zero transmits nothing.
    """
    h = np.asarray(channels)
    z = np.zeros_like(h, dtype=np.complex128)
    if len(served) == 0:
        return z
    energy = float(np.sum(np.abs(h[served]) ** 2))
    if energy == 0.0:
        return z
    z[served] = math.sqrt(p_max / energy) * h[served]
    return z
