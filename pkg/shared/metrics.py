# SINR, rate and MSE evaluation of a precoder state
import logging
from typing import Optional

import numpy as np

from shared.models import (
    EffectiveChannels,
    InterferenceScope,
    PrecoderState,
    RateMode,
    RateReport,
    SystemConfig,
)

logger = logging.getLogger(__name__)

QPSK = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / np.sqrt(2.0)


def link_gains(z: np.ndarray, eff: EffectiveChannels) -> np.ndarray:
    """
    Cross-link amplitudes g[l, k, i] = h̄_kl^H z_il.

    The precoder of UE i at AP l is zero unless l serves i, so summing over all
    l and i automatically respects the serving mask.
    """
    return np.einsum("lkr,lir->lki", eff.channels.conj(), z)


def _signal_interference(gains: np.ndarray, mode: RateMode):
    k_idx = np.arange(gains.shape[1])
    if mode == RateMode.COHERENT:
        combined = gains.sum(axis=0)  # K×K, row k: Σ_l h̄_kl^H z_il
        total = np.sum(np.abs(combined) ** 2, axis=1)
        signal = np.abs(combined[k_idx, k_idx]) ** 2
    else:
        power = np.abs(gains) ** 2
        total = power.sum(axis=(0, 2))
        signal = power[:, k_idx, k_idx].sum(axis=0)
    return signal, total - signal


def sinr_all(
    z: np.ndarray, eff: EffectiveChannels, cfg: SystemConfig, mode: RateMode = RateMode.PER_LINK
) -> np.ndarray:
    """SINR of every UE. Per-link mode sums link powers; coherent mode sums amplitudes first."""
    signal, interference = _signal_interference(link_gains(z, eff), mode)
    return signal / (np.maximum(interference, 0.0) + cfg.noise_w)


def sinr(
    k: int,
    state: PrecoderState,
    eff: EffectiveChannels,
    cfg: SystemConfig,
    mode: RateMode = RateMode.PER_LINK,
) -> float:
    return float(sinr_all(state.z, eff, cfg, mode)[k])


def rate(
    k: int,
    state: PrecoderState,
    eff: EffectiveChannels,
    cfg: SystemConfig,
    mode: RateMode = RateMode.PER_LINK,
) -> float:
    """Achievable rate log2(1 + SINR_k) in bit/s/Hz."""
    return float(np.log2(1.0 + sinr(k, state, eff, cfg, mode)))


def sum_rate_of(
    z: np.ndarray, eff: EffectiveChannels, cfg: SystemConfig, mode: RateMode = RateMode.PER_LINK
) -> float:
    return float(np.sum(np.log2(1.0 + sinr_all(z, eff, cfg, mode))))


def sum_rate(
    state: PrecoderState,
    eff: EffectiveChannels,
    cfg: SystemConfig,
    mode: RateMode = RateMode.PER_LINK,
) -> float:
    return sum_rate_of(state.z, eff, cfg, mode)


def rate_report(
    z: np.ndarray, eff: EffectiveChannels, cfg: SystemConfig, mode: RateMode = RateMode.PER_LINK
) -> RateReport:
    sinrs = sinr_all(z, eff, cfg, mode)
    rates = np.log2(1.0 + sinrs)
    return RateReport(
        sinr=sinrs.tolist(),
        rate_bps_hz=rates.tolist(),
        sum_rate=float(rates.sum()),
        weighted_sum_rate=float(np.dot(cfg.weights, rates)),
        mode=mode,
    )


# ---------------------------------------------------------------------------
# Mean-square error
# ---------------------------------------------------------------------------


def receive_power(z: np.ndarray, eff: EffectiveChannels, cfg: SystemConfig) -> np.ndarray:
    """
    T_k: received power plus noise that UE k's receive coefficients are normalised by.

    Network scope counts every AP; cluster scope only the serving APs of k.
    """
    power = np.abs(link_gains(z, eff)) ** 2  # [l, k, i]
    if cfg.interference_scope == InterferenceScope.CLUSTER:
        power = power * eff.serving[:, :, None]
    return power.sum(axis=(0, 2)) + cfg.noise_w


def mse_all(
    z: np.ndarray, mu_link: np.ndarray, eff: EffectiveChannels, cfg: SystemConfig
) -> np.ndarray:
    """
    Per-UE MSE for per-link receive coefficients μ_kl.

    E_k = Σ_l |μ_kl|² T_k − 2 Re Σ_l μ_kl^* h̄_kl^H z_kl + 1
    """
    k_idx = np.arange(eff.num_ues)
    direct = link_gains(z, eff)[:, k_idx, k_idx]  # [l, k]
    total = receive_power(z, eff, cfg)
    mu_norm2 = np.sum(np.abs(mu_link) ** 2, axis=0)
    cross = np.real(np.sum(mu_link.conj() * direct, axis=0))
    return mu_norm2 * total - 2.0 * cross + 1.0


def mse(k: int, state: PrecoderState, eff: EffectiveChannels, cfg: SystemConfig) -> float:
    return float(mse_all(state.z, state.mu_link, eff, cfg)[k])


# ---------------------------------------------------------------------------
# Symbol-level check
# ---------------------------------------------------------------------------


def estimate_sinr_monte_carlo(
    z: np.ndarray,
    eff: EffectiveChannels,
    cfg: SystemConfig,
    num_symbols: int,
    rng: np.random.Generator,
    k: Optional[int] = None,
) -> np.ndarray:
    """
    Estimate SINR by pushing 4-QAM symbols and Gaussian noise through the received-signal model.

    Every UE receives y_k = Σ_l Σ_i h̄_kl^H z_il q_i + n_k. The desired part is
    taken with its known amplitude and everything else is measured empirically.
    """
    gains = link_gains(z, eff).sum(axis=0)  # K×K coherent amplitudes
    num_ues = gains.shape[0]
    q = QPSK[rng.integers(0, 4, size=(num_ues, num_symbols))]
    noise = np.sqrt(cfg.noise_w / 2.0) * (
        rng.standard_normal((num_ues, num_symbols)) + 1j * rng.standard_normal((num_ues, num_symbols))
    )
    y = gains @ q + noise
    desired = np.diag(gains)[:, None] * q
    signal = np.mean(np.abs(desired) ** 2, axis=1)
    distortion = np.mean(np.abs(y - desired) ** 2, axis=1)
    estimate = signal / distortion
    logger.debug(f"Monte-Carlo SINR estimate over {num_symbols} symbols: {estimate}")
    return estimate if k is None else estimate[k : k + 1]
