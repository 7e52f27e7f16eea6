# mmWave multipath channels and the DFT beamspace
import logging
from functools import lru_cache

import numpy as np

from shared.models import ChannelSet, SystemConfig, Topology
from shared.topology import distances

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 3e8


def steering_vector(theta: float, n: int) -> np.ndarray:
    """ULA response a(θ) = exp(−j2πθv)/√N with v = i − (N−1)/2, i = 0..N−1."""
    if n < 1:
        raise ValueError(f"array size must be positive, got {n}")
    v = np.arange(n) - (n - 1) / 2.0
    return np.exp(-2j * np.pi * theta * v) / np.sqrt(n)


def dft_grid(n: int) -> np.ndarray:
    """Critically sampled spatial angles (m − (N+1)/2)/N for m = 1..N."""
    if n < 1:
        raise ValueError(f"array size must be positive, got {n}")
    return (np.arange(1, n + 1) - (n + 1) / 2.0) / n


@lru_cache(maxsize=16)
def dft_matrix(n: int) -> np.ndarray:
    """Unitary N×N matrix whose column m is a(θ̄_m)."""
    grid = dft_grid(n)
    v = np.arange(n) - (n - 1) / 2.0
    u = np.exp(-2j * np.pi * np.outer(v, grid)) / np.sqrt(n)
    u.setflags(write=False)
    return u


def beamspace_transform(h: np.ndarray) -> np.ndarray:
    """
    Project antenna-domain channels onto the DFT beams.

    Works along the last axis, so a whole L×K×N channel array can be passed.
    """
    h = np.asarray(h, dtype=np.complex128)
    u = dft_matrix(h.shape[-1])
    return h @ u.conj()


def path_loss_db(d_m: float, cfg: SystemConfig, shadow_db: float = 0.0) -> float:
    """
    Large-scale gain in dB at distance ``d_m``.

    −20log10(4πf/c) − 10n(1 + b·f/f0)log10(d) − X, with d clamped to the
    configured minimum distance. Works elementwise on arrays too.
    """
    d = np.maximum(d_m, cfg.min_distance_m)
    fspl = 20.0 * np.log10(4.0 * np.pi * cfg.carrier_hz / SPEED_OF_LIGHT)
    slope = 10.0 * cfg.pl_exponent * (1.0 + cfg.pl_b * cfg.carrier_hz / cfg.pl_f0_hz)
    return -fspl - slope * np.log10(d) - shadow_db


def large_scale_fading(topo: Topology, cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """L×K path loss in dB including one log-normal shadowing draw per link."""
    shadow = rng.normal(0.0, np.sqrt(cfg.shadow_var_db2), size=(topo.num_aps, topo.num_ues))
    return path_loss_db(distances(topo), cfg, shadow)


def bearing_directions(topo: Topology) -> np.ndarray:
    """L×K LoS spatial directions 0.5·sin(φ), φ the planar AP→UE bearing."""
    diff = topo.ue_xy[None, :, :] - topo.ap_xy[:, None, :]
    phi = np.arctan2(diff[..., 1], diff[..., 0])
    return 0.5 * np.sin(phi)


def _cn(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def generate_channels(topo: Topology, cfg: SystemConfig, rng: np.random.Generator) -> ChannelSet:
    """
    Draw the multipath channel of every (AP, UE) link.

    One LoS path along the geometric bearing with gain α√PL, α ~ CN(0, 1),
    plus P NLoS paths with directions uniform on [−0.5, 0.5] and gains
    CN(0, PL·10^(offset/10)).

    Args:
        topo: Drop whose ``large_scale_db`` has been filled
        cfg: Scenario parameters
        rng: Random stream of this drop

    Returns:
        ChannelSet: antenna-domain and beamspace channels, arrays indexed [l, k, :]
    """
    if topo.large_scale_db is None:
        raise ValueError("topology has no large-scale gains; run large_scale_fading first")

    num_aps, num_ues, n = topo.num_aps, topo.num_ues, cfg.num_antennas
    num_paths = cfg.nlos_paths + 1
    pl_lin = 10.0 ** (topo.large_scale_db / 10.0)

    gains = np.empty((num_aps, num_ues, num_paths), dtype=np.complex128)
    dirs = np.empty((num_aps, num_ues, num_paths))
    gains[..., 0] = _cn(rng, (num_aps, num_ues)) * np.sqrt(pl_lin)
    dirs[..., 0] = bearing_directions(topo)
    if cfg.nlos_paths:
        nlos_var = pl_lin * 10.0 ** (cfg.nlos_power_offset_db / 10.0)
        dirs[..., 1:] = rng.uniform(-0.5, 0.5, size=(num_aps, num_ues, cfg.nlos_paths))
        gains[..., 1:] = _cn(rng, (num_aps, num_ues, cfg.nlos_paths)) * np.sqrt(nlos_var)[..., None]

    # Σ_p β_p a(θ_p), all links at once
    v = np.arange(n) - (n - 1) / 2.0
    steering = np.exp(-2j * np.pi * dirs[..., None] * v) / np.sqrt(n)
    h = np.einsum("lkp,lkpn->lkn", gains, steering)

    return ChannelSet(
        antenna_domain=h,
        beamspace=beamspace_transform(h),
        path_gains=gains,
        path_dirs=dirs,
    )
