"""
Pytest configuration and shared fixtures for cfmm tests
"""

import os
import sys
from pathlib import Path

# Add project root to Python path for imports
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

# Quiet logging unless a developer asks otherwise
os.environ.setdefault("CFMM_LOG_LEVEL", "WARNING")

from typing import Optional  # noqa: E402

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from shared.channel import generate_channels, large_scale_fading  # noqa: E402
from shared.models import SystemConfig  # noqa: E402
from shared.topology import form_clusters, generate_drop  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """Four APs, three UEs, eight antennas: big enough for every code path, fast to solve."""
    return SystemConfig(
        L=4, K=3, N=8, N_RF=4, M=2, P_max=1.0, area_m=100.0, max_iters=30, rng_seed=7
    )


@pytest.fixture
def small_drop(small_cfg):
    """(topology, channels) of one seeded drop of ``small_cfg``."""
    drop_rng = np.random.default_rng(small_cfg.rng_seed)
    topo = generate_drop(small_cfg, drop_rng)
    gains = large_scale_fading(topo, small_cfg, drop_rng)
    topo = form_clusters(topo, gains, small_cfg)
    return topo, generate_channels(topo, small_cfg, drop_rng)


@pytest.fixture
def random_hermitian(rng):
    """Factory for random m×m Hermitian PSD matrices of a given rank."""

    def _make(m: int, rank: Optional[int] = None) -> np.ndarray:
        rank = m if rank is None else rank
        g = rng.standard_normal((m, rank)) + 1j * rng.standard_normal((m, rank))
        return g @ g.conj().T

    return _make
