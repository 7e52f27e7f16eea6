"""
Hand-built drops for tests that need exact beam energies or cluster layouts
"""

from typing import List, Optional

import numpy as np

from shared.channel import dft_matrix
from shared.models import ChannelSet, EffectiveChannels, Topology


def make_channel_set(beamspace: np.ndarray) -> ChannelSet:
    """ChannelSet whose beamspace is exactly ``beamspace`` (L×K×N), antenna domain derived."""
    beamspace = np.asarray(beamspace, dtype=np.complex128)
    u = dft_matrix(beamspace.shape[-1])
    antenna = beamspace @ u.T
    num_aps, num_ues, _ = beamspace.shape
    return ChannelSet(
        antenna_domain=antenna,
        beamspace=beamspace,
        path_gains=np.zeros((num_aps, num_ues, 1), dtype=np.complex128),
        path_dirs=np.zeros((num_aps, num_ues, 1)),
    )


def make_topology(served_ues: List[List[int]], num_ues: Optional[int] = None) -> Topology:
    """Topology with fixed clusters and dummy positions."""
    num_aps = len(served_ues)
    if num_ues is None:
        num_ues = 1 + max(k for ues in served_ues for k in ues)
    serving_aps = [[l for l in range(num_aps) if k in served_ues[l]] for k in range(num_ues)]
    return Topology(
        ap_xy=np.zeros((num_aps, 2)),
        ue_xy=np.zeros((num_ues, 2)),
        serving_aps=serving_aps,
        served_ues=[sorted(ues) for ues in served_ues],
    )


def random_effective_channels(
    rng: np.random.Generator, serving: np.ndarray, num_rf: int, scale: float = 1e-4
) -> EffectiveChannels:
    """Gaussian effective channels for an L×K serving mask."""
    num_aps, num_ues = serving.shape
    shape = (num_aps, num_ues, num_rf)
    h = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return EffectiveChannels(channels=h, serving=np.asarray(serving, dtype=bool))
