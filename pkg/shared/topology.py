# Network drops and user-centric serving clusters
import logging
from typing import List

import numpy as np

from shared.errors import ConfigurationError
from shared.models import SystemConfig, Topology

logger = logging.getLogger(__name__)


def generate_drop(cfg: SystemConfig, rng: np.random.Generator) -> Topology:
    """Drop L APs and K UEs uniformly at random over the [0, area_m]² square."""
    ap_xy = rng.uniform(0.0, cfg.area_m, size=(cfg.num_aps, 2))
    ue_xy = rng.uniform(0.0, cfg.area_m, size=(cfg.num_ues, 2))
    return Topology(ap_xy=ap_xy, ue_xy=ue_xy)


def distances(topo: Topology) -> np.ndarray:
    """L×K AP-UE distances in metres."""
    diff = topo.ap_xy[:, None, :] - topo.ue_xy[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


def form_clusters(topo: Topology, large_scale_db: np.ndarray, cfg: SystemConfig) -> Topology:
    """
    Assign every UE a serving cluster of the M strongest APs.

    Each UE picks the min(M, L) APs with the highest large-scale gain, ties going
    to the lower AP index. An AP left with more than N_RF UEs keeps its N_RF
    strongest; every evicted UE moves to its next-best AP that is not full and
    not already serving it. Eviction repeats until no AP is overloaded.

    Args:
        topo: Drop with positions
        large_scale_db: L×K large-scale gains in dB (higher is stronger)
        cfg: Scenario parameters (M, N_RF)

    Returns:
        Topology: the same drop with M_k, K_l and the gains filled in

    Raises:
        ConfigurationError: the RF chains cannot accommodate every serving link
    """
    num_aps, num_ues = large_scale_db.shape
    cluster = min(cfg.cluster_size, num_aps)
    capacity = cfg.num_rf_chains

    if num_ues * cluster > num_aps * capacity:
        raise ConfigurationError(
            f"{num_ues} UEs x {cluster} serving APs exceed {num_aps} APs x {capacity} RF chains"
        )

    # Preference order per UE: strongest first, lower index on ties
    preference = [
        sorted(range(num_aps), key=lambda l, k=k: (-large_scale_db[l, k], l))
        for k in range(num_ues)
    ]
    serving: List[set] = [set(preference[k][:cluster]) for k in range(num_ues)]
    next_choice = [cluster] * num_ues
    load = np.zeros(num_aps, dtype=int)
    for aps in serving:
        for l in aps:
            load[l] += 1

    evictions = 0
    while True:
        overloaded = np.flatnonzero(load > capacity)
        if overloaded.size == 0:
            break
        l = int(overloaded[0])
        members = [k for k in range(num_ues) if l in serving[k]]
        members.sort(key=lambda k: (-large_scale_db[l, k], k))
        for k in members[capacity:]:
            serving[k].discard(l)
            load[l] -= 1
            evictions += 1
            moved = False
            while next_choice[k] < num_aps:
                candidate = preference[k][next_choice[k]]
                next_choice[k] += 1
                if candidate not in serving[k] and load[candidate] < capacity:
                    serving[k].add(candidate)
                    load[candidate] += 1
                    moved = True
                    break
            if not moved:
                raise ConfigurationError(
                    f"UE {k} evicted from AP {l} has no AP with a free RF chain left"
                )

    if evictions:
        logger.debug(f"Cluster formation moved {evictions} serving links off overloaded APs")

    serving_aps = [sorted(aps) for aps in serving]
    served_ues = [[k for k in range(num_ues) if l in serving[k]] for l in range(num_aps)]
    return topo.model_copy(
        update={
            "serving_aps": serving_aps,
            "served_ues": served_ues,
            "large_scale_db": np.array(large_scale_db, dtype=float),
        }
    )


def serving_mask(topo: Topology, ue: int, ap: int) -> bool:
    """D_il: true iff AP ``ap`` belongs to the serving cluster of UE ``ue``."""
    if not 0 <= ue < topo.num_ues or not 0 <= ap < topo.num_aps:
        raise IndexError(f"UE {ue} / AP {ap} out of range")
    return topo.is_served(ue, ap)
