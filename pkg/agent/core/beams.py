# Per-AP beam selection: strongest beams, collision classification, intra-cluster assignment
import logging
from typing import Iterable, List, Optional, Set, Tuple

import numpy as np

from shared.errors import ConfigurationError
from shared.models import ApBeamMap, ChannelSet, RfChainRow, Topology, UserClass

logger = logging.getLogger(__name__)


def beam_energy(ch: ChannelSet, k: int, l: int, n: int) -> float:
    """|h̃_kl[n]|², the energy UE k sees on beam n of AP l."""
    return float(np.abs(ch.beamspace[l, k, n]) ** 2)


def beam_energies(ch: ChannelSet, k: int, l: int) -> np.ndarray:
    return np.abs(ch.beamspace[l, k]) ** 2


def strongest_beam(ch: ChannelSet, k: int, l: int) -> int:
    # argmax returns the first maximum, i.e. the lowest beam index on ties
    return int(np.argmax(beam_energies(ch, k, l)))


def best_free_beam(energies: np.ndarray, taken: Iterable[int]) -> Optional[int]:
    """Highest-energy beam outside ``taken`` (lowest index on ties), or None if all are taken."""
    masked = np.where(np.isin(np.arange(energies.size), list(taken)), -np.inf, energies)
    if np.all(np.isneginf(masked)):
        return None
    return int(np.argmax(masked))


def classify_users(ch: ChannelSet, topo: Topology, l: int) -> Tuple[List[int], List[int]]:
    """
    Split the UEs served by AP ``l`` into non-interfering and interfering users.

    A UE is an NIU when no other UE of K_l shares its strongest beam.

    Returns:
        Tuple[List[int], List[int]]: (NIUs, IUs), each in ascending UE order
    """
    served = topo.served_ues[l]
    strongest = {k: strongest_beam(ch, k, l) for k in served}
    counts: dict = {}
    for beam in strongest.values():
        counts[beam] = counts.get(beam, 0) + 1
    niu = [k for k in served if counts[strongest[k]] == 1]
    iu = [k for k in served if counts[strongest[k]] > 1]
    return niu, iu


def padding_beams(ch: ChannelSet, topo: Topology, l: int, taken: Set[int], count: int) -> List[int]:
    """The ``count`` free beams with the largest aggregate energy over K_l."""
    served = topo.served_ues[l]
    num_beams = ch.beamspace.shape[2]
    if served:
        aggregate = np.sum(np.abs(ch.beamspace[l, served]) ** 2, axis=0)
    else:
        aggregate = np.zeros(num_beams)
    free = [n for n in range(num_beams) if n not in taken]
    free.sort(key=lambda n: (-aggregate[n], n))
    return free[:count]


def build_rows(
    ch: ChannelSet, topo: Topology, l: int, beams_by_ue: dict, num_rf_chains: int
) -> List[RfChainRow]:
    """RF-chain rows: served UEs in ascending order, then padding rows carrying no UE."""
    rows = [RfChainRow(beam=beams_by_ue[k], ue=k) for k in sorted(beams_by_ue)]
    spare = num_rf_chains - len(rows)
    if spare > 0:
        pads = padding_beams(ch, topo, l, set(beams_by_ue.values()), spare)
        rows.extend(RfChainRow(beam=n) for n in pads)
    return rows


def assign_intra(ch: ChannelSet, topo: Topology, l: int, num_rf_chains: int) -> ApBeamMap:
    """
    Intra-cluster beam assignment at AP ``l``.

    NIUs keep their strongest beam. In every group of IUs sharing a strongest
    beam, the UE with the largest channel norm takes the contested beam; the
    remaining IUs, in descending norm, take their best beam not yet used at
    this AP. Unused RF chains are padded with the free beams of largest
    aggregate energy.

    Raises:
        ConfigurationError: more served UEs than beams
    """
    served = topo.served_ues[l]
    num_beams = ch.beamspace.shape[2]
    if len(served) > num_beams:
        raise ConfigurationError(f"AP {l} serves {len(served)} UEs but has only {num_beams} beams")

    niu, iu = classify_users(ch, topo, l)
    tags = {k: UserClass.NIU for k in niu}
    tags.update({k: UserClass.IU for k in iu})

    beams_by_ue = {k: strongest_beam(ch, k, l) for k in niu}
    norms = {k: float(np.linalg.norm(ch.antenna_domain[l, k])) for k in iu}
    by_norm = sorted(iu, key=lambda k: (-norms[k], k))

    # Group leaders first so no follower can grab another group's contested beam
    followers = []
    for k in by_norm:
        beam = strongest_beam(ch, k, l)
        if beam in beams_by_ue.values():
            followers.append(k)
        else:
            beams_by_ue[k] = beam

    for k in followers:
        beam = best_free_beam(beam_energies(ch, k, l), beams_by_ue.values())
        if beam is None:
            raise ConfigurationError(f"AP {l} ran out of beams while placing UE {k}")
        beams_by_ue[k] = beam

    return ApBeamMap(ap=l, rows=build_rows(ch, topo, l, beams_by_ue, num_rf_chains), tags=tags)
