# Network-wide beam selection: inter-cluster energy scan and iterative refinement
import logging
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from agent.core.beams import assign_intra, beam_energies, beam_energy, best_free_beam, build_rows
from shared.models import (
    ApBeamMap,
    BeamAssignment,
    ChannelSet,
    RatioReport,
    Reassignment,
    RefinementStep,
    Scheme,
    SystemConfig,
    Topology,
)

logger = logging.getLogger(__name__)


def _ratio_report(
    ch: ChannelSet, topo: Topology, l: int, k: int, n: int
) -> Optional[RatioReport]:
    """Worst out-of-cluster offender on beam ``n`` of AP ``l``, or None without outsiders."""
    served = set(topo.served_ues[l])
    outsiders = [i for i in range(topo.num_ues) if i not in served]
    if not outsiders:
        return None
    ice = beam_energy(ch, k, l, n)
    oce_all = np.abs(ch.beamspace[l, outsiders, n]) ** 2
    worst = int(np.argmax(oce_all))
    oce = float(oce_all[worst])
    ratio = float("inf") if ice == 0.0 else oce / ice
    return RatioReport(ue=k, ap=l, beam=n, ice=ice, oce=oce, ratio=ratio, offender=outsiders[worst])


def scan_intercluster(
    assign: BeamAssignment, ch: ChannelSet, topo: Topology, cfg: SystemConfig
) -> List[RatioReport]:
    """
    Every assigned beam whose out-of-cluster / intra-cluster energy ratio exceeds γ_th.

    For beam n carrying UE k at AP l the ratio is max over UEs outside K_l of
    |h̃_k'l[n]|² divided by |h̃_kl[n]|² (+inf when the UE itself sees no energy).
    """
    reports = []
    for beam_map in assign.aps:
        for k, n in beam_map.assigned():
            report = _ratio_report(ch, topo, beam_map.ap, k, n)
            if report is not None and report.ratio > cfg.gamma_th:
                reports.append(report)
    return reports


def refine_assignment(
    assign: BeamAssignment, ch: ChannelSet, topo: Topology, cfg: SystemConfig
) -> BeamAssignment:
    """
    Move UEs off beams that leak too much energy to out-of-cluster UEs.

    Each round rescans the assignment; every reported UE switches to its
    strongest beam that is neither in use at that AP nor already tried for it.
    A UE with no untried beam left settles on the lowest-ratio beam it has
    held. The loop stops when nothing is reported or after the refinement
    budget (N rounds by default).

    Returns:
        BeamAssignment: refined beams with padding rebuilt and the round-by-round trace
    """
    num_rf = cfg.num_rf_chains
    current: Dict[int, Dict[int, int]] = {
        bm.ap: {k: n for k, n in bm.assigned()} for bm in assign.aps
    }
    tried: Dict[Tuple[int, int], Set[int]] = {
        (l, k): {n} for l, beams in current.items() for k, n in beams.items()
    }
    best_seen: Dict[Tuple[int, int], Tuple[float, int]] = {}
    exhausted: Set[Tuple[int, int]] = set()
    trace: List[RefinementStep] = []

    working = assign
    for iteration in range(cfg.refinement_budget):
        reports = [
            r for r in scan_intercluster(working, ch, topo, cfg) if (r.ap, r.ue) not in exhausted
        ]
        if not reports:
            break

        moves = []
        for report in reports:
            l, k, n = report.ap, report.ue, report.beam
            key = (l, k)
            if key not in best_seen or report.ratio < best_seen[key][0]:
                best_seen[key] = (report.ratio, n)

            taken = {beam for ue, beam in current[l].items() if ue != k}
            blocked = tried[key] | taken
            candidate = best_free_beam(beam_energies(ch, k, l), blocked)
            if candidate is None:
                exhausted.add(key)
                fallback = best_seen[key][1]
                if fallback not in taken and fallback != n:
                    current[l][k] = fallback
                    moves.append(Reassignment(ap=l, ue=k, old_beam=n, new_beam=fallback))
                logger.debug(f"UE {k} at AP {l} exhausted its beams; settled on {current[l][k]}")
                continue

            tried[key].add(candidate)
            current[l][k] = candidate
            moves.append(Reassignment(ap=l, ue=k, old_beam=n, new_beam=candidate))

        trace.append(RefinementStep(iteration=iteration, reports=reports, reassignments=moves))
        working = _rebuild(assign, current, ch, topo, num_rf)
    else:
        if cfg.refinement_budget and scan_intercluster(working, ch, topo, cfg):
            logger.debug(f"Beam refinement stopped at its budget of {cfg.refinement_budget} rounds")

    refined = _rebuild(assign, current, ch, topo, num_rf)
    return refined.model_copy(update={"trace": trace, "exhausted": sorted(exhausted)})


def _rebuild(
    assign: BeamAssignment,
    current: Dict[int, Dict[int, int]],
    ch: ChannelSet,
    topo: Topology,
    num_rf: int,
) -> BeamAssignment:
    aps = [
        ApBeamMap(
            ap=bm.ap,
            rows=build_rows(ch, topo, bm.ap, current[bm.ap], num_rf),
            tags=bm.tags,
        )
        for bm in assign.aps
    ]
    return BeamAssignment(aps=aps)


def intra_cluster_assignment(
    ch: ChannelSet, topo: Topology, cfg: SystemConfig, agents: Optional[list] = None
) -> BeamAssignment:
    """Stage one at every AP, delegated to the AP agents when they are given."""
    if agents is not None:
        return BeamAssignment(aps=[agent.select_beams(ch, topo) for agent in agents])
    return BeamAssignment(
        aps=[assign_intra(ch, topo, l, cfg.num_rf_chains) for l in range(topo.num_aps)]
    )


def select_beams(
    ch: ChannelSet,
    topo: Topology,
    cfg: SystemConfig,
    scheme: Scheme = Scheme.PROPOSED,
    agents: Optional[list] = None,
) -> BeamAssignment:
    """Beam assignment of a scheme: intra-cluster only, or followed by inter-cluster refinement."""
    assign = intra_cluster_assignment(ch, topo, cfg, agents)
    if scheme == Scheme.IABS_ONLY:
        return assign
    refined = refine_assignment(assign, ch, topo, cfg)
    moved = sum(len(step.reassignments) for step in refined.trace)
    logger.debug(f"Refinement ran {len(refined.trace)} rounds and moved {moved} beams")
    return refined
