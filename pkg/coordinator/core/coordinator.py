# Central processing unit: owns the AP agents of one drop and runs the pipeline
import logging
import time
from typing import List, Optional

import numpy as np

from agent.core.agent import AccessPointAgent
from coordinator.core.beam_selection import select_beams
from coordinator.core.precoder import effective_channels, run_wsmse, zf_baseline
from shared.channel import generate_channels, large_scale_fading
from shared.metrics import rate_report
from shared.models import (
    BeamAssignment,
    ChannelSet,
    DropOutcome,
    EffectiveChannels,
    FlopCounter,
    Scheme,
    SystemConfig,
    Topology,
)
from shared.topology import form_clusters, generate_drop

logger = logging.getLogger(__name__)


class Coordinator:
    """
    Central processing unit of a user-centric cell-free network.

    Generates one drop, registers an AccessPointAgent per AP, runs beam
    selection (stage one on the agents, refinement centrally) and drives the
    distributed precoder by exchanging per-UE scalars with the agents.

    Several schemes can be run on the same prepared drop, which keeps the
    comparison between them on identical channels.
    """

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg

        # Drop state, filled by prepare_drop
        self.topology: Optional[Topology] = None
        self.channels: Optional[ChannelSet] = None

        # One agent per AP, indexed by AP
        self.agents: List[AccessPointAgent] = []

        # Outcomes of every scheme run on this drop
        self.history: List[DropOutcome] = []

    def prepare_drop(self, rng: np.random.Generator) -> Topology:
        """
        Draw positions, large-scale fading, clusters and small-scale channels.

        Raises:
            ConfigurationError: the serving clusters cannot be formed
        """
        topo = generate_drop(self.cfg, rng)
        gains_db = large_scale_fading(topo, self.cfg, rng)
        topo = form_clusters(topo, gains_db, self.cfg)
        self.topology = topo
        self.channels = generate_channels(topo, self.cfg, rng)
        self.agents = [AccessPointAgent(l, self.cfg) for l in range(self.cfg.num_aps)]
        self.history = []
        logger.debug(
            f"Prepared drop: {self.cfg.num_aps} APs, {self.cfg.num_ues} UEs, "
            f"loads {[len(ues) for ues in topo.served_ues]}"
        )
        return topo

    def _require_drop(self):
        if self.topology is None or self.channels is None:
            raise RuntimeError("no drop prepared; call prepare_drop first")
        return self.topology, self.channels

    def select_beams(self, scheme: Scheme) -> BeamAssignment:
        topo, ch = self._require_drop()
        return select_beams(ch, topo, self.cfg, scheme, agents=self.agents)

    def distribute_channels(self, assign: BeamAssignment) -> EffectiveChannels:
        """Form the effective channels and hand each agent its own slice."""
        _, ch = self._require_drop()
        eff = effective_channels(ch, assign)
        for agent in self.agents:
            agent.load_effective_channels(eff.channels[agent.ap], eff.served(agent.ap))
        return eff

    def run_scheme(self, scheme: Scheme) -> DropOutcome:
        """
        Beam selection, precoding and rate evaluation of one scheme on the prepared drop.

        The Neumann order comes from the config (``"exact"`` solves exactly).

        Returns:
            DropOutcome: rates, assignment, precoder state and solver cost
        """
        start_time = time.time()
        assign = self.select_beams(scheme)
        eff = self.distribute_channels(assign)

        nse_order = None if self.cfg.nse_order == "exact" else int(self.cfg.nse_order)
        flops = FlopCounter()
        state = None
        if scheme == Scheme.PROPOSED_BS_ZF:
            z = zf_baseline(eff, self.cfg, self.agents)
        else:
            state = run_wsmse(eff, self.cfg, nse_order, self.agents, flops)
            z = state.z
            if not state.converged:
                logger.debug(f"WSMSE hit max_iters={self.cfg.max_iters} without converging")

        report = rate_report(z, eff, self.cfg)
        outcome = DropOutcome(
            scheme=scheme,
            nse_order=nse_order,
            report=report,
            assignment=assign,
            state=state,
            flops=flops.total,
            wall_ms=(time.time() - start_time) * 1000,
        )
        self.history.append(outcome)
        logger.debug(f"Scheme {scheme.value}: sum-rate {report.sum_rate:.4f} bit/s/Hz")
        return outcome
