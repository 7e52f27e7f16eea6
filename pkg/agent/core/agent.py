# Access-point agent: everything one AP computes from its own CSI
import logging
import time
from typing import List, Optional

import numpy as np

from agent.core.beams import assign_intra
from agent.core.precoding import (
    bisect_lambda,
    gram_matrix,
    matched_filter,
    solve_precoders,
    zero_forcing,
)
from shared.models import (
    ApBeamMap,
    ChannelSet,
    FlopCounter,
    PrecodingRequest,
    PrecodingResult,
    SystemConfig,
    Topology,
)
from shared.numerics import effective_rank, hermitian_eig

logger = logging.getLogger(__name__)


class AccessPointAgent:
    """
    Local processing of one access point in the distributed precoder.

    The agent only ever holds its own effective channels h̄_kl (one row per UE,
    K×N_RF). Everything it learns about the rest of the network arrives as
    per-UE scalars inside a PrecodingRequest, so no channel of another AP can
    leak into its computation.

    Attributes:
        ap: Index l of this AP
        cfg: Scenario parameters shared by the network
        channels: K×N_RF effective channels of this AP, None until loaded
        served: Indices of the UEs in K_l
        history: Replies produced so far, most recent last
    """

    def __init__(self, ap: int, cfg: SystemConfig):
        self.ap = ap
        self.cfg = cfg
        self.channels: Optional[np.ndarray] = None
        self.served: np.ndarray = np.zeros(0, dtype=int)
        self.history: List[PrecodingResult] = []

    def select_beams(self, ch: ChannelSet, topo: Topology) -> ApBeamMap:
        """Intra-cluster beam assignment from this AP's beamspace channels."""
        beam_map = assign_intra(ch, topo, self.ap, self.cfg.num_rf_chains)
        logger.debug(f"AP {self.ap} selected beams {beam_map.beams()}")
        return beam_map

    def load_effective_channels(self, channels: np.ndarray, served: np.ndarray) -> None:
        """Store this AP's K×N_RF effective channels and its served set."""
        self.channels = np.array(channels, dtype=np.complex128, copy=True)
        self.served = np.asarray(served, dtype=int)
        self.history = []

    def _require_channels(self) -> np.ndarray:
        if self.channels is None:
            raise RuntimeError(f"AP {self.ap} has no effective channels loaded")
        return self.channels

    def initial_precoders(self) -> np.ndarray:
        return matched_filter(self._require_channels(), self.served, self.cfg.p_max_w)

    def update_precoders(self, request: PrecodingRequest) -> PrecodingResult:
        """
        Solve this AP's precoder subproblem for the scalars in ``request``.

        Builds the weighted gram matrix, eigendecomposes it, bisects the power
        multiplier and applies the regularised inverse (exact or Neumann
        series) to the right-hand side of every served UE. A Neumann solution
        that overshoots the budget is scaled back onto it. With
        ``nse_warm_start`` the series continues from this agent's previous
        reply, so repeated updates keep shrinking the truncation error.

        Args:
            request: Per-UE gram weights and right-hand-side coefficients

        Returns:
            PrecodingResult: K×N_RF precoders (zero rows for unserved UEs) and diagnostics
        """
        if request.ap != self.ap:
            raise ValueError(f"request for AP {request.ap} delivered to AP {self.ap}")
        channels = self._require_channels()
        start_time = time.time()

        eig_flops = FlopCounter()
        solve_flops = FlopCounter()
        gram = gram_matrix(channels, request.gram_weights)
        eig = hermitian_eig(gram, eig_flops)

        rhs = request.rhs_coeffs[self.served, None] * channels[self.served]
        lam, power = bisect_lambda(eig, rhs, request.p_max_w, self.cfg.bisection_tol)

        z = np.zeros_like(channels)
        rescaled = False
        if self.served.size:
            initial = None
            if request.nse_order is not None and self.cfg.nse_warm_start and self.history:
                initial = self.history[-1].z[self.served]
            rows = solve_precoders(
                gram,
                eig,
                rhs,
                lam,
                nse_order=request.nse_order,
                exact_solver=self.cfg.exact_solver,
                kappa_mode=self.cfg.kappa_mode,
                rank_tol=self.cfg.rank_tol,
                fc=solve_flops,
                initial=initial,
            )
            power = float(np.sum(np.abs(rows) ** 2))
            if power > request.p_max_w:
                rows *= np.sqrt(request.p_max_w / power)
                rescaled = request.nse_order is not None
                if rescaled:
                    logger.debug(
                        f"AP {self.ap}: series solution power {power:.4e} scaled back to "
                        f"{request.p_max_w:.4e}"
                    )
                power = request.p_max_w
            z[self.served] = rows

        result = PrecodingResult(
            ap=self.ap,
            z=z,
            lam=lam,
            power=power,
            rank=effective_rank(eig, self.cfg.rank_tol),
            rescaled=rescaled,
            solve_flops=solve_flops,
            eig_flops=eig_flops,
            elapsed_ms=(time.time() - start_time) * 1000,
        )
        self.history.append(result)
        return result

    def zero_forcing(self) -> np.ndarray:
        """K×N_RF zero-forcing precoders of the served UEs at full power."""
        channels = self._require_channels()
        z = np.zeros_like(channels)
        if self.served.size:
            rows, loaded = zero_forcing(channels[self.served], self.cfg.p_max_w)
            if loaded:
                logger.warning(f"AP {self.ap}: zero forcing needed diagonal loading")
            z[self.served] = rows
        return z
