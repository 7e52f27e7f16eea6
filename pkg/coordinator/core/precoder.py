# Distributed WSMSE precoder: CPU-side updates and dispatch to the AP agents
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np

from agent.core.agent import AccessPointAgent
from agent.core.precoding import gram_matrix
from shared.metrics import link_gains, mse_all, receive_power, sum_rate_of
from shared.models import (
    BeamAssignment,
    ChannelSet,
    EffectiveChannels,
    FlopCounter,
    InterferenceScope,
    PrecoderState,
    PrecodingRequest,
    PrecodingResult,
    SystemConfig,
    WsmseIteration,
)

logger = logging.getLogger(__name__)


def effective_channels(ch: ChannelSet, assign: BeamAssignment) -> EffectiveChannels:
    """
    Restrict every beamspace channel to the beams its AP selected.

    Row r of h̄_kl is h̃_kl at the beam of RF chain r of AP l. Channels are kept
    for every (AP, UE) pair because out-of-cluster UEs still receive interference.
    """
    num_aps, num_ues, _ = ch.beamspace.shape
    num_rf = len(assign.aps[0].rows) if assign.aps else 0
    channels = np.zeros((num_aps, num_ues, num_rf), dtype=np.complex128)
    serving = np.zeros((num_aps, num_ues), dtype=bool)
    for beam_map in assign.aps:
        beams = beam_map.beams()
        channels[beam_map.ap] = ch.beamspace[beam_map.ap][:, beams]
        for k, _ in beam_map.assigned():
            serving[beam_map.ap, k] = True
    return EffectiveChannels(channels=channels, serving=serving)


def make_agents(eff: EffectiveChannels, cfg: SystemConfig) -> List[AccessPointAgent]:
    """One agent per AP, each loaded with only its own effective channels."""
    agents = []
    for l in range(eff.num_aps):
        agent = AccessPointAgent(l, cfg)
        agent.load_effective_channels(eff.channels[l], eff.served(l))
        agents.append(agent)
    return agents


def init_precoders(
    eff: EffectiveChannels,
    cfg: SystemConfig,
    agents: Optional[Sequence[AccessPointAgent]] = None,
) -> PrecoderState:
    """Full-power matched-filter start: μ = 0, α = 1, empty histories."""
    agents = agents if agents is not None else make_agents(eff, cfg)
    z = np.stack([agent.initial_precoders() for agent in agents])
    return PrecoderState(
        z=z,
        mu=np.zeros(eff.num_ues, dtype=np.complex128),
        mu_link=np.zeros((eff.num_aps, eff.num_ues), dtype=np.complex128),
        alpha=np.ones(eff.num_ues),
        lam=np.zeros(eff.num_aps),
    )


def _direct_gains(z: np.ndarray, eff: EffectiveChannels) -> np.ndarray:
    """x[l, k] = h̄_kl^H z_kl (zero off-cluster)."""
    k_idx = np.arange(eff.num_ues)
    return link_gains(z, eff)[:, k_idx, k_idx]


def update_mu(
    state: PrecoderState, eff: EffectiveChannels, cfg: SystemConfig
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Receive coefficients minimising each UE's MSE.

    μ_kl = h̄_kl^H z_kl / T_k for every serving AP l; the per-UE scalar is
    μ_k = Σ_l μ_kl = Σ_{l∈M_k} h̄_kl^H z_kl / T_k.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (μ per UE, μ per link as an L×K array)
    """
    total = receive_power(state.z, eff, cfg)
    mu_link = _direct_gains(state.z, eff) / total[None, :] * eff.serving
    return mu_link.sum(axis=0), mu_link


def update_alpha(state: PrecoderState, eff: EffectiveChannels, cfg: SystemConfig) -> np.ndarray:
    """α_k = 1 + S_k / (T_k − S_k), the inverse MSE at the optimal receive coefficients."""
    total = receive_power(state.z, eff, cfg)
    signal = np.sum(np.abs(_direct_gains(state.z, eff)) ** 2, axis=0)
    return 1.0 + signal / (total - signal)


def gram_weights(state: PrecoderState, eff: EffectiveChannels, cfg: SystemConfig) -> np.ndarray:
    """
    L×K coefficients of h̄_kl h̄_kl^H in the gram matrix of every AP.

    w_k α_k Σ_l |μ_kl|²; in cluster scope AP l only counts the UEs it serves.
    """
    per_ue = cfg.weights * state.alpha * np.sum(np.abs(state.mu_link) ** 2, axis=0)
    weights = np.broadcast_to(per_ue, (eff.num_aps, eff.num_ues)).copy()
    if cfg.interference_scope == InterferenceScope.CLUSTER:
        weights *= eff.serving
    return weights


def local_gram(
    state: PrecoderState, eff: EffectiveChannels, cfg: SystemConfig, l: int
) -> np.ndarray:
    """
    Weighted gram H of AP ``l``; Hermitian PSD by construction.

    Network scope (the default) sums w_k α_k Σ_l' |μ_kl'|² h̄_kl h̄_kl^H over all K
    UEs; cluster scope keeps only the UEs in K_l.
    """
    return gram_matrix(eff.channels[l], gram_weights(state, eff, cfg)[l])


def wsmse_objective(state: PrecoderState, eff: EffectiveChannels, cfg: SystemConfig) -> float:
    """Σ_k w_k (α_k E_k − ln α_k)."""
    errors = mse_all(state.z, state.mu_link, eff, cfg)
    return float(np.sum(cfg.weights * (state.alpha * errors - np.log(state.alpha))))


def build_requests(
    state: PrecoderState,
    eff: EffectiveChannels,
    cfg: SystemConfig,
    nse_order: Optional[int] = None,
) -> List[PrecodingRequest]:
    """Per-AP messages carrying only global per-UE scalars."""
    weights = gram_weights(state, eff, cfg)
    rhs = (cfg.weights * state.alpha)[None, :] * state.mu_link
    return [
        PrecodingRequest(
            ap=l,
            gram_weights=weights[l],
            rhs_coeffs=rhs[l],
            p_max_w=cfg.p_max_w,
            nse_order=nse_order,
        )
        for l in range(eff.num_aps)
    ]


def update_z(
    state: PrecoderState,
    eff: EffectiveChannels,
    cfg: SystemConfig,
    nse_order: Optional[int] = None,
    agents: Optional[Sequence[AccessPointAgent]] = None,
) -> Tuple[np.ndarray, np.ndarray, List[PrecodingResult]]:
    """
    Precoder step: every AP solves its own subproblem independently.

    Returns:
        Tuple: (L×K×N_RF precoders, per-AP λ, per-AP replies)
    """
    agents = agents if agents is not None else make_agents(eff, cfg)
    results = [
        agent.update_precoders(request)
        for agent, request in zip(agents, build_requests(state, eff, cfg, nse_order))
    ]
    z = np.stack([result.z for result in results])
    lam = np.array([result.lam for result in results])
    return z, lam, results


def run_wsmse(
    eff: EffectiveChannels,
    cfg: SystemConfig,
    nse_order: Optional[int] = None,
    agents: Optional[Sequence[AccessPointAgent]] = None,
    flops: Optional[FlopCounter] = None,
) -> PrecoderState:
    """
    Block-coordinate WSMSE iterations until the sum-rate settles.

    Every iteration refreshes μ, then α, then lets each AP re-solve its
    precoders. Histories start with the matched-filter initial point and gain
    one entry per iteration. Iteration stops when the relative sum-rate
    change drops below ``conv_tol`` or after ``max_iters`` iterations.

    Args:
        eff: Effective channels of the drop
        cfg: Scenario parameters
        nse_order: Neumann order, None for exact solves
        agents: AP agents to dispatch to (created on the fly when omitted)
        flops: Optional counter charged with every AP's eigendecomposition and solve operations

    Returns:
        PrecoderState: final precoders with objective/sum-rate histories and trace
    """
    agents = agents if agents is not None else make_agents(eff, cfg)
    state = init_precoders(eff, cfg, agents)
    rate = sum_rate_of(state.z, eff, cfg)
    state.objective_history = [wsmse_objective(state, eff, cfg)]
    state.sum_rate_history = [rate]

    for iteration in range(1, cfg.max_iters + 1):
        mu, mu_link = update_mu(state, eff, cfg)
        state = state.model_copy(update={"mu": mu, "mu_link": mu_link})
        state = state.model_copy(update={"alpha": update_alpha(state, eff, cfg)})
        z, lam, results = update_z(state, eff, cfg, nse_order, agents)
        state = state.model_copy(update={"z": z, "lam": lam, "iterations": iteration})
        if flops is not None:
            for result in results:
                flops.merge(result.solve_flops)
                flops.merge(result.eig_flops)

        objective = wsmse_objective(state, eff, cfg)
        new_rate = sum_rate_of(state.z, eff, cfg)
        state.objective_history = state.objective_history + [objective]
        state.sum_rate_history = state.sum_rate_history + [new_rate]
        state.trace = state.trace + [
            WsmseIteration(
                iteration=iteration,
                objective=objective,
                sum_rate=new_rate,
                lambdas=lam.tolist(),
                powers=[result.power for result in results],
            )
        ]
        logger.debug(
            f"WSMSE iteration {iteration}: objective {objective:.6f}, sum-rate {new_rate:.6f}"
        )

        change = abs(new_rate - rate) / max(abs(rate), np.finfo(float).tiny)
        rate = new_rate
        if change < cfg.conv_tol:
            state.converged = True
            break

    return state


def zf_baseline(
    eff: EffectiveChannels,
    cfg: SystemConfig,
    agents: Optional[Sequence[AccessPointAgent]] = None,
) -> np.ndarray:
    """L×K×N_RF zero-forcing precoders, every AP at full power with equal per-UE split."""
    agents = agents if agents is not None else make_agents(eff, cfg)
    return np.stack([agent.zero_forcing() for agent in agents])
