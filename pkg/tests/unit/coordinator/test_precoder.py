import numpy as np
import pytest

from coordinator.core.beam_selection import select_beams
from coordinator.core.precoder import (
    build_requests,
    effective_channels,
    gram_weights,
    init_precoders,
    local_gram,
    make_agents,
    run_wsmse,
    update_alpha,
    update_mu,
    update_z,
    wsmse_objective,
    zf_baseline,
)
from shared.config import with_overrides
from shared.metrics import mse_all
from shared.models import (
    EffectiveChannels,
    FlopCounter,
    InterferenceScope,
    Scheme,
    SystemConfig,
)
from shared.numerics import effective_rank, hermitian_eig
from tests.helpers import random_effective_channels


@pytest.fixture
def drop_eff(small_cfg, small_drop):
    topo, ch = small_drop
    assign = select_beams(ch, topo, small_cfg, Scheme.PROPOSED)
    return topo, ch, assign, effective_channels(ch, assign)


def _mu_alpha_state(eff, cfg):
    state = init_precoders(eff, cfg)
    mu, mu_link = update_mu(state, eff, cfg)
    state = state.model_copy(update={"mu": mu, "mu_link": mu_link})
    return state.model_copy(update={"alpha": update_alpha(state, eff, cfg)})


class TestEffectiveChannels:
    def test_rows_follow_selected_beams(self, small_cfg, drop_eff):
        topo, ch, assign, eff = drop_eff

        assert eff.channels.shape == (small_cfg.num_aps, small_cfg.num_ues, small_cfg.num_rf_chains)
        for l in range(small_cfg.num_aps):
            np.testing.assert_array_equal(eff.channels[l], ch.beamspace[l][:, assign.beams(l)])

    def test_serving_mask_matches_clusters(self, drop_eff):
        topo, _, _, eff = drop_eff
        np.testing.assert_array_equal(eff.serving, topo.mask())
        for l, ues in enumerate(topo.served_ues):
            assert list(eff.served(l)) == ues


class TestInitialPoint:
    def test_matched_filter_start(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = init_precoders(eff, small_cfg)

        powers = state.powers()
        for l in range(eff.num_aps):
            expected = small_cfg.p_max_w if eff.served(l).size else 0.0
            assert powers[l] == pytest.approx(expected)
        np.testing.assert_array_equal(state.z[~eff.serving], 0.0)
        np.testing.assert_array_equal(state.alpha, 1.0)
        np.testing.assert_array_equal(state.mu, 0.0)
        assert state.objective_history == []


class TestAuxiliaryUpdates:
    def test_mu_is_zero_off_cluster(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = _mu_alpha_state(eff, small_cfg)

        np.testing.assert_array_equal(state.mu_link[~eff.serving], 0.0)
        np.testing.assert_allclose(state.mu, state.mu_link.sum(axis=0))

    def test_alpha_is_inverse_mse(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = _mu_alpha_state(eff, small_cfg)

        errors = mse_all(state.z, state.mu_link, eff, small_cfg)
        np.testing.assert_allclose(state.alpha, 1.0 / errors, rtol=1e-9)
        assert np.all(state.alpha >= 1.0)

    def test_mu_update_lowers_objective(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        start = init_precoders(eff, small_cfg)
        mu, mu_link = update_mu(start, eff, small_cfg)
        updated = start.model_copy(update={"mu": mu, "mu_link": mu_link})

        assert wsmse_objective(start, eff, small_cfg) == pytest.approx(small_cfg.num_ues)
        assert wsmse_objective(updated, eff, small_cfg) < small_cfg.num_ues


class TestGram:
    @pytest.fixture
    def layout(self, rng):
        serving = np.array([[True, True, False, False], [False, False, True, True]])
        return random_effective_channels(rng, serving, 4)

    def test_cluster_scope_uses_served_users_only(self, layout):
        cfg = SystemConfig(L=2, K=4, N=8, N_RF=4, M=1, interference_scope="cluster")
        state = _mu_alpha_state(layout, cfg)

        weights = gram_weights(state, layout, cfg)
        np.testing.assert_array_equal(weights[~layout.serving], 0.0)
        rank = effective_rank(hermitian_eig(local_gram(state, layout, cfg, 0)))
        assert rank == 2

    def test_network_scope_counts_every_user(self, layout):
        cfg = SystemConfig(L=2, K=4, N=8, N_RF=4, M=1)
        state = _mu_alpha_state(layout, cfg)

        assert cfg.interference_scope == InterferenceScope.NETWORK
        assert np.all(gram_weights(state, layout, cfg) > 0)
        assert effective_rank(hermitian_eig(local_gram(state, layout, cfg, 0))) == 4

    def test_requests_carry_only_scalars(self, layout):
        cfg = SystemConfig(L=2, K=4, N=8, N_RF=4, M=1, t=3)
        state = _mu_alpha_state(layout, cfg)

        requests = build_requests(state, layout, cfg, nse_order=3)

        assert [r.ap for r in requests] == [0, 1]
        for request in requests:
            assert request.gram_weights.shape == (4,)
            assert request.rhs_coeffs.shape == (4,)
            assert request.nse_order == 3
            np.testing.assert_array_equal(request.rhs_coeffs[~layout.serving[request.ap]], 0.0)


class TestUpdateZ:
    def test_respects_budget_and_clusters(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = _mu_alpha_state(eff, small_cfg)

        z, lam, results = update_z(state, eff, small_cfg)

        assert z.shape == state.z.shape
        assert lam.shape == (eff.num_aps,)
        np.testing.assert_array_equal(z[~eff.serving], 0.0)
        powers = np.sum(np.abs(z) ** 2, axis=(1, 2))
        assert np.all(powers <= small_cfg.p_max_w * (1 + 1e-9))
        assert [r.ap for r in results] == list(range(eff.num_aps))

    def test_reuses_given_agents(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        agents = make_agents(eff, small_cfg)
        state = _mu_alpha_state(eff, small_cfg)

        update_z(state, eff, small_cfg, agents=agents)

        assert all(len(agent.history) == 1 for agent in agents)


class TestRunWsmse:
    def test_objective_never_increases(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = run_wsmse(eff, with_overrides(small_cfg, bisection_tol=1e-12))

        history = state.objective_history
        assert len(history) == state.iterations + 1
        for before, after in zip(history, history[1:]):
            assert after <= before + 1e-8

    def test_histories_and_trace(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        flops = FlopCounter()
        state = run_wsmse(eff, small_cfg, flops=flops)

        assert 1 <= state.iterations <= small_cfg.max_iters
        assert len(state.sum_rate_history) == state.iterations + 1
        assert [step.iteration for step in state.trace] == list(range(1, state.iterations + 1))
        assert state.sum_rate_history[-1] == pytest.approx(state.trace[-1].sum_rate)
        assert flops.total > 0
        np.testing.assert_array_equal(state.z[~eff.serving], 0.0)

    def test_improves_on_matched_filter(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = run_wsmse(eff, small_cfg)
        assert state.sum_rate_history[-1] > state.sum_rate_history[0]

    def test_stops_at_max_iters(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        cfg = with_overrides(small_cfg, max_iters=2, conv_tol=1e-15)

        state = run_wsmse(eff, cfg)

        assert state.iterations == 2
        assert not state.converged

    def test_series_mode_stays_feasible(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        state = run_wsmse(eff, small_cfg, nse_order=2)

        assert np.all(state.powers() <= small_cfg.p_max_w * (1 + 1e-9))
        assert all(rate >= 0 for rate in state.sum_rate_history)

    def test_sum_rate_never_decreases(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        rates = run_wsmse(eff, small_cfg).sum_rate_history

        for before, after in zip(rates, rates[1:]):
            assert after >= before - 1e-5 * max(1.0, abs(before))

    def test_flops_cover_eigendecomposition_and_solves(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        agents = make_agents(eff, small_cfg)
        flops = FlopCounter()

        run_wsmse(eff, small_cfg, agents=agents, flops=flops)

        replies = [reply for agent in agents for reply in agent.history]
        assert flops.total == sum(r.solve_flops.total + r.eig_flops.total for r in replies)

    def test_single_user_reaches_full_power_mrt(self):
        cfg = SystemConfig(L=1, K=1, N=4, N_RF=2, M=1, P_max=3.0, noise_dbm=30.0)
        eff = EffectiveChannels(
            channels=np.array([[[0.6, 0.8j]]]), serving=np.ones((1, 1), dtype=bool)
        )

        state = run_wsmse(eff, cfg)

        # log2(1 + P_max‖h̄‖²/δ²) with ‖h̄‖ = 1 and δ² = 1 W
        assert state.sum_rate_history[-1] == pytest.approx(2.0, rel=1e-7)
        assert state.powers()[0] == pytest.approx(3.0, rel=1e-7)
        direction = state.z[0, 0] / np.linalg.norm(state.z[0, 0])
        assert abs(np.vdot(direction, eff.channels[0, 0])) == pytest.approx(1.0)


class TestZeroForcingBaseline:
    def test_full_power_per_serving_ap(self, small_cfg, drop_eff):
        *_, eff = drop_eff
        z = zf_baseline(eff, small_cfg)

        powers = np.sum(np.abs(z) ** 2, axis=(1, 2))
        for l in range(eff.num_aps):
            expected = small_cfg.p_max_w if eff.served(l).size else 0.0
            assert powers[l] == pytest.approx(expected)
        np.testing.assert_array_equal(z[~eff.serving], 0.0)
