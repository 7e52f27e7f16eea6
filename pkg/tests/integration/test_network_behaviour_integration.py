"""
Network-level behaviour over many random drops.

Drop counts are kept small enough for a CI run; every test here is marked slow.
"""

from collections import defaultdict
from statistics import median

import numpy as np
import pytest

from agent.core.precoding import gram_matrix, solve_precoders
from coordinator.core.coordinator import Coordinator
from coordinator.core.precoder import run_wsmse, update_mu
from coordinator.harness.runner import drop_seed, run_experiment
from shared.config import with_overrides
from shared.metrics import mse_all
from shared.models import (
    ExactSolver,
    ExperimentKind,
    ExperimentSpec,
    FlopCounter,
    PrecoderState,
    Scheme,
    SystemConfig,
)
from shared.numerics import hermitian_eig
from tests.helpers import random_effective_channels

pytestmark = [pytest.mark.integration, pytest.mark.slow]


def _final_rates(rows):
    """{sweep: {drop: sum-rate of the last iteration}} from convergence rows."""
    last = defaultdict(dict)
    for row in sorted(rows, key=lambda r: r.iter):
        last[row.sweep][row.drop] = row.sum_rate
    return last


def _mean_by(rows, key):
    groups = defaultdict(list)
    for row in rows:
        groups[key(row)].append(row.sum_rate)
    return {k: float(np.mean(v)) for k, v in groups.items()}


def _bootstrap_lower(diffs, rng, resamples=4000, level=0.95):
    """One-sided lower confidence bound of the mean of paired differences."""
    diffs = np.asarray(diffs)
    idx = rng.integers(0, diffs.size, size=(resamples, diffs.size))
    return float(np.quantile(diffs[idx].mean(axis=1), 1.0 - level))


class TestDescent:
    def test_exact_objective_never_increases(self):
        """Exact-mode WSMSE objective is non-increasing on 100 random drops"""
        cfg = SystemConfig(L=8, K=4, N=16, N_RF=4, M=2, bisection_tol=1e-12)

        worst = -np.inf
        for drop in range(100):
            coord = Coordinator(cfg)
            coord.prepare_drop(np.random.default_rng(drop_seed(17, drop)))
            eff = coord.distribute_channels(coord.select_beams(Scheme.PROPOSED))
            history = run_wsmse(eff, cfg, agents=coord.agents).objective_history
            worst = max(worst, max(b - a for a, b in zip(history, history[1:])))

        assert worst <= 1e-8


class TestReceiveCoefficients:
    def test_beat_every_grid_point(self):
        """Closed-form per-link μ is never beaten on a 41×41 complex grid"""
        cfg = SystemConfig(L=3, K=2, N=4, N_RF=2, M=2)
        serving = np.array([[True, True], [True, False], [False, True]])
        rng = np.random.default_rng(8)
        offsets = np.linspace(-1.0, 1.0, 41)
        grid = (offsets[:, None] + 1j * offsets[None, :]).ravel()

        for _ in range(200):
            eff = random_effective_channels(rng, serving, 2)
            z = (rng.standard_normal((3, 2, 2)) + 1j * rng.standard_normal((3, 2, 2))) * 0.3
            z *= serving[:, :, None]
            state = PrecoderState(
                z=z,
                mu=np.zeros(2, dtype=complex),
                mu_link=np.zeros((3, 2), dtype=complex),
                alpha=np.ones(2),
                lam=np.zeros(3),
            )
            _, mu_link = update_mu(state, eff, cfg)
            best = mse_all(z, mu_link, eff, cfg)

            l, k = 0, int(rng.integers(0, 2))
            span = max(abs(mu_link[l, k]), 1e-12)
            for step in grid:
                trial = mu_link.copy()
                trial[l, k] += span * step
                assert mse_all(z, trial, eff, cfg)[k] >= best[k] - 1e-12 * abs(best[k])


class TestSolverEquivalence:
    def test_lowrank_matches_dense_on_many_subproblems(self):
        """Eigenbasis closed form equals the LU solve on 1000 random per-AP subproblems"""
        rng = np.random.default_rng(21)
        for _ in range(1000):
            m = int(rng.integers(2, 9))
            users = int(rng.integers(1, 7))
            h = rng.standard_normal((users, m)) + 1j * rng.standard_normal((users, m))
            gram = gram_matrix(h, rng.uniform(0.1, 3.0, users))
            eig = hermitian_eig(gram)
            lam = float(rng.uniform(0.05, 1.0)) * max(float(eig.eigenvalues[0]), 1.0)
            rhs = rng.standard_normal((users, m)) + 1j * rng.standard_normal((users, m))

            lowrank = solve_precoders(gram, eig, rhs, lam)
            dense = solve_precoders(gram, eig, rhs, lam, exact_solver=ExactSolver.DENSE)

            assert np.linalg.norm(lowrank - dense) <= 1e-8 * np.linalg.norm(dense)


class TestConvergence:
    def test_median_iterations(self):
        """Exact WSMSE settles to 1e-3 relative sum-rate change in ten iterations or fewer"""
        spec = ExperimentSpec(
            kind=ExperimentKind.CONVERGENCE,
            base=SystemConfig(conv_tol=1e-3),
            drops=20,
            seed=3,
        )

        rows = run_experiment(spec, workers=4).rows
        iterations = defaultdict(int)
        for row in rows:
            iterations[row.drop] = max(iterations[row.drop], row.iter)

        assert len(iterations) == 20
        assert median(iterations.values()) <= 10

    @pytest.fixture(scope="class")
    def series_rates(self):
        """Final sum-rates per Neumann order, with and without warm starts, on shared drops"""

        def final(warm_start):
            spec = ExperimentSpec(
                kind=ExperimentKind.CONVERGENCE,
                base=SystemConfig(nse_warm_start=warm_start),
                nse_orders=[1, 7, 50],
                drops=8,
                seed=29,
            )
            rates = _final_rates(run_experiment(spec, workers=4).rows)
            return {sweep: float(np.mean(list(d.values()))) for sweep, d in rates.items()}

        return {"warm": final(True), "cold": final(False)}

    def test_warm_series_tracks_exact(self, series_rates):
        """Seventh-order series lands within 2% of the exact solver; first order trails it"""
        warm = series_rates["warm"]
        exact = warm[float("inf")]

        assert abs(warm[7.0] - exact) <= 0.02 * exact
        assert warm[1.0] < warm[7.0]

    def test_cold_series_ordering_and_gap(self, series_rates):
        """Without warm starts the truncation error persists and shrinks only with the order"""
        cold = series_rates["cold"]
        exact = cold[float("inf")]

        assert cold[1.0] < cold[7.0] < cold[50.0] <= exact * 1.01
        cold_gap = (exact - cold[7.0]) / exact
        warm_gap = abs(exact - series_rates["warm"][7.0]) / exact
        assert cold_gap > 0.1
        assert warm_gap < cold_gap


class TestSchemeOrdering:
    def test_proposed_against_baselines(self):
        """Two-stage selection is not worse than stage one alone and WSMSE beats ZF"""
        spec = ExperimentSpec(
            kind=ExperimentKind.CUSTOM,
            base=SystemConfig(N=32, K=8),
            schemes=list(Scheme),
            drops=40,
            seed=5,
        )
        rows = run_experiment(spec, workers=4).rows
        rates = defaultdict(dict)
        for row in rows:
            rates[row.scheme][row.drop] = row.sum_rate
        drops = sorted(rates[Scheme.PROPOSED.value])

        def paired(a, b):
            return np.array([rates[a.value][d] - rates[b.value][d] for d in drops])

        rng = np.random.default_rng(0)
        iabs_mean = float(np.mean([rates[Scheme.IABS_ONLY.value][d] for d in drops]))
        over_iabs = _bootstrap_lower(paired(Scheme.PROPOSED, Scheme.IABS_ONLY), rng)
        over_zf = _bootstrap_lower(paired(Scheme.PROPOSED, Scheme.PROPOSED_BS_ZF), rng)

        assert over_iabs >= -0.02 * iabs_mean
        assert over_zf > 0.0


class TestTrends:
    def test_sum_rate_grows_with_power(self):
        """Mean sum-rate does not fall as the per-AP budget rises"""
        powers = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0]
        spec = ExperimentSpec(
            kind=ExperimentKind.POWER_SWEEP,
            base=SystemConfig(),
            sweep_field="p_max_w",
            sweep_values=powers,
            drops=10,
            seed=13,
        )

        means = _mean_by(run_experiment(spec, workers=4).rows, lambda row: row.sweep)

        for low, high in zip(powers, powers[1:]):
            assert means[high] >= means[low] * (1 - 1e-3)

    def test_sum_rate_grows_with_antennas(self):
        """Mean sum-rate does not fall from 16 to 32 to 64 antennas"""
        sizes = [16, 32, 64]
        spec = ExperimentSpec(
            kind=ExperimentKind.ANTENNA_SWEEP,
            base=SystemConfig(),
            sweep_field="num_antennas",
            sweep_values=sizes,
            drops=10,
            seed=19,
        )

        means = _mean_by(run_experiment(spec, workers=4).rows, lambda row: row.sweep)

        for low, high in zip(sizes, sizes[1:]):
            assert means[float(high)] >= means[float(low)] * (1 - 1e-3)


class TestComplexity:
    @staticmethod
    def _slope(sizes, costs):
        return float(np.polyfit(np.log(sizes), np.log(costs), 1)[0])

    def test_series_is_linear_and_dense_is_cubic_in_rf_chains(self):
        """Per-UE solve multiplies: slope ~1 for the series at fixed rank, ~3 for LU"""
        rng = np.random.default_rng(2)
        sizes = [8, 16, 32, 64]
        series_costs, dense_costs = [], []
        for m in sizes:
            h = rng.standard_normal((4, m)) + 1j * rng.standard_normal((4, m))
            gram = gram_matrix(h, np.ones(4))
            eig = hermitian_eig(gram)
            rhs = h[:1]
            series, dense = FlopCounter(), FlopCounter()

            solve_precoders(gram, eig, rhs, 1.0, nse_order=7, fc=series)
            solve_precoders(gram, eig, rhs, 1.0, exact_solver=ExactSolver.DENSE, fc=dense)
            series_costs.append(series.complex_multiplies)
            dense_costs.append(dense.complex_multiplies)

        assert self._slope(sizes, series_costs) == pytest.approx(1.0, abs=0.3)
        assert self._slope(sizes, dense_costs) == pytest.approx(3.0, abs=0.3)

    def test_harness_cost_includes_eigendecomposition(self):
        """Reported flops cover the per-AP eigendecomposition as well as the solves"""
        cfg = SystemConfig(L=4, K=3, N=8, N_RF=4, M=2, area_m=100.0, max_iters=5, rng_seed=7)
        coord = Coordinator(with_overrides(cfg, nse_order=3))
        coord.prepare_drop(np.random.default_rng(cfg.rng_seed))

        outcome = coord.run_scheme(Scheme.PROPOSED)

        replies = [reply for agent in coord.agents for reply in agent.history]
        solve_only = sum(reply.solve_flops.total for reply in replies)
        assert outcome.flops == solve_only + sum(reply.eig_flops.total for reply in replies)
        assert outcome.flops > solve_only
