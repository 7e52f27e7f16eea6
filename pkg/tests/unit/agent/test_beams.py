import numpy as np
import pytest

from agent.core.beams import (
    assign_intra,
    beam_energies,
    beam_energy,
    best_free_beam,
    build_rows,
    classify_users,
    padding_beams,
    strongest_beam,
)
from shared.errors import ConfigurationError
from shared.models import BeamAssignment, UserClass
from tests.helpers import make_channel_set, make_topology


@pytest.fixture
def contested():
    """One AP, four beams; UEs 0 and 1 both peak on beam 1, UE 2 on beam 3."""
    energies = np.array(
        [
            [0.1, 1.0, 0.5, 0.0],
            [0.2, 0.8, 0.0, 0.3],
            [0.0, 0.1, 0.2, 0.9],
        ]
    )
    ch = make_channel_set(np.sqrt(energies)[None, :, :])
    topo = make_topology([[0, 1, 2]])
    return ch, topo


class TestBeamEnergy:
    def test_energy_lookup(self, contested):
        ch, _ = contested
        assert beam_energy(ch, 0, 0, 1) == pytest.approx(1.0)
        np.testing.assert_allclose(beam_energies(ch, 2, 0), [0.0, 0.1, 0.2, 0.9])

    def test_strongest_beam(self, contested):
        ch, _ = contested
        assert [strongest_beam(ch, k, 0) for k in range(3)] == [1, 1, 3]

    def test_strongest_beam_tie_goes_to_lower_index(self):
        ch = make_channel_set(np.array([[[0.5, 1.0, 1.0, 0.2]]]))
        assert strongest_beam(ch, 0, 0) == 1

    def test_best_free_beam(self):
        energies = np.array([0.3, 0.9, 0.3, 0.1])
        assert best_free_beam(energies, [1]) == 0
        assert best_free_beam(energies, [0, 1]) == 2
        assert best_free_beam(energies, [0, 1, 2, 3]) is None


class TestClassification:
    def test_niu_and_iu(self, contested):
        ch, topo = contested
        niu, iu = classify_users(ch, topo, 0)

        assert niu == [2]
        assert iu == [0, 1]

    def test_all_distinct_beams_are_niu(self):
        ch = make_channel_set(np.array([[[1.0, 0.1], [0.1, 1.0]]]))
        niu, iu = classify_users(ch, make_topology([[0, 1]]), 0)
        assert niu == [0, 1]
        assert iu == []


class TestAssignIntra:
    def test_contested_beam_goes_to_strongest_user(self, contested):
        ch, topo = contested
        beam_map = assign_intra(ch, topo, 0, num_rf_chains=4)

        assert beam_map.beam_of(0) == 1  # larger channel norm
        assert beam_map.beam_of(1) == 0  # best beam left over
        assert beam_map.beam_of(2) == 3
        assert beam_map.beams() == [1, 0, 3, 2]
        assert beam_map.rows[3].ue is None
        assert beam_map.tags == {0: UserClass.IU, 1: UserClass.IU, 2: UserClass.NIU}

    def test_padding_uses_aggregate_energy(self):
        ch = make_channel_set(np.sqrt(np.array([[[0.5, 0.1, 0.9, 0.3]]])))
        topo = make_topology([[0]])

        beam_map = assign_intra(ch, topo, 0, num_rf_chains=3)

        assert beam_map.beams() == [2, 0, 3]
        assert [row.ue for row in beam_map.rows] == [0, None, None]

    def test_idle_ap_pads_lowest_beams(self):
        ch = make_channel_set(np.ones((2, 1, 4)))
        topo = make_topology([[0], []])

        beam_map = assign_intra(ch, topo, 1, num_rf_chains=2)

        assert beam_map.beams() == [0, 1]
        assert beam_map.assigned() == []

    def test_more_users_than_beams(self):
        ch = make_channel_set(np.ones((1, 3, 2)))
        with pytest.raises(ConfigurationError):
            assign_intra(ch, make_topology([[0, 1, 2]]), 0, num_rf_chains=2)

    def test_random_drop_invariants(self, small_cfg, small_drop):
        topo, ch = small_drop
        aps = [assign_intra(ch, topo, l, small_cfg.num_rf_chains) for l in range(topo.num_aps)]
        assignment = BeamAssignment(aps=aps)

        assignment.check_invariants(topo)
        for beam_map in aps:
            assert len(beam_map.rows) == small_cfg.num_rf_chains
            niu, _ = classify_users(ch, topo, beam_map.ap)
            for k in niu:
                assert beam_map.beam_of(k) == strongest_beam(ch, k, beam_map.ap)


class TestRows:
    def test_build_rows_orders_by_ue(self, contested):
        ch, topo = contested
        rows = build_rows(ch, topo, 0, {2: 3, 0: 1}, num_rf_chains=3)
        assert [(row.beam, row.ue) for row in rows] == [(1, 0), (3, 2), (2, None)]

    def test_padding_beams_skip_taken(self, contested):
        ch, topo = contested
        assert padding_beams(ch, topo, 0, {1, 3}, 2) == [2, 0]
