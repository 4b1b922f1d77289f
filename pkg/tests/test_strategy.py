"""Client strategy layer: budget choice, participation decisions,
round payoffs, and the brute-force deviation scan."""

import json
import math

import pytest

from tokenfl.mechanisms import MechanismParams, cost, value
from tokenfl.strategy import (
    ClientState,
    Deviation,
    NashReport,
    choose_epsilon,
    client_round_payoff,
    decide_participation,
    nash_check,
)

PARAMS = MechanismParams()
ZERO_COST = MechanismParams(c_min=0.0, c_max=0.0)

# Cumulative 50-round payoff of a client holding the acceptable budget
# under default parameters, frozen on first computation.
PROFILE_PAYOFF_50 = 350.34465499495923


class TestChooseEpsilon:
    def test_default_is_the_acceptable_level(self):
        assert choose_epsilon(PARAMS) == 15.0

    def test_override_passes_through(self):
        assert choose_epsilon(PARAMS, override=25.0) == 25.0

    @pytest.mark.parametrize("override", [0.5, 26.0])
    def test_override_outside_bounds_rejected(self, override):
        with pytest.raises(ValueError):
            choose_epsilon(PARAMS, override=override)


class TestDecideParticipation:
    def test_acceptable_budget_always_joins(self):
        client = ClientState(id=0, chosen_eps=15.0)
        assert all(decide_participation(client, t, 1, PARAMS) for t in range(1, 51))

    def test_max_budget_quits_past_collapse(self):
        client = ClientState(id=0, chosen_eps=25.0)
        assert decide_participation(client, 5, 1, PARAMS)
        assert not decide_participation(client, 20, 1, PARAMS)

    def test_zero_cost_always_joins(self):
        client = ClientState(id=0, chosen_eps=25.0)
        assert decide_participation(client, 500, 1, ZERO_COST)

    def test_evicted_clients_make_no_decisions(self):
        client = ClientState(id=0, chosen_eps=15.0, evicted=True)
        with pytest.raises(ValueError):
            decide_participation(client, 1, 1, PARAMS)


class TestClientRoundPayoff:
    def test_idle_round_is_zero(self):
        assert client_round_payoff(False, 0.0, 15.0, False, PARAMS) == 0.0

    def test_bought_and_participated_is_gain_minus_cost(self):
        gain = value(7) - value(6)
        expected = gain - cost(15.0, PARAMS)
        assert client_round_payoff(True, gain, 15.0, True, PARAMS) == pytest.approx(
            expected, rel=1e-12
        )

    def test_training_without_buying_is_a_pure_loss(self):
        payoff = client_round_payoff(False, 0.0, 10.0, True, PARAMS)
        assert payoff == -cost(10.0, PARAMS) < 0

    def test_negative_gain_rejected(self):
        with pytest.raises(ValueError):
            client_round_payoff(True, -1.0, 15.0, True, PARAMS)


@pytest.fixture(scope="module")
def report():
    grid = [5.0, 10.0, 15.0, 17.0, 20.0, 25.0]
    return nash_check([15.0, 15.0, 15.0], grid, horizon=50, params=PARAMS)


class TestNashCheck:
    def test_acceptable_profile_is_an_equilibrium(self, report):
        assert report.is_nash
        assert report.profitable_deviations == []

    def test_profile_payoff_frozen(self, report):
        for payoff in report.profile_payoffs:
            assert math.isclose(payoff, PROFILE_PAYOFF_50, rel_tol=1e-9)

    def test_high_budget_deviations_lose_exactly_the_cost_gap(self, report):
        for dev in report.deviations:
            if dev.eps > PARAMS.eps_a:
                expected = -dev.participated_rounds * (
                    cost(dev.eps, PARAMS) - cost(PARAMS.eps_a, PARAMS)
                )
                assert math.isclose(dev.delta, expected, rel_tol=0, abs_tol=1e-9)

    def test_low_budget_deviations_starve_after_one_window(self, report):
        for dev in report.deviations:
            if dev.eps < PARAMS.eps_a:
                assert dev.participated_rounds == PARAMS.n
                assert dev.payoff == pytest.approx(-cost(dev.eps, PARAMS))
                assert dev.delta < 0

    def test_deviation_rows_cover_the_grid(self, report):
        per_client = {d.client for d in report.deviations}
        assert per_client == {0, 1, 2}
        assert len(report.deviations) == 3 * 5

    def test_single_client_game_is_still_an_equilibrium(self):
        report = nash_check([15.0], [10.0, 15.0, 20.0], horizon=20, params=PARAMS)
        assert report.is_nash

    def test_report_serializes(self, report):
        payload = json.loads(json.dumps(report.to_dict()))
        assert payload["is_nash"] is True
        assert payload["profile"] == [15.0, 15.0, 15.0]
        assert len(payload["deviations"]) == 15

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            nash_check([15.0], [], 10, PARAMS)
        with pytest.raises(ValueError):
            nash_check([15.0], [10.0, 20.0], 10, PARAMS)
        with pytest.raises(ValueError):
            nash_check([15.0], [15.0, 20.0], 10, PARAMS)
        with pytest.raises(ValueError):
            nash_check([15.0], [0.5, 15.0, 20.0], 10, PARAMS)
        with pytest.raises(ValueError):
            nash_check([15.0], [10.0, 15.0, 20.0], 0, PARAMS)


class TestReportMechanics:
    def test_profitable_filter_controls_the_verdict(self):
        report = NashReport(profile=(15.0,), horizon=5, profile_payoffs=(1.0,))
        report.deviations.append(Deviation(0, 20.0, 0.5, -0.5, 5, False))
        assert report.is_nash
        report.deviations.append(Deviation(0, 10.0, 2.0, 1.0, 5, True))
        assert not report.is_nash
        assert len(report.profitable_deviations) == 1
