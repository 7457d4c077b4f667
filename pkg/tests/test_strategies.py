from __future__ import annotations

import math

import numpy as np
import pytest

import oracles
from lrfree.core import ConfigurationError, ContractViolation, NumericalError
from lrfree.strategies import (
    CONTROLS,
    STRATEGIES,
    Corral,
    StrategyConfig,
    confidence_width,
    log_barrier_step,
    make_strategy,
)


def load(meta, pulls, cum):
    """Put a balancing strategy into a hand-specified state."""
    for st, n, u in zip(meta.state.stats, pulls, cum):
        st.pulls, st.cum_reward = n, u
    meta.state.step = sum(pulls)


class TestConfidenceWidth:
    def test_hundred_pulls(self):
        expected = math.sqrt(math.log(2 * math.log(100) / 0.05) / 100)
        assert confidence_width(100, 2, 0.05, 1.0) == pytest.approx(expected, rel=1e-14)
        assert confidence_width(100, 2, 0.05, 1.0) == pytest.approx(0.2284, abs=5e-5)

    def test_one_pull_guard(self):
        assert confidence_width(1, 2, 0.05, 1.0) == pytest.approx(math.sqrt(math.log(40)), rel=1e-14)
        assert confidence_width(1, 2, 0.05, 1.0) == pytest.approx(1.921, abs=5e-4)

    def test_two_pulls_guarded(self):
        assert confidence_width(2, 2, 0.05, 1.0) == pytest.approx(math.sqrt(math.log(40) / 2))

    def test_zero_scale(self):
        assert confidence_width(37, 3, 0.1, 0.0) == 0.0

    def test_zero_pulls(self):
        with pytest.raises(ContractViolation):
            confidence_width(0, 2, 0.05, 1.0)


class TestD3RB:
    def test_hand_trigger_doubles(self):
        meta = make_strategy("d3rb", 2)
        load(meta, [99, 100], [10.0, 90.0])
        meta.update(0, [0.0])  # base 0 ends at n=100, u=10
        st = meta.state.stats[0]
        assert st.regret_coeff == 2.0
        assert st.potential == pytest.approx(20.0)

    def test_trigger_margin(self):
        w = confidence_width(100, 2, 0.05, 1.0)
        lhs = 0.1 + 0.1 + w
        rhs = 0.9 - w
        assert lhs == pytest.approx(0.4284, abs=1e-4)
        assert rhs == pytest.approx(0.6716, abs=1e-4)
        assert lhs < rhs

    def test_no_trigger_potential(self):
        meta = make_strategy("d3rb", 1)
        for _ in range(4):
            meta.update(0, [0.5])
        assert meta.state.stats[0].regret_coeff == 1.0
        assert meta.state.stats[0].potential == 2.0

    def test_single_base_never_doubles(self):
        meta = make_strategy("d3rb", 1)
        rng = np.random.default_rng(0)
        for _ in range(2000):
            meta.update(meta.sample(), [rng.random()])
        assert meta.state.stats[0].regret_coeff == 1.0

    def test_warm_start_round_robin(self):
        meta = make_strategy("d3rb", 3)
        picks = []
        for _ in range(3):
            i = meta.sample()
            picks.append(i)
            meta.update(i, [0.5])
        assert picks == [0, 1, 2]

    def test_sample_argmin(self):
        meta = make_strategy("d3rb", 2)
        meta.state.stats[0].potential, meta.state.stats[1].potential = 20.0, 9.0
        assert meta.sample() == 1

    def test_coefficients_are_powers_of_two(self):
        meta = make_strategy("d3rb", 3)
        rng = np.random.default_rng(1)
        means = [0.9, 0.5, 0.1]
        for _ in range(3000):
            i = meta.sample()
            meta.update(i, [float(rng.random() < means[i])])
        for st in meta.state.stats:
            assert math.log2(st.regret_coeff).is_integer()


class TestED2RB:
    def test_hand_estimate(self):
        meta = make_strategy("ed2rb", 2)
        load(meta, [99, 100], [10.0, 90.0])
        meta.update(0, [0.0])
        w = confidence_width(100, 2, 0.05, 1.0)
        expected = 10 * (0.9 - w - w - 0.1)
        assert meta.state.stats[0].regret_coeff == pytest.approx(expected, rel=1e-12)
        assert meta.state.stats[0].regret_coeff == pytest.approx(3.432, abs=5e-4)

    def test_floor_for_leader(self):
        meta = make_strategy("ed2rb", 2)
        load(meta, [100, 99], [10.0, 89.0])
        meta.update(1, [1.0])
        assert meta.state.stats[1].regret_coeff == 1.0

    def test_upper_clip(self):
        meta = make_strategy("ed2rb", 2)
        load(meta, [99, 100], [10.0, 90.0])
        meta.state.stats[0].potential = 10.0
        meta.update(0, [0.0])  # candidate is about 34.3
        assert meta.state.stats[0].potential == 20.0

    def test_lower_clip(self):
        meta = make_strategy("ed2rb", 1)
        meta.update(0, [0.5])
        meta.state.stats[0].potential = 50.0
        meta.update(0, [0.5])  # candidate is sqrt(2)
        assert meta.state.stats[0].potential == 50.0


class TestClassic:
    def test_identical_stats_keep_all(self):
        meta = make_strategy("classic", 3)
        for _ in range(5):
            for i in range(3):
                meta.update(i, [0.5])
        assert meta.state.active == [0, 1, 2]

    def test_hand_case_eliminates(self):
        meta = make_strategy("classic", 2, StrategyConfig(putative_coeffs=[1.0, 1.0]))
        load(meta, [99, 100], [10.0, 90.0])
        meta.update(0, [0.0])
        assert meta.state.active == [1]
        assert meta.sample() == 1

    def test_eliminated_stay_out(self):
        meta = make_strategy("classic", 2, StrategyConfig(putative_coeffs=[1.0, 1.0]))
        load(meta, [99, 100], [10.0, 90.0])
        meta.update(0, [0.0])
        meta.state.stats[0].potential = -1.0
        for _ in range(50):
            meta.update(meta.sample(), [0.0])
        assert meta.state.active == [1]

    def test_default_coeffs(self):
        meta = make_strategy("classic", 3)
        assert [s.regret_coeff for s in meta.state.stats] == [1.0, 1.0, 1.0]

    def test_wrong_coeff_count(self):
        with pytest.raises(ConfigurationError, match="putative_coeffs"):
            make_strategy("classic", 2, StrategyConfig(putative_coeffs=[1.0]))

    def test_lone_base_cannot_fail_itself(self):
        meta = make_strategy("classic", 2)
        load(meta, [99, 100], [10.0, 90.0])
        meta.state.active = [0]
        meta.update(0, [0.0])
        assert meta.state.active == [0]
        assert meta.warnings == []

    def test_fallback_path(self, monkeypatch, caplog):
        meta = make_strategy("classic", 2)
        monkeypatch.setattr(meta, "misspecified", lambda k, d, rhs: True)
        meta.update(0, [0.2])
        meta.update(1, [0.9])
        assert meta.state.active == [1]
        assert meta.warnings and meta.warnings[-1]["kept"] == 1
        assert "keeping" in caplog.text


class TestEXP3:
    def test_uniform_start(self):
        meta = make_strategy("exp3", 4)
        assert meta.probs == [0.25] * 4

    def test_full_reward_keeps_probs(self):
        meta = make_strategy("exp3", 2, StrategyConfig(exp3_eta=1.0))
        meta.update(0, [1.0])
        assert meta.scores == [1.0, 1.0]
        assert meta.probs == [0.5, 0.5]

    def test_zero_reward_shifts_away(self):
        meta = make_strategy("exp3", 2, StrategyConfig(exp3_eta=1.0))
        meta.update(0, [0.0])
        assert meta.scores == [-1.0, 1.0]
        assert meta.probs[1] > 0.5
        assert meta.probs[1] == pytest.approx(1 / (1 + math.exp(-2.0)))

    def test_default_eta(self):
        meta = make_strategy("exp3", 4, StrategyConfig(horizon=500))
        assert meta.eta == pytest.approx(math.sqrt(math.log(4) / (4 * 500)))

    def test_argmax_mode(self):
        meta = make_strategy("exp3", 2, StrategyConfig(exp3_mode="argmax"))
        meta.probs = [0.9, 0.1]
        assert meta.sample() == 0

    def test_sample_mode_reproducible(self):
        picks = []
        for _ in range(2):
            meta = make_strategy("exp3", 3, rng=np.random.default_rng(11))
            picks.append([meta.sample() for _ in range(20)])
        assert picks[0] == picks[1]

    def test_potential_mirrors_probs(self):
        meta = make_strategy("exp3", 3, StrategyConfig(exp3_eta=0.5))
        meta.update(2, [0.3])
        assert meta.state.potentials == meta.probs


class TestCorral:
    def test_zero_loss_fixed_point(self):
        probs = [0.2, 0.3, 0.5]
        out = log_barrier_step(probs, [0.0, 0.0, 0.0], [0.5] * 3)
        assert out == pytest.approx(probs, abs=1e-12)

    def test_loss_moves_mass_away(self):
        meta = make_strategy("corral", 2, StrategyConfig(horizon=100))
        meta.update(0, [0.0])
        assert meta.probs[0] < meta.probs[1]

    def test_bisection_matches_normalizer(self):
        probs, losses, etas = [0.5, 0.5], [2.0, 0.0], [0.3, 0.3]
        out = log_barrier_step(probs, losses, etas)
        assert sum(out) == pytest.approx(1.0, abs=1e-10)

    def test_floor_after_update(self):
        meta = make_strategy("corral", 3, StrategyConfig(horizon=50))
        rng = np.random.default_rng(2)
        for _ in range(200):
            meta.update(meta.sample(), [rng.random() * 0.1])
            assert min(meta.probs) >= meta.gamma / 3 - 1e-15

    def test_defaults(self):
        meta = make_strategy("corral", 4, StrategyConfig(horizon=400))
        assert meta.gamma == 1 / 400
        assert meta.etas == [math.sqrt(4 / 400)] * 4
        assert meta.thresholds == [8.0] * 4

    def test_threshold_doubling(self):
        meta = make_strategy("corral", 2, StrategyConfig(corral_eta=1.0, corral_gamma=0.01))
        for _ in range(10):
            meta.update(0, [0.0])
        assert meta.thresholds[0] > 4.0
        assert meta.etas[0] > 1.0
        assert meta.thresholds[1] == 4.0 and meta.etas[1] == 1.0

    def test_nonconvergence_raises_with_snapshot(self):
        with pytest.raises(NumericalError) as err:
            log_barrier_step([0.5, 0.5], [3.0, 0.0], [1.0, 1.0], tol=0.0, max_iter=5)
        assert "residual" in err.value.snapshot

    def test_degenerate_sample(self):
        meta = Corral(2, StrategyConfig(), np.random.default_rng(0))
        meta.probs = [1.0, 0.0]
        assert all(meta.sample() == 0 for _ in range(50))


class TestUCB:
    def test_round_robin(self):
        meta = make_strategy("ucb", 3)
        assert meta.sample() == 0
        meta.update(0, [0.5])
        assert meta.sample() == 1

    def test_argmax_after_warm_start(self):
        meta = make_strategy("ucb", 2)
        meta.update(0, [1.0])
        meta.update(1, [0.0])
        assert meta.sample() == 0

    def test_tie(self):
        meta = make_strategy("ucb", 2)
        meta.update(0, [0.5])
        meta.update(1, [0.5])
        assert meta.sample() == 0

    def test_width_shrinks(self):
        meta = make_strategy("ucb", 1)
        values = []
        for _ in range(50):
            meta.update(0, [0.4])
            values.append(meta.state.stats[0].potential)
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] > 0.4

    def test_only_chosen_base_changes(self):
        meta = make_strategy("ucb", 3)
        for i in range(3):
            meta.update(i, [0.5])
        before = meta.state.potentials
        meta.update(1, [0.9])
        after = meta.state.potentials
        assert before[0] == after[0] and before[2] == after[2]


class TestEpsilonGreedy:
    def test_registered_as_control(self):
        assert "eps_greedy" in CONTROLS and "eps_greedy" not in STRATEGIES

    def test_greedy_when_epsilon_zero(self):
        meta = make_strategy("eps_greedy", 2, StrategyConfig(epsilon=0.0))
        meta.update(meta.sample(), [0.2])
        meta.update(meta.sample(), [0.8])
        assert all(meta.sample() == 1 for _ in range(20))


class TestMakeStrategy:
    def test_six_strategies(self):
        assert sorted(STRATEGIES) == ["classic", "corral", "d3rb", "ed2rb", "exp3", "ucb"]

    def test_unknown(self):
        with pytest.raises(ConfigurationError, match="strategy.name"):
            make_strategy("thompson", 2)

    @pytest.mark.parametrize("field,value", [("delta", 0.0), ("delta", 1.0), ("conf_scale", -1.0),
                                             ("d_min", 0.0), ("exp3_eta", 0.0),
                                             ("corral_gamma", 1.0), ("epsilon", 1.5),
                                             ("exp3_mode", "greedy")])
    def test_invalid_config(self, field, value):
        with pytest.raises(ConfigurationError, match=f"strategy.{field}"):
            make_strategy("d3rb", 2, StrategyConfig(**{field: value}))


class TestOracleSpotChecks:
    """A few fixed sequences; the randomized sweep lives in the acceptance suite."""

    SEQ = [(0, 0.2), (1, 0.9), (1, 0.8), (0, 0.1), (1, 1.0), (0, 0.0), (0, 0.3), (1, 0.7)]

    def test_d3rb(self):
        meta = make_strategy("d3rb", 2)
        for (i, r), ref in zip(self.SEQ, oracles.d3rb(2, self.SEQ)):
            meta.update(i, [r])
            assert [s.potential for s in meta.state.stats] == pytest.approx(ref["psi"], rel=1e-12)

    def test_ucb(self):
        meta = make_strategy("ucb", 2)
        for (i, r), ref in zip(self.SEQ, oracles.ucb(2, self.SEQ)):
            assert meta.sample() == ref["choice"]
            meta.update(i, [r])

    def test_corral(self):
        cfg = StrategyConfig(horizon=20)
        meta = make_strategy("corral", 2, cfg)
        refs = oracles.corral(2, self.SEQ, eta=math.sqrt(2 / 20), gamma=1 / 20)
        for (i, r), ref in zip(self.SEQ, refs):
            meta.update(i, [r])
            assert meta.probs == pytest.approx(ref["probs"], rel=1e-12)
