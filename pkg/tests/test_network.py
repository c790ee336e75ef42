"""Network runner tests: scalar engine against chain analytics, batch
engine against the scalar one, and structural invariants of outcomes.

The two engines share semantics but no sampling code (permutation walks
vs direct hypergeometric count draws), so statistical agreement between
them is a meaningful check, not a tautology.
"""

from __future__ import annotations

import numpy as np
import pytest

from snowsim.analysis import (
    absorption_probability,
    build_slush_chain,
    expected_absorption_time,
)
from snowsim.machines import Color, ProtocolParams, Variant
from snowsim.sampling import Rng
from snowsim.sim import (
    Adversary,
    NetworkConfig,
    monte_carlo,
    run_slush,
    run_slush_batch,
    run_snow,
    run_snow_batch,
)


def slush_cfg(c: int, k: int, a: int, phi: int = 200_000, seed: int = 0) -> NetworkConfig:
    return NetworkConfig(n=c, params=ProtocolParams(k=k, a=a), phi=phi, seed=seed)


class TestConfig:
    def test_rejects_bad_shapes(self):
        p = ProtocolParams(k=3, a=2)
        with pytest.raises(ValueError):
            NetworkConfig(n=1, params=p, phi=10)
        with pytest.raises(ValueError):
            NetworkConfig(n=10, b=10, params=p, phi=10)
        with pytest.raises(ValueError):
            NetworkConfig(n=10, b=-1, params=p, phi=10)
        with pytest.raises(ValueError):
            NetworkConfig(n=10, params=p, phi=0)
        with pytest.raises(ValueError):
            NetworkConfig(n=3, params=ProtocolParams(k=3, a=2), phi=10)

    def test_refusal_strategies_need_enough_correct_peers(self):
        # k answers must be obtainable from correct nodes alone.
        p = ProtocolParams(k=5, a=3)
        with pytest.raises(ValueError):
            NetworkConfig(n=8, b=3, params=p, phi=10, adversary=Adversary.REFUSE)
        NetworkConfig(n=9, b=3, params=p, phi=10, adversary=Adversary.REFUSE)
        with pytest.raises(ValueError):
            NetworkConfig(n=8, b=3, params=p, phi=10, adversary=Adversary.MINORITY_PUSH)

    def test_slush_requires_fully_correct_network(self):
        cfg = NetworkConfig(n=10, b=2, params=ProtocolParams(k=3, a=2), phi=10)
        with pytest.raises(ValueError):
            run_slush(cfg, 4)
        with pytest.raises(ValueError):
            run_slush_batch(cfg, 4, 4)

    def test_initial_reds_bounds(self):
        cfg = slush_cfg(10, 3, 2)
        with pytest.raises(ValueError):
            run_slush(cfg, 11)
        with pytest.raises(ValueError):
            run_slush(cfg, -1)


class TestScalarSlush:
    def test_unanimous_start_costs_nothing(self):
        cfg = slush_cfg(12, 3, 2)
        for reds in (0, 12):
            out = run_slush(cfg, reds)
            assert out.rounds_used == 0
            assert out.unanimity_round == 0
            assert out.messages_sent == 0

    def test_reaches_unanimity_and_reports_it(self):
        out = run_slush(slush_cfg(20, 3, 2, seed=5), 10)
        assert out.unanimity_round == out.rounds_used
        assert out.rounds_used > 0
        assert out.messages_sent == 3 * out.rounds_used
        assert out.per_node_iterations == out.rounds_used / 20

    def test_decisions_are_empty_and_safe(self):
        out = run_slush(slush_cfg(10, 3, 2, seed=1), 5)
        assert out.decisions == (None,) * 10
        assert out.safety_violation is False

    def test_same_seed_same_run(self):
        a = run_slush(slush_cfg(16, 5, 4, seed=77), 8)
        b = run_slush(slush_cfg(16, 5, 4, seed=77), 8)
        assert a == b

    def test_absorption_matches_chain_analysis(self):
        # The chain predicts where a leaning network lands and how long
        # it takes. Queries go to the other c-1 nodes, so the matching
        # chain uses the population that excludes the picker itself.
        c, k, a, start = 20, 3, 2, 13
        chain = build_slush_chain(c, k, a, population=c - 1)
        p_red = 1.0 - absorption_probability(chain, start)
        t_chain = expected_absorption_time(chain, start)

        def one(rng: Rng) -> float:
            cfg = NetworkConfig(
                n=c,
                params=ProtocolParams(k=k, a=a),
                phi=100_000,
                seed=int(rng.generator.integers(2**63)),
            )
            out = run_slush(cfg, start)
            assert out.unanimity_color is not None
            return out.rounds_used + (0.5 if out.unanimity_color is Color.RED else 0.0)

        trials = 240
        mc = monte_carlo(one, trials, base_seed=42)
        rounds = np.floor(np.array(mc.records))
        reds = np.array(mc.records) != rounds
        # absorption probability, 4 sigma binomial envelope
        sig_p = np.sqrt(p_red * (1 - p_red) / trials)
        assert abs(reds.mean() - p_red) < 4 * sig_p
        # per-node iterations to unanimity, 4 sigma of the sample mean
        iters = rounds / c
        sem = iters.std(ddof=1) / np.sqrt(trials)
        assert abs(iters.mean() - t_chain) < 4 * sem

    def test_batch_absorption_probability_matches_chain(self):
        c, k, a, start = 20, 3, 2, 13
        chain = build_slush_chain(c, k, a, population=c - 1)
        p_red = 1.0 - absorption_probability(chain, start)
        cfg = slush_cfg(c, k, a, phi=100_000, seed=9)
        bat = run_slush_batch(cfg, start, 4000)
        assert bat.converged.all()
        sig = np.sqrt(p_red * (1 - p_red) / 4000)
        assert abs(float(bat.all_red.mean()) - p_red) < 4 * sig


class TestBatchSlush:
    def test_matches_scalar_distribution(self):
        # Same protocol, disjoint engines: compare mean rounds to
        # unanimity over many runs, 4 sigma envelope.
        c, k, a, start = 12, 3, 2, 6
        scal = []
        for i in range(300):
            cfg = slush_cfg(c, k, a, seed=1000 + i)
            scal.append(run_slush(cfg, start).rounds_used)
        cfg = slush_cfg(c, k, a, seed=4)
        bat = run_slush_batch(cfg, start, 3000)
        assert bat.converged.all()
        m_s, m_b = float(np.mean(scal)), float(bat.rounds.mean())
        pooled = np.sqrt(np.var(scal, ddof=1) / len(scal) + bat.rounds.var(ddof=1) / 3000)
        assert abs(m_s - m_b) < 4 * pooled

    def test_expected_time_matches_chain(self):
        c, k, a, start = 24, 5, 4, 12
        chain = build_slush_chain(c, k, a, population=c - 1)
        t_per_node = expected_absorption_time(chain, start)
        cfg = slush_cfg(c, k, a, seed=8)
        bat = run_slush_batch(cfg, start, 6000)
        assert bat.converged.all()
        mean_iters = float(bat.per_node_iterations.mean())
        sem = float(bat.per_node_iterations.std(ddof=1)) / np.sqrt(6000)
        assert abs(mean_iters - t_per_node) < 4 * sem

    def test_unanimous_start_is_zero_rounds(self):
        cfg = slush_cfg(10, 3, 2)
        bat = run_slush_batch(cfg, 10, 16)
        assert (bat.rounds == 0).all()
        assert bat.converged.all()
        assert (bat.messages == 0).all()

    def test_seed_determinism(self):
        cfg = slush_cfg(15, 3, 2, seed=21)
        a = run_slush_batch(cfg, 7, 50)
        b = run_slush_batch(cfg, 7, 50)
        assert (a.rounds == b.rounds).all()
        assert (a.messages == b.messages).all()


ALL_ADVERSARIES = (
    Adversary.NONE,
    Adversary.REFUSE,
    Adversary.BALANCE_KEEPER,
    Adversary.MINORITY_PUSH,
)


class TestScalarSnow:
    def test_rejects_non_deciding_variant(self):
        cfg = NetworkConfig(n=10, params=ProtocolParams(k=3, a=2, beta=2), phi=10)
        with pytest.raises(ValueError):
            run_snow(cfg, Variant.SLUSH, 5)

    def test_unanimous_start_decides_under_every_adversary(self):
        # With every correct node already on one color, decisions must
        # come within the round budget for every built-in strategy.
        params = ProtocolParams(k=3, a=3, beta=6)
        for adv in ALL_ADVERSARIES:
            cfg = NetworkConfig(
                n=25, b=5, params=params, phi=20 * 6 * 20, adversary=adv, seed=13
            )
            for variant in (Variant.SNOWFLAKE, Variant.SNOWBALL):
                out = run_snow(cfg, variant, 20)
                assert all(d is Color.RED for d in out.decisions), (adv, variant)
                assert not out.safety_violation

    def test_safety_flag_recomputed_from_decisions(self):
        params = ProtocolParams(k=3, a=2, beta=2)
        for seed in range(6):
            cfg = NetworkConfig(n=14, params=params, phi=50_000, seed=seed)
            out = run_snow(cfg, Variant.SNOWFLAKE, 7)
            expect = Color.RED in out.decisions and Color.BLUE in out.decisions
            assert out.safety_violation == expect

    def test_scheduler_picks_all_correct_nodes_fairly(self):
        # Huge beta keeps everyone undecided, so every round is a real
        # pick; counts should be uniform within 4 sigma.
        c = 10
        cfg = NetworkConfig(
            n=c, params=ProtocolParams(k=3, a=2, beta=10**9), phi=40_000, seed=3
        )
        out = run_snow(cfg, Variant.SNOWFLAKE, 5)
        assert out.rounds_used == 40_000
        expected = 40_000 / c
        sigma = np.sqrt(40_000 * (1 / c) * (1 - 1 / c))
        for picks in out.pick_counts:
            assert abs(picks - expected) < 4 * sigma

    def test_same_seed_same_run(self):
        cfg = NetworkConfig(
            n=20, b=4, params=ProtocolParams(k=3, a=3, beta=4), phi=50_000,
            adversary=Adversary.BALANCE_KEEPER, seed=5,
        )
        a = run_snow(cfg, Variant.SNOWBALL, 8)
        b = run_snow(cfg, Variant.SNOWBALL, 8)
        assert a == b

    def test_adversary_turn_order_flag_changes_nothing(self):
        # Built-in strategies answer by counts, not sampled identities,
        # so moving their turn after the sample draw is a no-op.
        base = dict(n=20, b=4, params=ProtocolParams(k=3, a=3, beta=4),
                    phi=50_000, adversary=Adversary.MINORITY_PUSH, seed=17)
        before = run_snow(NetworkConfig(**base), Variant.SNOWFLAKE, 8)
        after = run_snow(
            NetworkConfig(adversary_after_sample=True, **base), Variant.SNOWFLAKE, 8
        )
        assert before == after

    def test_messages_counted_per_active_round(self):
        cfg = NetworkConfig(n=10, params=ProtocolParams(k=4, a=3, beta=3), phi=50_000, seed=2)
        out = run_snow(cfg, Variant.SNOWFLAKE, 10)
        # Unanimous honest start: no refusals, every pre-decision pick
        # queries k peers; decided picks send nothing.
        assert out.messages_sent % 4 == 0
        assert out.messages_sent <= 4 * out.rounds_used


class TestBatchSnow:
    def test_seed_determinism(self):
        cfg = NetworkConfig(
            n=30, b=6, params=ProtocolParams(k=5, a=4, beta=5), phi=30_000,
            adversary=Adversary.BALANCE_KEEPER, seed=11,
        )
        a = run_snow_batch(cfg, Variant.SNOWBALL, 12, 40)
        b = run_snow_batch(cfg, Variant.SNOWBALL, 12, 40)
        for f in ("rounds", "all_decided", "safety_violation", "unanimity_round",
                  "early_decision", "messages", "red_decisions", "blue_decisions"):
            assert (getattr(a, f) == getattr(b, f)).all(), f

    def test_decisions_account_for_every_node(self):
        cfg = NetworkConfig(n=16, params=ProtocolParams(k=3, a=3, beta=4), phi=100_000, seed=6)
        bat = run_snow_batch(cfg, Variant.SNOWFLAKE, 16, 64)
        assert bat.all_decided.all()
        assert ((bat.red_decisions + bat.blue_decisions) == 16).all()
        # unanimous red start cannot decide blue under no adversary
        assert (bat.blue_decisions == 0).all()
        assert not bat.safety_violation.any()

    def test_early_decision_never_happens(self):
        # No node may decide before answering beta of its own queries.
        for adv in ALL_ADVERSARIES:
            cfg = NetworkConfig(
                n=25, b=5, params=ProtocolParams(k=3, a=3, beta=6),
                phi=60_000, adversary=adv, seed=19,
            )
            for variant in (Variant.SNOWFLAKE, Variant.SNOWBALL):
                bat = run_snow_batch(cfg, variant, 20, 32)
                assert not bat.early_decision.any(), (adv, variant)

    def test_matches_scalar_engine_distribution(self):
        # Disjoint implementations again: mean rounds to full decision
        # over independent runs, 4 sigma pooled envelope.
        params = ProtocolParams(k=3, a=2, beta=4)
        scal = []
        for i in range(200):
            cfg = NetworkConfig(n=10, params=params, phi=200_000, seed=7000 + i)
            out = run_snow(cfg, Variant.SNOWFLAKE, 10)
            assert all(d is not None for d in out.decisions)
            scal.append(out.rounds_used)
        cfg = NetworkConfig(n=10, params=params, phi=200_000, seed=71)
        bat = run_snow_batch(cfg, Variant.SNOWFLAKE, 10, 2000)
        assert bat.all_decided.all()
        m_s, m_b = float(np.mean(scal)), float(bat.rounds.mean())
        pooled = np.sqrt(np.var(scal, ddof=1) / len(scal) + bat.rounds.var(ddof=1) / 2000)
        assert abs(m_s - m_b) < 4 * pooled

    def test_scalar_and_batch_agree_under_balance_keeper(self):
        params = ProtocolParams(k=3, a=3, beta=4)
        scal = []
        for i in range(150):
            cfg = NetworkConfig(
                n=12, b=2, params=params, phi=300_000,
                adversary=Adversary.BALANCE_KEEPER, seed=9000 + i,
            )
            out = run_snow(cfg, Variant.SNOWBALL, 10)
            assert all(d is not None for d in out.decisions)
            scal.append(out.rounds_used)
        cfg = NetworkConfig(
            n=12, b=2, params=params, phi=300_000,
            adversary=Adversary.BALANCE_KEEPER, seed=91,
        )
        bat = run_snow_batch(cfg, Variant.SNOWBALL, 10, 1500)
        assert bat.all_decided.all()
        m_s, m_b = float(np.mean(scal)), float(bat.rounds.mean())
        pooled = np.sqrt(np.var(scal, ddof=1) / len(scal) + bat.rounds.var(ddof=1) / 1500)
        assert abs(m_s - m_b) < 4 * pooled

    def test_unanimity_round_sentinel(self):
        cfg = NetworkConfig(n=10, params=ProtocolParams(k=3, a=3, beta=3), phi=40_000, seed=2)
        bat = run_snow_batch(cfg, Variant.SNOWFLAKE, 10, 16)
        assert (bat.unanimity_round == 0).all()


class TestMonteCarlo:
    def test_single_trial_has_zero_stddev(self):
        mc = monte_carlo(lambda rng: 3.5, 1, base_seed=0)
        assert mc.mean == 3.5
        assert mc.stddev == 0.0
        assert mc.records == (3.5,)

    def test_mean_and_stddev_recompute(self):
        mc = monte_carlo(lambda rng: float(rng.generator.random()), 40, base_seed=9)
        arr = np.array(mc.records)
        assert mc.mean == pytest.approx(float(arr.mean()))
        assert mc.stddev == pytest.approx(float(arr.std(ddof=1)))

    def test_streams_are_independent_of_trial_count(self):
        # Trial i sees the same stream no matter how many trials run.
        a = monte_carlo(lambda rng: float(rng.generator.random()), 5, base_seed=4)
        b = monte_carlo(lambda rng: float(rng.generator.random()), 9, base_seed=4)
        assert a.records == b.records[:5]

    def test_rejects_zero_trials(self):
        with pytest.raises(ValueError):
            monte_carlo(lambda rng: 0.0, 0, base_seed=0)


class TestCompositionBound:
    """The designed failure probability dominates observed conflict rates.

    A design found for a target eps guarantees (analytically) that two
    correct nodes decide different colors with probability at most eps
    within the design's horizon. Simulated frequency over 10^5 trials
    must stay below 10x that target; the factor absorbs Monte Carlo
    noise around small probabilities without weakening the point.
    """

    def test_observed_conflicts_stay_under_designed_bound(self):
        from snowsim.analysis import SafetyDesign, feasibility_search

        design = feasibility_search(20, 2, 1e-2, 2000)
        assert isinstance(design, SafetyDesign)
        params = ProtocolParams(k=design.k, a=design.a, beta=design.beta)
        for adversary in (Adversary.BALANCE_KEEPER, Adversary.REFUSE):
            cfg = NetworkConfig(
                n=20, b=2, params=params, phi=design.phi,
                adversary=adversary, seed=13,
            )
            batch = run_snow_batch(cfg, Variant.SNOWFLAKE, initial_reds=9, trials=100_000)
            freq = float(batch.safety_violation.mean())
            assert freq <= 10 * design.eps, f"{adversary.value}: {freq} over bound"
