import math
from decimal import Decimal

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from siked.core import ALL_STRATEGIES, Dataset, DatasetKind, QuestionRecord, SikedError, Strategy
from siked.metrics import (
    StrategyDistribution,
    accuracy,
    evaluate_maj1,
    kl_divergence,
    mixture,
    stats_csv_rows,
    strategy_distribution,
)
from siked.verify import MatchPolicy
from conftest import make_sample


def dist(cot, l2m, pot):
    return StrategyDistribution({Strategy.COT: cot, Strategy.L2M: l2m, Strategy.POT: pot})


@st.composite
def distributions(draw):
    weights = [draw(st.floats(0.0, 1.0)) for _ in ALL_STRATEGIES]
    total = sum(weights)
    if total == 0:
        weights = [1.0] * len(ALL_STRATEGIES)
        total = float(len(ALL_STRATEGIES))
    return StrategyDistribution({s: w / total for s, w in zip(ALL_STRATEGIES, weights)})


class TestStrategyDistribution:
    def test_sum_must_be_one(self):
        with pytest.raises(SikedError):
            StrategyDistribution({Strategy.COT: 0.5, Strategy.POT: 0.6})

    def test_negative_rejected(self):
        with pytest.raises(SikedError):
            StrategyDistribution({Strategy.COT: -0.5, Strategy.POT: 1.5})

    def test_from_counts(self):
        d = StrategyDistribution.from_counts({Strategy.COT: 3, Strategy.POT: 1})
        assert d[Strategy.COT] == pytest.approx(0.75)
        assert d[Strategy.L2M] == 0.0

    def test_from_dataset(self):
        samples = [make_sample(f"q{i}", Strategy.COT, f"r{i}\nFinal Answer: 1") for i in range(3)]
        samples.append(make_sample("q9", Strategy.POT, "answer = 1"))
        d = strategy_distribution(Dataset.build(samples, DatasetKind.llm()))
        assert d[Strategy.COT] == pytest.approx(0.75)

    def test_empty_rejected(self):
        with pytest.raises(SikedError):
            strategy_distribution([])

    def test_json_sorted(self):
        assert list(dist(0.2, 0.3, 0.5).to_json()) == ["cot", "l2m", "pot"]


class TestMixture:
    def test_convex_combination(self):
        m = mixture(0.25, dist(1.0, 0.0, 0.0), dist(0.0, 0.0, 1.0))
        assert m[Strategy.COT] == pytest.approx(0.25)
        assert m[Strategy.POT] == pytest.approx(0.75)

    def test_alpha_bounds(self):
        with pytest.raises(SikedError):
            mixture(1.5, dist(1, 0, 0), dist(0, 1, 0))

    @settings(max_examples=100, deadline=None)
    @given(alpha=st.floats(0.0, 1.0), p=distributions(), q=distributions())
    def test_endpoints_and_normalization(self, alpha, p, q):
        m = mixture(alpha, p, q)
        assert sum(m.probs.values()) == pytest.approx(1.0, abs=1e-9)
        assert mixture(1.0, p, q).probs == pytest.approx(dict(p.probs))
        assert mixture(0.0, p, q).probs == pytest.approx(dict(q.probs))


def brute_force_kl(p, q, eps=1e-9):
    """Literal re-derivation used as the oracle for the library implementation."""
    keys = ALL_STRATEGIES
    q_s = [q[k] + eps for k in keys]
    z = sum(q_s)
    total = 0.0
    for k, qv in zip(keys, q_s):
        if p[k] > 0:
            total += p[k] * math.log(p[k] * z / qv)
    return total


class TestKL:
    def test_identical_is_zero(self):
        d = dist(0.2, 0.3, 0.5)
        assert kl_divergence(d, d) == pytest.approx(0.0, abs=1e-6)

    def test_half_half_vs_point_mass_derived_value(self):
        # 0.5*ln(0.5/~1) + 0.5*ln(0.5/~0) with eps smoothing: dominated by the
        # second term, 0.5*ln(0.5/(1e-9/z)) with z ~= 1 + 3e-9
        p = dist(0.5, 0.0, 0.5)
        q = dist(1.0, 0.0, 0.0)
        expected = brute_force_kl(p, q)
        assert kl_divergence(p, q) == pytest.approx(expected, rel=1e-12)
        assert expected > 9.0  # eps=1e-9 makes the missing mass very expensive

    def test_uniform_vs_point_mass(self):
        p = dist(1.0, 0.0, 0.0)
        q = StrategyDistribution.uniform(ALL_STRATEGIES)
        # ln(3) up to smoothing
        assert kl_divergence(p, q) == pytest.approx(math.log(3), abs=1e-6)

    def test_two_point_symmetric_case(self):
        p = dist(0.5, 0.5, 0.0)
        q = dist(0.75, 0.25, 0.0)
        expected = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
        assert kl_divergence(p, q) == pytest.approx(expected, abs=1e-6)

    def test_zero_p_terms_contribute_nothing(self):
        assert kl_divergence(dist(1.0, 0.0, 0.0), dist(1.0, 0.0, 0.0)) == pytest.approx(0.0, abs=1e-6)

    @settings(max_examples=200, deadline=None)
    @given(p=distributions(), q=distributions())
    def test_gibbs_inequality(self, p, q):
        assert kl_divergence(p, q) >= -1e-9

    @settings(max_examples=100, deadline=None)
    @given(p=distributions(), q=distributions())
    def test_matches_brute_force(self, p, q):
        assert kl_divergence(p, q) == pytest.approx(brute_force_kl(p, q), rel=1e-9, abs=1e-12)

    def test_alpha_grid_monotone_toward_student(self):
        # as alpha falls, the training mixture approaches the student marginal
        p_llm = dist(0.7, 0.2, 0.1)
        p_sm = dist(0.1, 0.3, 0.6)
        kls = [kl_divergence(mixture(a, p_llm, p_sm), p_sm) for a in (0.9, 0.5, 0.2, 0.0)]
        assert kls == sorted(kls, reverse=True)
        assert kls[-1] == pytest.approx(0.0, abs=1e-6)


class FixedBackend:
    def __init__(self, completions):
        self.completions = completions

    def complete_eval(self, request):
        return self.completions[request.question.id]


class TestEvaluateMaj1:
    def test_hand_counted_accuracy(self):
        questions = [QuestionRecord(f"q{i}", f"problem {i}", Decimal(i)) for i in range(4)]
        completions = {
            "q0": "Strategy: cot\nFinal Answer: 0",        # correct
            "q1": "Strategy: pot\nanswer = 1",             # correct
            "q2": "Strategy: cot\nFinal Answer: 99",       # wrong
            "q3": "no strategy line at all",               # unparseable
        }
        acc = evaluate_maj1(FixedBackend(completions), questions, MatchPolicy())
        assert acc == pytest.approx(0.5)

    def test_zero_items_rejected(self):
        with pytest.raises(SikedError):
            accuracy(1, 0)


class TestStatsRows:
    def test_one_row_per_iteration_strategy(self):
        entries = [
            {
                "iteration": 1,
                "alpha": 0.5,
                "kl": 0.1,
                "p_llm": {"cot": 0.6, "pot": 0.4},
                "p_sm": {"cot": 0.5, "pot": 0.5},
                "p_train": {"cot": 0.55, "pot": 0.45},
            }
        ]
        rows = stats_csv_rows(entries)
        assert [r["strategy"] for r in rows] == ["cot", "pot"]
        assert all(r["alpha"] == 0.5 and r["kl"] == 0.1 for r in rows)
