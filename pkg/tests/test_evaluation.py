import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from justrl.errors import ConfigError, StructuralError
from justrl.evaluation import (
    BudgetSpec,
    EvalConfig,
    default_n_samples,
    evaluate,
    evaluate_benchmark,
    pass_at_1,
    token_budget,
)
from justrl.policy import ScriptedPolicy, ToyPolicy
from justrl.sampling import nucleus_probs
from justrl.tasks import generate, ideal_response
from justrl.verifier import verify
from justrl.vocab import BOXED_CLOSE, BOXED_OPEN, DEFAULT_VOCAB

V = DEFAULT_VOCAB


def oracle_policy(tasks):
    return ScriptedPolicy(V, {t.prompt_tokens: ideal_response(t.gold) for t in tasks})


def chance_policy(tasks):
    """Emits ``\\boxed{`` then one token drawn uniformly from the sampler's kept set, then ``}``."""
    script = [V.id(BOXED_OPEN), 0, V.id(BOXED_CLOSE)]
    return ScriptedPolicy(V, {t.prompt_tokens: script for t in tasks}, uniform_at=[1])


# -- pass@1 -------------------------------------------------------------------------


def test_pass_at_1_examples():
    per, score = pass_at_1([[True, False, True, True], [False] * 4])
    assert per == [0.75, 0.0]
    assert score == 37.5
    assert pass_at_1([[True]]) == ([1.0], 100.0)


def test_pass_at_1_rejects_bad_tables():
    with pytest.raises(StructuralError):
        pass_at_1([])
    with pytest.raises(StructuralError):
        pass_at_1([[True, False], [True]])
    with pytest.raises(StructuralError):
        pass_at_1([[], []])


@settings(max_examples=300, deadline=None)
@given(
    table=st.integers(1, 40).flatmap(
        lambda n: st.lists(st.lists(st.booleans(), min_size=n, max_size=n), min_size=1, max_size=30)
    )
)
def test_pass_at_1_equals_brute_force_recount(table):
    _, score = pass_at_1(table)
    correct = sum(sum(row) for row in table)
    total = sum(len(row) for row in table)
    # every problem has the same N, so the mean of means is the overall fraction
    assert score == pytest.approx(100.0 * correct / total, abs=1e-9)
    perm = list(reversed(table))
    assert pass_at_1(perm)[1] == pytest.approx(score, abs=1e-9)


def test_default_sample_counts():
    assert default_n_samples("math-500") == 4
    assert default_n_samples("Minerva") == 4
    assert default_n_samples("olympiadbench") == 4
    assert default_n_samples("aime24") == 32
    assert default_n_samples("my_set") == 32


def test_eval_config_validation():
    with pytest.raises(ConfigError):
        EvalConfig(n_samples=0)
    with pytest.raises(ConfigError):
        EvalConfig(verifier_profile="loose")
    with pytest.raises(ConfigError):
        EvalConfig(top_p=0.0)


# -- end-to-end harness -------------------------------------------------------------


def test_oracle_scores_exactly_100():
    tasks = generate("add", 2, 40, seed=0) + generate("mul_mod", 1, 40, seed=0)
    report = evaluate(oracle_policy(tasks), {"a": tasks[:40], "b": tasks[40:]}, EvalConfig(n_samples=4))
    assert report.benchmarks["a"].pass_at_1 == 100.0
    assert report.benchmarks["b"].pass_at_1 == 100.0
    assert report.macro_average == 100.0


def kept_tokens(cfg):
    probs = nucleus_probs(np.zeros(len(V)), cfg.temperature, cfg.top_p)[0]
    return [i for i in range(len(V)) if probs[i] > 0]


def test_chance_rate_within_three_sigma():
    cfg = EvalConfig(n_samples=32, temperature=0.7, top_p=0.9)
    # 27 equal tokens: 24/27 < 0.9 <= 25/27, so ids 0..24 are kept
    kept = kept_tokens(cfg)
    assert kept == list(range(25))
    tasks = generate("digit_copy", 1, 200, seed=3)
    # only the gold digit itself makes "\boxed{<t>}" correct
    for task in tasks[:10]:
        hits = [t for t in kept if verify(V.decode([V.id(BOXED_OPEN), t, V.id(BOXED_CLOSE)]), task.gold).correct]
        assert hits == [V.id(task.gold)]
    p = 1 / len(kept)
    res = evaluate_benchmark(chance_policy(tasks), tasks, cfg, "chance")
    n = len(tasks) * cfg.n_samples
    sigma = 100 * math.sqrt(p * (1 - p) / n)
    assert abs(res.pass_at_1 - 100 * p) <= 3 * sigma


def test_single_sample_matches_direct_scoring():
    tasks = generate("digit_copy", 1, 60, seed=1)
    cfg = EvalConfig(n_samples=1)
    res = evaluate_benchmark(chance_policy(tasks), tasks, cfg, "one")
    direct = [verify(p.responses[0], t.gold).correct for p, t in zip(res.problems, tasks)]
    assert res.pass_at_1 == pytest.approx(100 * sum(direct) / len(direct), abs=1e-12)


def test_strict_never_exceeds_lenient():
    pol = ToyPolicy.random(seed=3, scale=1.5)
    tasks = generate("add", 1, 30, seed=2)
    strict = evaluate_benchmark(pol, tasks, EvalConfig(n_samples=8, verifier_profile="strict"), "b")
    lenient = evaluate_benchmark(pol, tasks, EvalConfig(n_samples=8, verifier_profile="lenient"), "b")
    for s, l in zip(strict.problems, lenient.problems):
        assert s.responses == l.responses
        assert s.score <= l.score
    assert strict.pass_at_1 <= lenient.pass_at_1


def test_evaluation_reproducible_and_workers_invariant():
    pol = ToyPolicy.random(seed=8, scale=1.0)
    tasks = generate("sub", 1, 12, seed=0)
    a = evaluate_benchmark(pol, tasks, EvalConfig(), "x", workers=1)
    b = evaluate_benchmark(pol, tasks, EvalConfig(), "x", workers=3)
    assert [p.responses for p in a.problems] == [p.responses for p in b.problems]


def test_empty_benchmarks_left_out():
    report = evaluate(ToyPolicy.zeros(), {"empty": []}, EvalConfig())
    assert report.benchmarks == {}
    assert report.macro_average is None
    with pytest.raises(StructuralError):
        evaluate_benchmark(ToyPolicy.zeros(), [], EvalConfig())


def test_report_files(tmp_path):
    tasks = generate("add", 1, 5, seed=0)
    report = evaluate(oracle_policy(tasks), {"b": tasks}, EvalConfig(n_samples=2))
    paths = report.write(tmp_path)
    assert sorted(p.name for p in paths) == ["eval.json", "eval.txt", "eval_problems.csv"]
    rows = (tmp_path / "eval_problems.csv").read_text().splitlines()
    assert rows[0] == "benchmark,problem_id,n_samples,n_correct,score"
    assert len(rows) == 6
    assert "100.00" in (tmp_path / "eval.txt").read_text()


# -- budget -------------------------------------------------------------------------


@pytest.mark.parametrize(
    "steps, bs, n, ctx, dyn, published",
    [
        (4380, 256, 8, 16_000, False, 1.4e8),
        (3440, 256, 8, 16_000, False, 1.1e8),
        (2000, 128, 16, 32_000, True, 2.6e8),
    ],
)
def test_published_budget_rows(steps, bs, n, ctx, dyn, published):
    k_tokens = token_budget(BudgetSpec(steps, bs, n, ctx, dyn)) / 1000
    assert float(f"{k_tokens:.2g}") == published


def test_budget_linear_and_filter_ratio():
    base = token_budget(BudgetSpec(10, 4, 2, 100))
    assert base == 8000
    assert token_budget(BudgetSpec(20, 4, 2, 100)) == 2 * base
    assert token_budget(BudgetSpec(10, 4, 2, 100, True, 1.0)) == base
    assert token_budget(BudgetSpec(10, 4, 2, 100, True, 0.25)) == 4 * base
    with pytest.raises(ConfigError):
        BudgetSpec(10, 4, 2, 100, True, 0.0)
    with pytest.raises(ConfigError):
        BudgetSpec(0, 4, 2, 100)


def test_nemotron_vs_questa_ratio():
    ours = token_budget(BudgetSpec(3440, 256, 8, 16_000))
    questa = token_budget(BudgetSpec(2000, 128, 16, 32_000, True))
    assert round(questa / ours, 1) == 2.3  # the text rounds the published 2.6/1.1 to 2.4
