import math

import numpy as np
import pytest

from gradmatch.bank import GradientBank
from gradmatch.data import SplitSpec, make_gaussian_blobs, split
from gradmatch.errors import TooLarge
from gradmatch.matching import MatchObjective
from gradmatch.metrics import (ExperimentSummary, brute_force_verifier, gamma_hat,
                               gradient_error_table, redundancy, scatter_csv, set_cover_check,
                               submodularity_ratio, summarize, to_csv, to_markdown)
from gradmatch.models import init_model
from gradmatch.selectors import Selection, random_select
from gradmatch.trainer import TrainConfig, train


def _unit_bank(rng, n, d):
    rows = rng.standard_normal((n, d))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    return GradientBank(rows, rng.standard_normal(d))


def test_redundancy_examples():
    assert redundancy([np.arange(10)], 10) == 0.0
    assert redundancy([[3]], 10) == 90.0
    batch_sel = Selection([1], [1.0], 0.0, 0.0, "x", element_map=((0, 1), (2, 3, 4)))
    assert redundancy([batch_sel], 5) == 40.0


def test_redundancy_decreases_with_rounds():
    n, values = 200, []
    rounds = [random_select(n, n // 2, s) for s in range(12)]
    for r in range(1, 13):
        values.append(redundancy(rounds[:r], n))
    assert all(b <= a for a, b in zip(values, values[1:])) and values[-1] < 1.0


def test_verifier_examples():
    rng = np.random.default_rng(0)
    res = brute_force_verifier(_unit_bank(rng, 5, 3), 2, 0.5, with_gamma=False)
    assert math.isclose(res.bound, 0.2)
    one = brute_force_verifier(_unit_bank(rng, 1, 3), 1, 0.5)
    assert one.omp_F == one.optimum_F
    with pytest.raises(TooLarge):
        brute_force_verifier(_unit_bank(rng, 13, 3), 2, 0.5)


def test_verifier_approximation_guarantee():
    rng = np.random.default_rng(1)
    for _ in range(50):
        res = brute_force_verifier(_unit_bank(rng, 8, 4), 3, 0.5, with_gamma=False)
        assert res.omp_F >= res.approximation_factor * res.optimum_F - 1e-12


def test_gamma_hat_zero_for_orthogonal_element():
    # g2 is orthogonal to the target: no gain alone, positive gain next to g0
    bank = GradientBank(np.array([[1.0, 1.0], [0.0, -1.0]]) / np.array([[math.sqrt(2)], [1.0]]),
                        np.array([1.0, 0.0]))
    obj = MatchObjective(bank, 0.5)
    assert obj.gain(1, ()) == 0.0 and obj.gain(1, (0,)) > 0
    assert gamma_hat(obj, 1) == 0.0


def test_sum_form_ratio_respects_bound():
    rng = np.random.default_rng(2)
    for _ in range(20):
        obj = MatchObjective(_unit_bank(rng, 6, 4), 0.5)
        assert submodularity_ratio(obj, 2) >= 0.5 / (0.5 + 2) - 1e-9


def test_set_cover_check():
    rng = np.random.default_rng(3)
    rows = rng.standard_normal((6, 2))
    rows *= 3 / np.linalg.norm(rows, axis=1, keepdims=True)
    res = set_cover_check(GradientBank(rows, rng.standard_normal(2)), 0.5, 0.2)
    assert res is None or res.holds


def test_summary_and_emitters():
    full = {"strategy": "full", "tag": "Full", "budget_fraction": 1.0, "final_accuracy": 0.9,
            "total_time_s": 10.0}
    sub = {"strategy": "gradmatch", "tag": "GradMatchPB", "budget_fraction": 0.1,
           "final_accuracy": 0.88, "total_time_s": 2.0, "mean_grad_error": 1.5}
    s = summarize(sub, full, run="r1")
    assert math.isclose(s.relative_error_vs_full, 2.0) and s.speedup == 5.0
    with pytest.raises(ValueError):
        ExperimentSummary("x", 0.1, 0.5, 0.0, 0.0, None, None)
    text = scatter_csv([s, summarize(full, full)])
    assert text.splitlines()[0] == "run,strategy,budget_fraction,speedup,relative_error"
    assert len(text.splitlines()) == 3
    md = to_markdown([{"a": 1.0, "b": None}])
    assert md.splitlines()[2] == "| 1 |  |"
    assert to_csv([]) == "" and to_markdown([]) == ""


def test_gradient_error_table_and_purity():
    d = make_gaussian_blobs(60, 2, 3, 2.0, 0)
    data = split(d, SplitSpec(0.8, 0.1, 0))
    recs = []
    for strat in ("gradmatch", "random"):
        recs.append(train(TrainConfig(epochs=4, selection_interval=2, strategy=strat),
                          data, init_model("logreg", 3, 2))[1])
    a, b = gradient_error_table(recs), gradient_error_table(recs)
    assert a == b
    by = {r["strategy"]: r for r in a}
    assert by["GradMatch"]["n_samples"] == 2 and by["GradMatch"]["mean_grad_error"] < by["Random"]["mean_grad_error"]


def test_full_selection_error_zero():
    d = make_gaussian_blobs(30, 2, 3, 2.0, 0)
    data = split(d, SplitSpec(0.8, 0.1, 0))
    rec = train(TrainConfig(epochs=2, strategy="random", budget_fraction=1.0), data, init_model("logreg", 3, 2))[1]
    assert gradient_error_table([rec])[0]["mean_grad_error"] < 1e-10
