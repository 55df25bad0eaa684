import numpy as np
import pytest

from trajlink.evaluation import (
    EvalReport,
    auc_score,
    affinity_split,
    evaluate,
    f_measure,
    label_subtrajectories,
    truth_pairs,
)
from trajlink.matching import MatchResult

from conftest import make_tr


# ---------------------------------------------------------------- reports


def test_perfect_prediction_scores_ones():
    truth = {("a", "b"), ("b", "c")}
    rep = evaluate(truth, truth)
    assert rep.precision == 1.0 and rep.recall == 1.0 and rep.f_measure == 1.0
    assert rep.n_pred == 2 and rep.n_truth == 2 and rep.n_correct == 2


def test_empty_prediction_scores_zeros():
    rep = evaluate(set(), {("a", "b")})
    assert rep.precision == 0.0 and rep.recall == 0.0 and rep.f_measure == 0.0


def test_partial_prediction_example():
    truth = {("a", "b"), ("b", "c"), ("c", "d"), ("d", "e")}
    pred = {("a", "b"), ("b", "c"), ("c", "d"), ("x", "y")}
    rep = evaluate(pred, truth)
    assert rep.precision == 0.75
    assert rep.recall == 0.75
    assert rep.f_measure == 0.75
    assert rep.n_correct == 3


def test_evaluate_accepts_match_results():
    res = MatchResult(pairs=(("a", "b", 0.9),), terminals=("b",), sequences=(("a", "b"),))
    rep = evaluate(res, {("a", "b")})
    assert rep.f_measure == 1.0
    # and a list of windowed results accumulates pairs
    rep2 = evaluate([res, res], {("a", "b")})
    assert rep2.n_pred == 1


def test_evaluate_rejects_unknown_ids():
    with pytest.raises(ValueError, match="unknown sub-trajectory ids"):
        evaluate({("a", "b")}, {("a", "b")}, known_ids={"a"})


def test_adding_a_correct_pair_never_hurts():
    truth = {("a", "b"), ("b", "c"), ("c", "d")}
    pred = {("a", "b"), ("x", "y")}
    before = evaluate(pred, truth)
    after = evaluate(pred | {("b", "c")}, truth)
    assert after.precision >= before.precision
    assert after.recall >= before.recall
    assert after.f_measure >= before.f_measure


def test_f_measure_edge_cases():
    assert f_measure(0.0, 0.0) == 0.0
    assert f_measure(1.0, 1.0) == 1.0
    assert abs(f_measure(0.5, 1.0) - 2.0 / 3.0) < 1e-12


def test_report_string_format():
    rep = EvalReport(precision=0.5, recall=0.25, f_measure=1.0 / 3.0,
                     n_pred=4, n_truth=8, n_correct=2, label="day1")
    s = str(rep)
    assert s.startswith("day1: P=0.500 R=0.250 F=0.333")
    assert "(2/4 predicted, 8 true)" in s


# ---------------------------------------------------------------- labeling


def _diagonal_track(t0, t1, speed=1.0, n=30):
    t = np.linspace(t0, t1, n)
    return np.column_stack([t, speed * t, np.zeros(n)])


def test_label_subtrajectories_follows_nearest_track():
    positions = {
        0: _diagonal_track(0.0, 20.0),
        1: np.column_stack([np.linspace(0.0, 20.0, 30), np.full(30, 50.0), np.zeros(30)]),
    }
    tr = make_tr("a", 5.0, 7.0, xy=(6.0, 0.0))
    labels = label_subtrajectories([tr], positions)
    assert labels == {"a": 0}


def test_label_subtrajectories_none_when_far():
    positions = {0: _diagonal_track(0.0, 20.0)}
    off_track = make_tr("a", 5.0, 7.0, xy=(30.0, 30.0))
    assert label_subtrajectories([off_track], positions) == {"a": None}


def test_label_subtrajectories_requires_time_overlap():
    positions = {0: _diagonal_track(0.0, 4.0)}
    later = make_tr("a", 10.0, 12.0, xy=(11.0, 0.0))
    assert label_subtrajectories([later], positions) == {"a": None}


def test_truth_pairs_orders_by_time():
    trs = [
        make_tr("b", 10.0, 12.0),
        make_tr("a", 0.0, 2.0),
        make_tr("c", 20.0, 22.0),
        make_tr("z", 5.0, 6.0),
    ]
    labels = {"a": 7, "b": 7, "c": 7, "z": None}
    assert truth_pairs(trs, labels) == {("a", "b"), ("b", "c")}


def test_truth_pairs_split_by_person():
    trs = [make_tr(f"p{i}", 2.0 * i, 2.0 * i + 1.0) for i in range(4)]
    labels = {"p0": 0, "p1": 1, "p2": 0, "p3": 1}
    assert truth_pairs(trs, labels) == {("p0", "p2"), ("p1", "p3")}


# ---------------------------------------------------------------- AUC


def test_auc_separated_is_one():
    assert auc_score([0.9, 0.8, 0.7], [0.1, 0.2, 0.3]) == 1.0


def test_auc_identical_is_half():
    assert auc_score([0.5, 0.5], [0.5, 0.5]) == 0.5


def test_auc_reversed_is_zero():
    assert auc_score([0.1, 0.2], [0.8, 0.9]) == 0.0


def test_auc_needs_both_classes():
    with pytest.raises(ValueError, match="positive and negative"):
        auc_score([], [0.1])


def test_auc_matches_pairwise_probability():
    rng = np.random.default_rng(0)
    pos = rng.normal(1.0, 1.0, size=40)
    neg = rng.normal(0.0, 1.0, size=25)
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    want = wins / (len(pos) * len(neg))
    assert abs(auc_score(pos, neg) - want) < 1e-12


# ---------------------------------------------------------------- splits


def test_affinity_split_partitions_pairs():
    res = MatchResult(
        pairs=(("a", "b", 0.9), ("c", "d", 0.4), ("e", "f", 0.6)),
        terminals=(),
        sequences=(),
    )
    correct, wrong = affinity_split(res, {("a", "b"), ("e", "f")})
    assert correct == [0.9, 0.6]
    assert wrong == [0.4]
