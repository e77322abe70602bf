import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from jurysim.metrics import (
    AXES,
    breakdown,
    classification_metrics,
    cochran_q,
    evaluate,
    paired_t,
    vote_regression,
    write_report,
)

import oracles
from oracles import rec


def test_confusion_fixture():
    acc, wf1, mf1, mrec, mprec = classification_metrics(oracles.CONFUSION)
    assert acc == pytest.approx(oracles.CONFUSION_ACCURACY, abs=1e-12)
    assert mf1 == pytest.approx(oracles.CONFUSION_MACRO_F1, abs=1e-12)
    assert wf1 == pytest.approx(mf1, abs=1e-12)  # equal supports
    assert mrec == pytest.approx(0.75) and mprec == pytest.approx(0.75)


def test_all_correct():
    recs = [rec("a", (5, 12), (6, 11)), rec("b", (12, 5), (11, 6))]
    assert classification_metrics(recs) == (1.0, 1.0, 1.0, 1.0, 1.0)


def test_zero_denominator_class_scores_zero():
    recs = [rec("a", (5, 12), (6, 11)), rec("b", (5, 12), (11, 6))]
    acc, wf1, mf1, _, mprec = classification_metrics(recs)
    # buyer F1 = 0; seller P = 1/2, R = 1, F1 = 2/3
    assert acc == 0.5 and mf1 == pytest.approx(1 / 3) and mprec == pytest.approx(0.25)


def test_error_fixture():
    mae, rmse = vote_regression(oracles.ERRORS)
    assert mae == pytest.approx(oracles.ERRORS_MAE, abs=1e-9)
    assert rmse == pytest.approx(oracles.ERRORS_RMSE, abs=1e-9)


def test_regression_trivial_cases():
    assert vote_regression([rec("a", (6, 11), (6, 11))]) == (0.0, 0.0)
    assert vote_regression([rec("a", (9, 8), (6, 11))]) == (3.0, 3.0)


def test_predicted_split_is_rescaled():
    r = rec("a", (2, 3), (6, 11))  # 5 jurors; 3 seller -> 10.2 on the 17 scale
    assert r.scaled_predicted_seller == pytest.approx(10.2)
    assert vote_regression([r])[0] == pytest.approx(0.8)


def test_record_consistency_checks():
    from jurysim.cases import Verdict
    from jurysim.metrics import PredictionRecord

    with pytest.raises(ValueError):
        PredictionRecord("x", Verdict.BUYER, (5, 12), Verdict.SELLER, (6, 11))
    with pytest.raises(ValueError):
        PredictionRecord("x", Verdict.SELLER, (5, 12), Verdict.SELLER, (6, 12))
    with pytest.raises(ValueError):
        classification_metrics([])


@st.composite
def records(draw):
    n = draw(st.integers(1, 30))
    out = []
    for i in range(n):
        jurors = draw(st.sampled_from([5, 17]))
        ps = draw(st.integers(0, jurors))
        s = draw(st.integers(0, 17))
        out.append(rec(f"c{i}", (jurors - ps, ps), (17 - s, s), draw(st.sampled_from(["A", "B", ""]))))
    return out


@given(records(), st.randoms())
def test_metric_properties(recs, rnd):
    report = evaluate(recs)
    for v in (report.accuracy, report.weighted_f1, report.macro_f1, report.macro_recall, report.macro_precision):
        assert 0.0 <= v <= 1.0
    assert report.mae <= report.rmse + 1e-12 and report.rmse <= 17
    shuffled = list(recs)
    rnd.shuffle(shuffled)
    assert evaluate(shuffled).to_dict() == pytest.approx(report.to_dict())


# -------------------------------------------------------------- breakdown


def test_breakdown_buckets():
    recs = [rec("a", (5, 12), (6, 11)), rec("b", (5, 12), (12, 5)), rec("c", (12, 5), (11, 6))]
    rows = breakdown(recs, "difficulty")
    assert rows == [
        {"bucket": 5, "count": 2, "correct": 2, "accuracy": 1.0},
        {"bucket": 7, "count": 1, "correct": 0, "accuracy": 0.0},
    ]
    margins = breakdown(recs, "ground_margin")
    assert [r["bucket"] for r in margins] == ["11:6", "12:5"]
    assert margins[0]["count"] == 2  # 6:11 and 11:6 merge
    assert breakdown(recs[:1], "category") == [{"bucket": "Mobile Phones", "count": 1, "correct": 1, "accuracy": 1.0}]
    with pytest.raises(ValueError):
        breakdown(recs, "price")


# -------------------------------------------------------------- stability


def _cochran_direct(x):
    x = np.asarray(x)
    k = x.shape[1]
    c = x.sum(axis=0)
    r = x.sum(axis=1)
    n = x.sum()
    return (k - 1) * (k * (c**2).sum() - n**2) / (k * n - (r**2).sum())


def test_cochran_fixture():
    q, p = cochran_q(oracles.COCHRAN)
    assert q == pytest.approx(oracles.COCHRAN_Q, abs=1e-9)
    assert p == pytest.approx(oracles.COCHRAN_P, abs=1e-9)


def test_cochran_identical_runs():
    assert cochran_q([[1, 1, 1], [0, 0, 0], [1, 1, 1]]) == (0.0, 1.0)
    mixed = [[v] * 5 for v in (1, 0, 1, 1, 0)]
    assert cochran_q(mixed)[1] == 1.0


def test_cochran_errors():
    with pytest.raises(ValueError):
        cochran_q([[1, 0]])
    with pytest.raises(ValueError):
        cochran_q([[1, 2], [0, 1]])


@given(st.integers(2, 8), st.integers(2, 6), st.data())
def test_cochran_matches_direct_formula(n, k, data):
    x = np.array(data.draw(st.lists(st.lists(st.integers(0, 1), min_size=k, max_size=k), min_size=n, max_size=n)))
    q, p = cochran_q(x)
    if k * x.sum() - (x.sum(axis=1) ** 2).sum() == 0:
        assert (q, p) == (0.0, 1.0)
    else:
        assert q == pytest.approx(_cochran_direct(x), abs=1e-9)
        assert p == pytest.approx(stats.chi2.sf(q, k - 1), abs=1e-12)


def test_paired_t_fixture():
    t, p = paired_t(oracles.PAIRED_A, oracles.PAIRED_B)
    assert t == pytest.approx(oracles.PAIRED_T, abs=1e-9)
    ref = stats.ttest_rel(oracles.PAIRED_A, oracles.PAIRED_B)
    assert t == pytest.approx(ref.statistic, abs=1e-9) and p == pytest.approx(ref.pvalue, abs=1e-9)


def test_paired_t_zero_variance():
    assert paired_t([1, 2, 3], [1, 2, 3]) == paired_t([0, 0], [0, 0])
    res = paired_t([1, 2, 3], [1, 2, 3])
    assert res.t == 0.0 and res.zero_variance
    res = paired_t([2, 3, 4, 5, 6], [1, 2, 3, 4, 5])
    assert res.zero_variance and math.isinf(res.t) and res.t > 0
    with pytest.raises(ValueError):
        paired_t([1], [2])


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=20))
def test_paired_t_matches_direct_formula(pairs):
    a, b = zip(*pairs)
    d = np.subtract(a, b)
    res = paired_t(a, b)
    if np.std(d, ddof=1) == 0:
        assert res.zero_variance
        return
    t = d.mean() / (d.std(ddof=1) / math.sqrt(len(d)))
    assert res.t == pytest.approx(t, rel=1e-9, abs=1e-9)
    assert res.p_value == pytest.approx(2 * stats.t.sf(abs(t), len(d) - 1), abs=1e-9)


# -------------------------------------------------------------- output


def test_write_report(tmp_path):
    report = evaluate(oracles.CONFUSION)
    write_report(report, oracles.CONFUSION, tmp_path)
    assert json.loads((tmp_path / "metrics.json").read_text())["accuracy"] == 0.75
    rows = list(csv.DictReader(open(tmp_path / "predictions.csv")))
    assert len(rows) == 8 and rows[0]["case_id"] == "fn0"
    for axis in AXES:
        assert (tmp_path / f"breakdown_{axis}.csv").exists()
