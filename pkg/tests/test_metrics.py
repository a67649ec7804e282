import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mskview.errors import InconsistentAverage, SingleClassSet, WrongRowSet
from mskview.metrics import (
    AVERAGE, MULTIVIEW, MetricsRow, ScoredSet, confusion_at_threshold, macro_average, render_report, roc_auc,
    single_view_mode, summarize,
)

# MRNet multiview results as reported: class -> (auc, sensitivity, specificity, accuracy)
PUBLISHED = {
    "AlexNet": {
        "Abnormal": (0.8914, 0.9789, 0.4000, 0.8583),
        "ACL": (0.9388, 0.6852, 0.9545, 0.8333),
        "Meniscus": (0.8060, 0.6923, 0.8088, 0.7583),
        "Average": (0.8787, 0.7855, 0.7211, 0.8166),
    },
    "ResNet-18": {
        "Abnormal": (0.8114, 0.9684, 0.2800, 0.8250),
        "ACL": (0.9540, 0.7778, 0.9394, 0.8667),
        "Meniscus": (0.8083, 0.6346, 0.8529, 0.7583),
        "Average": (0.8579, 0.7936, 0.6908, 0.8167),
    },
    "GoogLeNet": {
        "Abnormal": (0.9091, 0.9789, 0.2800, 0.8333),
        "ACL": (0.8906, 0.6667, 0.9242, 0.8083),
        "Meniscus": (0.7791, 0.6154, 0.7647, 0.7000),
        "Average": (0.8596, 0.7537, 0.6563, 0.7806),
    },
}


def published_rows(model, with_average=False):
    return [MetricsRow(model, MULTIVIEW, c, *v) for c, v in PUBLISHED[model].items() if with_average or c != AVERAGE]


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    credit = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return credit / (len(pos) * len(neg))


def recount(scores, labels, threshold):
    tp = fp = tn = fn = 0
    for s, y in zip(scores, labels):
        if s >= threshold:
            if y == 1:
                tp += 1
            else:
                fp += 1
        elif y == 1:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def constructed_set(tp, fn, tn, fp):
    scores = [0.9] * tp + [0.1] * fn + [0.2] * tn + [0.7] * fp
    labels = [1] * (tp + fn) + [0] * (tn + fp)
    return ScoredSet(scores, labels)


def test_auc_examples():
    assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert roc_auc([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1]) == 0.75
    assert brute_auc([0.2, 0.4, 0.6, 0.8], [0, 1, 0, 1]) == 0.75
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auc_single_class():
    with pytest.raises(SingleClassSet):
        roc_auc([0.1, 0.2], [1, 1])


scored_sets = st.integers(2, 50).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
))


@settings(max_examples=300, deadline=None)
@given(scored_sets)
def test_auc_matches_brute_force(data):
    s, y = data
    assert abs(roc_auc(s, y) - brute_auc(s, y)) <= 1e-12


@settings(max_examples=300, deadline=None)
@given(scored_sets)
def test_auc_complement_sums_to_one(data):
    s, y = data
    assert roc_auc(s, y) + roc_auc(s, 1 - np.asarray(y)) == 1.0


@settings(max_examples=200, deadline=None)
@given(scored_sets, st.floats(0.1, 10), st.floats(-5, 5))
def test_auc_monotone_transform_invariance(data, a, b):
    s, y = data
    s = np.asarray(s)
    base = roc_auc(s, y)
    # only maps that stay strictly increasing in floating point (no merged scores)
    for t in (np.exp(s), a * s + b):
        if len(np.unique(t)) == len(np.unique(s)):
            assert roc_auc(t, y) == base


def test_confusion_threshold_zero():
    s = ScoredSet([0.0, 0.4, 0.9, 0.2], [0, 1, 0, 0])
    tp, fp, tn, fn = confusion_at_threshold(s, 0.0)
    assert (fp, tn) == (3, 0) and tp + fp + tn + fn == 4


def test_confusion_constructed_counts():
    assert confusion_at_threshold(constructed_set(93, 2, 10, 15), 0.5) == (93, 15, 10, 2)


@settings(max_examples=300, deadline=None)
@given(scored_sets, st.floats(0, 1))
def test_confusion_matches_recount(data, threshold):
    s, y = data
    counts = confusion_at_threshold(s, threshold, labels=y)
    assert counts == recount(s, y, threshold)
    assert sum(counts) == len(s)


def test_summarize_constructed_row():
    m = summarize(constructed_set(93, 2, 10, 15), 0.5)
    # 93/95, 10/25, 103/120
    assert abs(m["sensitivity"] - 0.9789) <= 5e-5 and m["sensitivity"] == 93 / 95
    assert abs(m["specificity"] - 0.4000) <= 5e-5 and m["specificity"] == 10 / 25
    assert abs(m["accuracy"] - 0.8583) <= 5e-5 and m["accuracy"] == 103 / 120
    # the reported Abnormal row reads the same at 4 decimals
    assert tuple(round(m[k], 4) for k in ("sensitivity", "specificity", "accuracy")) == PUBLISHED["AlexNet"]["Abnormal"][1:]


def test_summarize_perfect():
    m = summarize([0.9, 0.8, 0.2, 0.1], 0.5, labels=[1, 1, 0, 0])
    assert m == {"auc": 1.0, "sensitivity": 1.0, "specificity": 1.0, "accuracy": 1.0}


@settings(max_examples=200, deadline=None)
@given(scored_sets)
def test_summarize_symmetry_and_accuracy_identity(data):
    s, y = data
    s, y = np.asarray(s), np.asarray(y)
    # strictly away from the threshold so negation does not move ties across it
    s = np.where(s == 0.5, 0.51, s)
    m = summarize(s, 0.5, labels=y)
    flipped = summarize(1.0 - s, 0.5, labels=1 - y)
    assert flipped["sensitivity"] == pytest.approx(m["specificity"], abs=1e-15)
    assert flipped["specificity"] == pytest.approx(m["sensitivity"], abs=1e-15)
    p, n = int(y.sum()), int((1 - y).sum())
    assert m["accuracy"] == pytest.approx((m["sensitivity"] * p + m["specificity"] * n) / (p + n), abs=1e-12)


@pytest.mark.parametrize("model,expected", [("AlexNet", 0.8787), ("ResNet-18", 0.8579), ("GoogLeNet", 0.8596)])
def test_macro_average_auc(model, expected):
    avg = macro_average(published_rows(model))
    # oracle: plain division of the hand-summed AUCs
    aucs = [v[0] for c, v in PUBLISHED[model].items() if c != AVERAGE]
    assert avg.auc == pytest.approx((aucs[0] + aucs[1] + aucs[2]) / 3, abs=1e-15)
    assert abs(avg.auc - expected) <= 5e-5


def test_macro_average_permutation_invariant():
    rows = published_rows("ResNet-18")
    base = macro_average(rows)
    for perm in itertools.permutations(rows):
        assert macro_average(perm) == base


def test_macro_average_wrong_rows():
    rows = published_rows("AlexNet")
    with pytest.raises(WrongRowSet):
        macro_average(rows[:2])
    with pytest.raises(WrongRowSet):
        macro_average([rows[0], rows[0], rows[2]])


def test_alexnet_report_average_line():
    text = render_report(published_rows("AlexNet", with_average=True))
    assert "| AlexNet-multiview | Average | 0.8787 | 0.7855 | 0.7211 | 0.8166 |" in text.splitlines()
    lines = text.splitlines()
    assert lines[0] == "| Deep Learning Model | Class | AUC | Sensitivity | Specificity | Accuracy |"
    assert [line.split("|")[2].strip() for line in lines[2:]] == ["Abnormal", "ACL", "Meniscus", "Average"]


def test_resnet_stated_average_is_consistent():
    render_report(published_rows("ResNet-18", with_average=True))


def test_googlenet_stated_accuracy_average_is_off():
    # (0.8333 + 0.8083 + 0.7000) / 3 = 0.780533, the stated 0.7806 is 6.7e-5 away
    rows = published_rows("GoogLeNet")
    assert abs(macro_average(rows).accuracy - 0.7806) > 5e-5
    with pytest.raises(InconsistentAverage):
        render_report(published_rows("GoogLeNet", with_average=True))
    assert "| GoogLeNet-multiview | Average | 0.8596 | 0.7537 | 0.6563 | 0.7805 |" in render_report(rows)


def test_empty_report():
    assert render_report([]).splitlines() == [
        "| Deep Learning Model | Class | AUC | Sensitivity | Specificity | Accuracy |", "|---|---|---|---|---|---|",
    ]
    assert render_report([], "csv") == "model,view_mode,class,auc,sensitivity,specificity,accuracy\n"


def test_tampered_average():
    rows = published_rows("AlexNet")
    with pytest.raises(InconsistentAverage):
        render_report(rows + [MetricsRow("AlexNet", MULTIVIEW, AVERAGE, 0.8800, 0.7855, 0.7211, 0.8166)])


def _single_rows(model, plane, base):
    return [MetricsRow(model, single_view_mode(plane), c, base + 0.01 * i, 0.5, 0.5, 0.5)
            for i, c in enumerate(("Abnormal", "ACL", "Meniscus"))]


def test_report_order_and_best_single_view():
    rows = published_rows("AlexNet") + _single_rows("AlexNet", "axial", 0.6) + _single_rows("AlexNet", "coronal", 0.7)
    rows += _single_rows("AlexNet", "sagittal", 0.65)
    lines = render_report(rows).splitlines()[2:]
    assert len(lines) == 5
    assert lines[-1] == "| AlexNet-single view | Average | 0.7100 | 0.5000 | 0.5000 | 0.5000 |"
    full = render_report(rows, full=True).splitlines()[2:]
    assert len(full) == 4 + 3 * 4
    assert full[4].startswith("| AlexNet-single view (axial) | Abnormal |")
    csv_lines = render_report(rows, "csv").splitlines()
    assert csv_lines[-1] == "AlexNet,single-view(coronal),Average,0.7100,0.5000,0.5000,0.5000"


def test_report_is_deterministic():
    rows = published_rows("AlexNet") + published_rows("ResNet-18")
    assert render_report(rows) == render_report(list(rows))


def test_metrics_row_bounds():
    with pytest.raises(ValueError):
        MetricsRow("m", MULTIVIEW, "ACL", 1.2, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError):
        MetricsRow("m", MULTIVIEW, "Knee", 0.5, 0.5, 0.5, 0.5)


def test_partial_task_set_has_no_average():
    rows = [r for r in published_rows("AlexNet") if r.class_name != "Abnormal"]
    rows += [MetricsRow("AlexNet", single_view_mode("axial"), "ACL", 0.7, 0.5, 0.5, 0.5)]
    lines = render_report(rows).splitlines()[2:]
    assert [line.split("|")[2].strip() for line in lines] == ["ACL", "Meniscus", "ACL"]
    with pytest.raises(WrongRowSet):
        render_report(rows + [MetricsRow("AlexNet", MULTIVIEW, AVERAGE, 0.8, 0.5, 0.5, 0.5)])
