import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadleaf import ConfigError, PixelImage, Segment, encode_image
from quadleaf.evalbench import (
    ConfusionMatrix,
    ConvStepParams,
    bench_detect,
    class_metrics,
    conv_steps,
    evaluate_dataset,
    f1_score,
    image_label,
    macro_average,
    metrics_table,
)
from quadleaf.synthetic import make_leaf, make_suite

LABELS = ("healthy", "early_blight", "late_blight")


# -- metrics ------------------------------------------------------------------


def test_diagonal_matrix_is_perfect():
    cm = ConfusionMatrix(LABELS, np.diag([3, 5, 2]))
    for lab in LABELS:
        assert class_metrics(cm, lab) == {"precision": 1.0, "recall": 1.0, "f1": 1.0, "specificity": 1.0}


def test_hand_counted_matrix():
    # rows true, columns predicted
    cm = ConfusionMatrix(["a", "b"], [[8, 2], [1, 9]])
    m = class_metrics(cm, "a")
    assert m["precision"] == pytest.approx(8 / 9)
    assert m["recall"] == pytest.approx(8 / 10)
    assert m["specificity"] == pytest.approx(9 / 10)
    assert m["f1"] == pytest.approx(2 * (8 / 9) * 0.8 / (8 / 9 + 0.8))
    assert cm.one_vs_rest("b") == (9, 2, 1, 8)


def test_zero_denominators_are_absent_not_zero():
    cm = ConfusionMatrix(["a", "b"], [[0, 0], [0, 4]])
    m = class_metrics(cm, "a")
    assert m["precision"] is None and m["recall"] is None and m["f1"] is None
    assert m["specificity"] == 1.0
    avg = macro_average({"a": m, "b": class_metrics(cm, "b")})
    assert avg["precision"] == 1.0 and avg["precision_skipped"] == 1
    # b has no negatives at all, so its specificity is undefined too
    assert avg["specificity"] == 1.0 and avg["specificity_skipped"] == 1


def test_f1_from_printed_values():
    assert f1_score(0.7869, 0.8421) == pytest.approx(0.8136, abs=5e-4)
    assert f1_score(0.843, 0.8718) == pytest.approx(0.8571, abs=5e-4)
    assert f1_score(0.0, 0.0) is None
    assert f1_score(None, 0.5) is None


def test_confusion_matrix_validation():
    with pytest.raises(ValueError):
        ConfusionMatrix(["a", "a"])
    with pytest.raises(ValueError):
        ConfusionMatrix(["a", "b"], [[1, -1], [0, 0]])
    with pytest.raises(ValueError):
        ConfusionMatrix(["a", "b"], [[1]])


pairs = st.lists(st.tuples(st.sampled_from(LABELS), st.sampled_from(LABELS)), min_size=1, max_size=60)


@given(pairs)
def test_metric_ranges_and_f1_between_p_and_r(data):
    truths, preds = zip(*data)
    cm = ConfusionMatrix.from_pairs(truths, preds, LABELS)
    assert cm.total == len(data)
    for lab in LABELS:
        m = class_metrics(cm, lab)
        for v in m.values():
            assert v is None or 0.0 <= v <= 1.0
        if m["f1"] is not None:
            lo, hi = sorted([m["precision"], m["recall"]])
            assert lo - 1e-12 <= m["f1"] <= hi + 1e-12


@given(pairs, st.permutations(LABELS))
def test_total_preserved_under_relabeling(data, perm):
    mapping = dict(zip(LABELS, perm))
    truths, preds = zip(*data)
    a = ConfusionMatrix.from_pairs(truths, preds, LABELS)
    b = ConfusionMatrix.from_pairs([mapping[t] for t in truths], [mapping[p] for p in preds], LABELS)
    assert a.total == b.total
    # and the counts move with the labels
    for t in LABELS:
        for p in LABELS:
            assert a.counts[a.index(t), a.index(p)] == b.counts[b.index(mapping[t]), b.index(mapping[p])]


def test_metrics_table_layout():
    cm = ConfusionMatrix(["a", "b"], [[1, 0], [0, 0]])
    text = metrics_table({lab: class_metrics(cm, lab) for lab in cm.labels})
    lines = text.splitlines()
    assert lines[0].split(" | ")[0].strip() == "Disease"
    assert len(lines) == 4
    assert "-" in lines[3].split("|")[1]  # b has no precision


# -- conv steps -------------------------------------------------------------------


def test_conv_steps_examples():
    assert conv_steps(ConvStepParams(di=14, m=3, dk=3, n=1)) == {"traditional": 5292, "dwsc": 5880}
    r = conv_steps(ConvStepParams(di=14, m=3, dk=3, n=64))
    assert r == {"traditional": 338688, "dwsc": 42924}
    assert r["dwsc"] < r["traditional"]


@given(st.integers(1, 500), st.integers(1, 500))
def test_conv_steps_pointwise_reduction(di, m):
    r = conv_steps(ConvStepParams(di=di, m=m, dk=1, n=1))
    assert r == {"traditional": m * di * di, "dwsc": 2 * m * di * di}


@given(st.integers(1, 300), st.integers(1, 300), st.integers(1, 15), st.integers(1, 600))
def test_dwsc_cheaper_iff(di, m, dk, n):
    r = conv_steps(ConvStepParams(di=di, m=m, dk=dk, n=n))
    assert (r["dwsc"] < r["traditional"]) == (n * (dk * dk - 1) > dk * dk)


def test_conv_steps_overflow_and_validation():
    with pytest.raises(OverflowError):
        conv_steps(ConvStepParams(di=10**6, m=10**6, dk=10**3, n=10**3))
    for bad in [dict(di=0, m=1, dk=1, n=1), dict(di=1, m=1, dk=1, n=1.5), dict(di=True, m=1, dk=1, n=1)]:
        with pytest.raises(ValueError):
            ConvStepParams(**bad)


# -- dataset evaluation -----------------------------------------------------------


def test_image_label_collapse_rules():
    fmap = {
        "late_blight": [Segment(0, 0, 10, 10)],
        "early_blight": [Segment(20, 20, 24, 24), Segment(30, 30, 34, 34)],
    }
    assert image_label(fmap, (64, 64)) == "late_blight"
    assert image_label(fmap, (64, 64), collapse="count") == "early_blight"
    assert image_label({}, (64, 64)) == "healthy"
    tie = {"b": [Segment(0, 0, 2, 2)], "a": [Segment(9, 9, 11, 11)]}
    assert image_label(tie, (16, 16)) == "a"
    with pytest.raises(ConfigError):
        image_label(fmap, (64, 64), collapse="confidence")


def test_grey_images_all_healthy(b2_config, trained_model):
    grey = PixelImage.filled(64, 64, (128, 128, 128))
    res = evaluate_dataset([(grey, "healthy")] * 4, b2_config, trained_model)
    assert res.confusion.counts[res.confusion.index("healthy"), res.confusion.index("healthy")] == 4
    assert res.confusion.total == 4
    assert list(res.per_class) == ["healthy"]


def test_failed_decode_is_reported(b2_config, trained_model):
    res = evaluate_dataset([(b"P6\n2 2\n255\n\x00", "healthy")], b2_config, trained_model)
    assert res.confusion.total == 0
    assert len(res.failures) == 1
    assert res.to_dict()["failures"][0]["sample"] == "sample[0]"


def test_unknown_label_and_empty_dataset(b2_config, trained_model):
    with pytest.raises(ConfigError):
        evaluate_dataset([], b2_config, trained_model)
    with pytest.raises(ConfigError):
        evaluate_dataset([(PixelImage.filled(4, 4, (0, 0, 0)), "rust")], b2_config, trained_model)


def test_synthetic_suite_is_diagonal(b2_config, trained_model, tmp_path):
    suite = make_suite(18, seed=21, labels=LABELS)
    samples = [(s.image, s.label) for s in suite]
    # mix in path and bytes inputs
    (tmp_path / "x.ppm").write_bytes(encode_image(samples[0][0], "ppm"))
    samples[0] = (tmp_path / "x.ppm", samples[0][1])
    samples[1] = (encode_image(samples[1][0], "png"), samples[1][1])
    res = evaluate_dataset(samples, b2_config, trained_model)
    cm = res.confusion.counts
    assert np.trace(cm) > cm.sum() - np.trace(cm)
    for lab, m in res.per_class.items():
        assert m["f1"] >= 0.9, (lab, m)


# -- timing -------------------------------------------------------------------------


def test_bench_counts_are_deterministic(b2_config, trained_model):
    img = make_leaf(256, "late_blight", seed=3).image
    res = bench_detect(img, b2_config, trained_model, reps=5)
    assert len(res.times) == 5
    assert all(t > 0 for t in res.times)
    assert res.min <= res.median <= max(res.times)
    assert res.classifier_invocations > 0 and res.segments_examined > 0
    d = res.to_dict()
    assert d["reps"] == 5 and d["layers"] == res.layers


def test_bench_rejects_zero_reps():
    with pytest.raises(ConfigError):
        bench_detect(PixelImage.filled(4, 4, (0, 0, 0)), reps=0)
