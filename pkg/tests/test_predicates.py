import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadleaf import (
    BaselineModel,
    BoundsError,
    ClassifierVerdict,
    ClassifyError,
    ColorRange,
    ExternalClassifier,
    ExternalClassifierError,
    PixelImage,
    ProtocolError,
    Segment,
    TrainingError,
    classify,
    color_fraction,
    default_baseline,
    external_classify,
    has_feature,
    rgb_to_hsv,
    split_quadrants,
    train_baseline,
)
from quadleaf.imgcore import root_segment
from quadleaf.predicates import DEFAULT_BASE_GREEN, DEFAULT_DISEASE_RANGES, HUE_BINS, HsvIndex, patch_features

GREEN = (0, 255, 0)
RED = (255, 0, 0)
BROWN = (100, 50, 20)


def brute_fraction(img, seg, rng):
    """Oracle: scalar conversion of every pixel."""
    hits = 0
    for y in range(seg.y1, seg.y2):
        for x in range(seg.x1, seg.x2):
            p = rgb_to_hsv(*img.pixel(x, y))
            hits += bool(rng.contains(p.h, p.s, p.v))
    return hits / seg.area


# -- ColorRange ---------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [dict(h_lo=-1, h_hi=10), dict(h_lo=0, h_hi=360), dict(h_lo=0, h_hi=10, s_min=1.5),
     dict(h_lo=0, h_hi=10, min_fraction=-0.1), dict(h_lo=0, h_hi=10, v_min=0.8, v_max=0.2)],
)
def test_color_range_validation(kw):
    with pytest.raises(ValueError):
        ColorRange(**kw)


def test_hue_wrap():
    reds = ColorRange(h_lo=340, h_hi=20)
    assert reds.contains(350.0, 1.0, 1.0)
    assert reds.contains(5.0, 1.0, 1.0)
    assert not reds.contains(180.0, 1.0, 1.0)


def test_color_range_dict_round_trip():
    for rng in [DEFAULT_BASE_GREEN, *DEFAULT_DISEASE_RANGES.values()]:
        assert ColorRange.from_dict(json.loads(json.dumps(rng.to_dict()))) == rng


def test_default_green_accepts_leaf_greens_and_rejects_grey_and_brown():
    g = DEFAULT_BASE_GREEN
    for rgb in [(0, 255, 0), (50, 150, 40), (34, 139, 34), (107, 142, 35)]:
        p = rgb_to_hsv(*rgb)
        assert g.contains(p.h, p.s, p.v), rgb
    for rgb in [(128, 128, 128), (100, 50, 20), (0, 0, 0), (255, 255, 255)]:
        p = rgb_to_hsv(*rgb)
        assert not g.contains(p.h, p.s, p.v), rgb


# -- fractions ------------------------------------------------------------------


def test_fraction_examples():
    green = PixelImage.filled(8, 8, GREEN)
    black = PixelImage.filled(8, 8, (0, 0, 0))
    seg = Segment(0, 0, 8, 8)
    assert color_fraction(green, seg, DEFAULT_BASE_GREEN) == 1.0
    assert color_fraction(black, seg, DEFAULT_BASE_GREEN) == 0.0
    half = np.zeros((8, 8, 3), dtype=np.uint8)
    half[:, :4] = GREEN
    half[:, 4:] = RED
    img = PixelImage(half)
    assert color_fraction(img, seg, DEFAULT_BASE_GREEN) == 0.5
    assert brute_fraction(img, seg, DEFAULT_BASE_GREEN) == 0.5
    assert HsvIndex(img).fraction(seg, DEFAULT_BASE_GREEN) == 0.5


def test_has_feature_boundary_is_inclusive():
    arr = np.zeros((8, 8, 3), dtype=np.uint8)
    arr[0, :] = GREEN  # 8 of 64 pixels
    img = PixelImage(arr)
    seg = Segment(0, 0, 8, 8)
    at = ColorRange(70, 170, s_min=0.25, v_min=0.2, min_fraction=0.125)
    above = ColorRange(70, 170, s_min=0.25, v_min=0.2, min_fraction=0.126)
    assert has_feature(img, seg, at) and HsvIndex(img).has_feature(seg, at)
    assert not has_feature(img, seg, above) and not HsvIndex(img).has_feature(seg, above)
    assert has_feature(PixelImage.filled(4, 4, GREEN), Segment(0, 0, 4, 4), DEFAULT_BASE_GREEN)
    assert not has_feature(PixelImage.filled(4, 4, RED), Segment(0, 0, 4, 4), DEFAULT_BASE_GREEN)


def test_out_of_bounds_segment():
    img = PixelImage.filled(4, 4, GREEN)
    with pytest.raises(BoundsError):
        color_fraction(img, Segment(0, 0, 5, 4), DEFAULT_BASE_GREEN)
    with pytest.raises(BoundsError):
        HsvIndex(img).count(Segment(2, 2, 4, 5), DEFAULT_BASE_GREEN)


palette = st.sampled_from([GREEN, RED, BROWN, (50, 150, 40), (128, 128, 128), (195, 145, 55), (0, 0, 0)])


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.data())
def test_index_and_crop_routes_match_pixel_oracle(w, h, data):
    cells = data.draw(st.lists(palette, min_size=w * h, max_size=w * h))
    img = PixelImage(np.array(cells, dtype=np.uint8).reshape(h, w, 3))
    x1 = data.draw(st.integers(0, w - 1))
    y1 = data.draw(st.integers(0, h - 1))
    seg = Segment(x1, y1, data.draw(st.integers(x1 + 1, w)), data.draw(st.integers(y1 + 1, h)))
    index = HsvIndex(img)
    for rng in [DEFAULT_BASE_GREEN, *DEFAULT_DISEASE_RANGES.values()]:
        ref = brute_fraction(img, seg, rng)
        assert color_fraction(img, seg, rng) == ref
        assert index.fraction(seg, rng) == ref
        assert index.has_feature(seg, rng) == has_feature(img, seg, rng)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 16), st.integers(2, 16), st.integers(0, 2**32 - 1))
def test_parent_fraction_is_area_weighted_mean_of_children(w, h, seed):
    r = np.random.default_rng(seed)
    colours = np.array([GREEN, RED, BROWN, (128, 128, 128)], dtype=np.uint8)
    img = PixelImage(colours[r.integers(0, 4, size=(h, w))])
    parent = root_segment(img)
    kids = split_quadrants(parent)
    counts = sum(color_fraction(img, k, DEFAULT_BASE_GREEN) * k.area for k in kids)
    assert round(counts) == round(color_fraction(img, parent, DEFAULT_BASE_GREEN) * parent.area)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fraction_invariant_under_pixel_permutation(seed):
    r = np.random.default_rng(seed)
    colours = np.array([GREEN, RED, BROWN, (50, 150, 40)], dtype=np.uint8)
    arr = colours[r.integers(0, 4, size=(6, 7))]
    flat = arr.reshape(-1, 3)
    shuffled = flat[r.permutation(len(flat))].reshape(arr.shape)
    seg = Segment(0, 0, 7, 6)
    a = color_fraction(PixelImage(arr), seg, DEFAULT_BASE_GREEN)
    b = color_fraction(PixelImage(shuffled), seg, DEFAULT_BASE_GREEN)
    assert a == b


# -- baseline model -------------------------------------------------------------


def _two_class_model():
    greens = [PixelImage.filled(4, 4, c) for c in [(0, 255, 0), (30, 200, 30), (60, 180, 50)]]
    browns = [PixelImage.filled(4, 4, c) for c in [(100, 50, 20), (120, 60, 25), (90, 45, 15)]]
    return train_baseline([(p, "green") for p in greens] + [(p, "brown") for p in browns])


def test_feature_vector_layout():
    f = patch_features(PixelImage.filled(3, 3, GREEN))
    assert f.shape == (3 + HUE_BINS,)
    assert f[0] == pytest.approx(120 / 360)
    assert f[1:3] == pytest.approx([1.0, 1.0])
    assert f[3 + 4] == 1.0 and f[3:].sum() == pytest.approx(1.0)
    grey = patch_features(PixelImage.filled(3, 3, (128, 128, 128)))
    assert grey[3:] == pytest.approx(np.full(HUE_BINS, 1 / HUE_BINS))


def test_circular_hue_mean_wraps():
    arr = np.zeros((1, 2, 3), dtype=np.uint8)
    arr[0, 0] = (255, 0, 30)  # about 353 degrees
    arr[0, 1] = (255, 30, 0)  # about 7 degrees
    h = patch_features(PixelImage(arr))[0] * 360
    assert min(h, 360 - h) < 1.0


def test_two_class_centroids_differ_in_hue_bins():
    model = _two_class_model()
    assert model.labels == ("brown", "green")
    brown, green = model.centroids
    # greens sit in the 90-150 degree bins, browns in 0-30
    assert green[3 + 3 : 3 + 5].sum() == pytest.approx(1.0) and brown[3 + 3 : 3 + 5].sum() == 0.0
    assert brown[3 + 0] == pytest.approx(1.0) and green[3 + 0] == 0.0


def test_pure_green_is_green_with_confidence_above_half():
    v = classify(_two_class_model(), PixelImage.filled(5, 5, GREEN))
    assert v.label == "green" and v.confidence > 0.5


def test_single_class_model_always_sure():
    model = train_baseline([(PixelImage.filled(2, 2, GREEN), "only")])
    for c in [GREEN, RED, (0, 0, 0)]:
        assert classify(model, PixelImage.filled(3, 3, c)) == ClassifierVerdict("only", 1.0)


def test_equidistant_tie_goes_to_smallest_label():
    patch = PixelImage.filled(2, 2, GREEN)
    f = patch_features(patch)
    e = np.zeros_like(f)
    e[1] = 0.2
    model = BaselineModel(["zeta", "alpha"], [f + e, f - e])
    v = classify(model, patch)
    assert v == ClassifierVerdict("alpha", 0.5)


def test_training_errors():
    with pytest.raises(TrainingError):
        train_baseline([])
    with pytest.raises(TrainingError):
        train_baseline([(PixelImage.filled(2, 2, GREEN), "a")], labels=["a", "b"])
    with pytest.raises(TrainingError):
        train_baseline([(PixelImage.filled(2, 2, GREEN), "c")], labels=["a"])


def test_empty_patch_rejected():
    with pytest.raises(ClassifyError):
        classify(_two_class_model(), np.zeros((0, 0, 3), dtype=np.uint8))


def test_model_save_load(tmp_path):
    model = _two_class_model()
    model.save(tmp_path / "m.json")
    back = BaselineModel.load(tmp_path / "m.json")
    assert back.labels == model.labels
    assert np.array_equal(back.centroids, model.centroids)
    with pytest.raises(TrainingError):
        BaselineModel.from_dict({"kind": "other"})


def test_default_baseline_separates_swatches():
    m = default_baseline()
    assert classify(m, PixelImage.filled(4, 4, (50, 150, 40))).label == "healthy"
    assert classify(m, PixelImage.filled(4, 4, (100, 50, 20))).label == "late_blight"
    assert classify(m, PixelImage.filled(4, 4, (195, 145, 55))).label == "early_blight"


@pytest.mark.parametrize("conf", [-0.1, 1.1, float("nan")])
def test_verdict_confidence_range(conf):
    with pytest.raises(ValueError):
        ClassifierVerdict("x", conf)


# -- external adapter -------------------------------------------------------------


def _patches():
    return [("a", PixelImage.filled(3, 3, GREEN)), ("b", PixelImage.filled(2, 5, BROWN))]


def test_external_fixed_label(mock_classifier, monkeypatch):
    monkeypatch.setenv("MOCK_LABEL", "early_blight")
    out = external_classify(mock_classifier, _patches())
    assert [v.label for v in out] == ["early_blight", "early_blight"]
    assert all(v.confidence == 0.9 for v in out)


def test_external_nonzero_exit(mock_classifier, monkeypatch):
    monkeypatch.setenv("MOCK_MODE", "fail")
    with pytest.raises(ExternalClassifierError, match="status 1"):
        external_classify(mock_classifier, _patches())


def test_external_missing_id_is_named(mock_classifier, monkeypatch):
    monkeypatch.setenv("MOCK_MODE", "omit")
    with pytest.raises(ProtocolError, match="'?a'?"):
        external_classify(mock_classifier, _patches())


@pytest.mark.parametrize("mode", ["garbage", "dup", "unknown"])
def test_external_malformed_output(mock_classifier, monkeypatch, mode):
    monkeypatch.setenv("MOCK_MODE", mode)
    with pytest.raises(ProtocolError):
        external_classify(mock_classifier, _patches())


def test_external_missing_command():
    with pytest.raises(ExternalClassifierError):
        external_classify("/nonexistent/classifier-binary", _patches())


def test_external_adapter_checks_labels(mock_classifier, monkeypatch):
    monkeypatch.setenv("MOCK_LABEL", "rust")
    clf = ExternalClassifier(mock_classifier, labels=["healthy", "late_blight"])
    with pytest.raises(ProtocolError):
        clf.classify_many([PixelImage.filled(2, 2, GREEN)])
    monkeypatch.setenv("MOCK_LABEL", "late_blight")
    assert clf.classify(PixelImage.filled(2, 2, GREEN)).label == "late_blight"
    assert clf.classify_many([]) == []
