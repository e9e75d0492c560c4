import dataclasses

import numpy as np
import pytest

from pencilguard.detector import (
    AucReport,
    DetectorModel,
    EigenFeature,
    FeatureLabel,
    FeatureSource,
    _rank_auc,
    _roc_points,
    build_pair_features,
    class_references,
    evaluate_auc,
    extract_pair_test_feature,
    extract_test_feature,
    load_detector,
    pair_feature,
    save_detector,
    scale_sensitivity,
    score,
    score_many,
    train_detector,
    trapezoid_auc,
)
from pencilguard.exceptions import (
    ConfigMismatch,
    EmptyTrainingSet,
    InsufficientBatch,
    SingleClassTestSet,
)
from pencilguard.scalogram import Spectrogram, Visualization


def _spec(data, label="drone", tag="clean", clip_id="t-000"):
    return Spectrogram(data=np.asarray(data, dtype=float),
                       visualization=Visualization.LOG,
                       source_clip_id=clip_id, class_label=label,
                       perturbation_tag=tag)


def _random_specs(rng, count, n=8, label="drone", tag="clean"):
    return [
        _spec(rng.random((n, n)) + 0.1, label=label, tag=tag,
              clip_id=f"{label}-{i:03d}")
        for i in range(count)
    ]


def test_identical_pair_gives_zero_feature():
    rng = np.random.default_rng(0)
    m = rng.random((8, 8))
    values = pair_feature(m, m)
    assert np.max(np.abs(values)) <= 1e-10


def test_diagonal_pair_log_ratios():
    """diag(e^2, e^-2) against the identity puts +-2 at the extremes."""
    d = np.eye(8)
    d[0, 0] = np.exp(2.0)
    d[1, 1] = np.exp(-2.0)
    values = pair_feature(d, np.eye(8))
    assert abs(values[0] - 2.0) <= 1e-10
    assert abs(values[-1] + 2.0) <= 1e-10
    assert np.max(np.abs(values[1:-1])) <= 1e-10


def test_schur_feature_equals_identity_pair():
    rng = np.random.default_rng(1)
    for trial in range(5):
        m = rng.random((8, 8)) + 0.1
        feat = extract_test_feature(_spec(m))
        paired = pair_feature(m, np.eye(8))
        assert np.array_equal(feat.values, paired)
        assert feat.source is FeatureSource.SINGLE_SCHUR


def test_identity_spectrogram_feature_is_zero():
    feat = extract_test_feature(_spec(np.eye(8)))
    assert np.max(np.abs(feat.values)) <= 1e-12


def test_pair_test_feature_against_reference():
    rng = np.random.default_rng(2)
    m = rng.random((8, 8)) + 0.1
    ref = rng.random((8, 8)) + 0.1
    feat = extract_pair_test_feature(_spec(m), ref)
    assert np.array_equal(feat.values, pair_feature(m, ref))
    assert feat.source is FeatureSource.PAIR_QZ


def test_feature_label_follows_tag():
    rng = np.random.default_rng(3)
    m = rng.random((8, 8)) + 0.1
    ref = rng.random((8, 8)) + 0.1
    clean = extract_pair_test_feature(_spec(m, tag="clean"), ref)
    noisy = extract_pair_test_feature(_spec(m, tag="noise:0.02"), ref)
    attacked = extract_pair_test_feature(_spec(m, tag="attack:fgsm"), ref)
    assert clean.label is FeatureLabel.LEGITIMATE
    assert noisy.label is FeatureLabel.LEGITIMATE
    assert attacked.label is FeatureLabel.ADVERSARIAL


def test_clip_cap_applies():
    d = np.eye(8)
    d[0, 0] = 1e300
    values = pair_feature(d, np.eye(8), clip_cap=5.0)
    assert values[0] == 5.0
    singular = np.eye(8)
    singular[0, 0] = 0.0
    values = pair_feature(singular, np.eye(8), clip_cap=5.0)
    assert values[-1] == -5.0


def test_class_references_are_medoids():
    rng = np.random.default_rng(4)
    batch = _random_specs(rng, 7)
    refs = class_references({"drone": batch})
    stack = np.array([s.data for s in batch])
    totals = [np.sum(np.linalg.norm(stack - s.data, axis=(1, 2)))
              for s in batch]
    assert np.array_equal(refs["drone"], batch[int(np.argmin(totals))].data)
    with pytest.raises(InsufficientBatch):
        class_references({"drone": []})


def test_build_pair_features_balanced_and_intra_class():
    rng = np.random.default_rng(5)
    legit = {"drone": _random_specs(rng, 6, label="drone"),
             "chime": _random_specs(rng, 6, label="chime")}
    adv = {"drone": _random_specs(rng, 6, label="drone", tag="attack:fgsm"),
           "chime": _random_specs(rng, 6, label="chime", tag="attack:fgsm")}
    leg_feats, adv_feats = build_pair_features(legit, adv, seed=0)
    assert len(leg_feats) == len(adv_feats)
    assert len(leg_feats) > 0
    for feat in leg_feats + adv_feats:
        i, j = feat.pair_indices
        assert i != j
    assert {f.class_label for f in leg_feats} == {"drone", "chime"}
    assert all(f.label is FeatureLabel.LEGITIMATE for f in leg_feats)
    assert all(f.label is FeatureLabel.ADVERSARIAL for f in adv_feats)


def test_build_pair_features_deterministic():
    rng = np.random.default_rng(6)
    legit = {"drone": _random_specs(rng, 5)}
    adv = {"drone": _random_specs(rng, 5, tag="attack:bim_b")}
    a_leg, a_adv = build_pair_features(legit, adv, seed=11)
    b_leg, b_adv = build_pair_features(legit, adv, seed=11)
    assert len(a_leg) == len(b_leg)
    for a, b in zip(a_leg + a_adv, b_leg + b_adv):
        assert np.array_equal(a.values, b.values)
        assert a.pair_indices == b.pair_indices


def test_build_pair_features_count_and_empty():
    rng = np.random.default_rng(7)
    legit = {"drone": _random_specs(rng, 6)}
    adv = {"drone": _random_specs(rng, 6, tag="attack:fgsm")}
    leg_feats, adv_feats = build_pair_features(legit, adv,
                                               pairs_per_class=8, seed=0)
    assert len(leg_feats) == 8 and len(adv_feats) == 8
    leg_feats, adv_feats = build_pair_features(legit, adv,
                                               pairs_per_class=0, seed=0)
    assert leg_feats == [] and adv_feats == []
    with pytest.raises(InsufficientBatch):
        build_pair_features({"drone": _random_specs(rng, 1)}, adv, seed=0)


def _toy_features(rng, count, shift, label, n=6):
    feats = []
    for i in range(count):
        values = rng.standard_normal(n) * 0.1 + shift
        feats.append(EigenFeature(values=values,
                                  source=FeatureSource.PAIR_QZ,
                                  label=label, class_label="drone"))
    return feats


def test_train_detector_separable():
    rng = np.random.default_rng(8)
    leg = _toy_features(rng, 60, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 60, 2.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    test = (_toy_features(rng, 30, 0.0, FeatureLabel.LEGITIMATE)
            + _toy_features(rng, 30, 2.0, FeatureLabel.ADVERSARIAL))
    report = evaluate_auc(model, test)
    assert report.auc == 1.0


def test_train_detector_no_signal():
    rng = np.random.default_rng(9)
    leg = _toy_features(rng, 80, 0.5, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 80, 0.5, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    test = (_toy_features(rng, 200, 0.5, FeatureLabel.LEGITIMATE)
            + _toy_features(rng, 200, 0.5, FeatureLabel.ADVERSARIAL))
    report = evaluate_auc(model, test)
    assert abs(report.auc - 0.5) <= 0.08


def test_train_detector_convex_restarts_agree():
    """The regularized objective is convex, so the seed cannot matter."""
    rng = np.random.default_rng(10)
    leg = _toy_features(rng, 40, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 40, 1.0, FeatureLabel.ADVERSARIAL)
    a = train_detector(leg, adv, seed=0)
    b = train_detector(leg, adv, seed=123)
    assert abs(a.final_loss - b.final_loss) <= 1e-8
    assert np.max(np.abs(a.weights - b.weights)) <= 1e-4


def test_train_detector_drops_constant_columns():
    rng = np.random.default_rng(11)
    leg = _toy_features(rng, 30, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 30, 1.5, FeatureLabel.ADVERSARIAL)
    frozen = []
    for f in leg + adv:
        values = f.values.copy()
        values[2] = 7.0
        frozen.append(dataclasses.replace(f, values=values))
    model = train_detector(frozen[:30], frozen[30:], seed=0)
    assert 2 not in model.kept.tolist()
    assert any("variance" in w for w in model.warnings)
    assert 0.0 <= score(model, frozen[0]) <= 1.0


def test_train_detector_guards():
    rng = np.random.default_rng(12)
    with pytest.raises(EmptyTrainingSet):
        train_detector([], [], seed=0)
    leg = _toy_features(rng, 10, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 10, 1.0, FeatureLabel.ADVERSARIAL, n=7)
    with pytest.raises(ConfigMismatch):
        train_detector(leg, adv, seed=0)


def test_score_zero_weight_model_is_half():
    rng = np.random.default_rng(13)
    model = DetectorModel(weights=np.zeros(6), bias=0.0,
                          feature_mean=np.zeros(6), feature_std=np.ones(6),
                          kept=np.arange(6), reg_strength=1.0, n=6)
    feat = _toy_features(rng, 1, 0.0, FeatureLabel.LEGITIMATE)[0]
    assert score(model, feat) == 0.5


def test_score_monotone_in_margin():
    rng = np.random.default_rng(14)
    leg = _toy_features(rng, 40, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 40, 1.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    probes = _toy_features(rng, 20, 0.5, FeatureLabel.LEGITIMATE)
    scores = score_many(model, probes)
    margins = []
    for f in probes:
        z = ((f.values - model.feature_mean) / model.feature_std)[model.kept]
        margins.append(z @ model.weights + model.bias)
    assert np.array_equal(np.argsort(scores), np.argsort(margins))


def test_score_config_mismatch():
    rng = np.random.default_rng(15)
    leg = _toy_features(rng, 10, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 10, 1.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    wrong = _toy_features(rng, 1, 0.0, FeatureLabel.LEGITIMATE, n=9)[0]
    with pytest.raises(ConfigMismatch):
        score(model, wrong)


def test_rank_auc_equals_trapezoid():
    """Rank statistic and ROC integration agree even with heavy ties."""
    rng = np.random.default_rng(16)
    checked = 0
    for trial in range(25):
        m = int(rng.integers(10, 60))
        y = rng.integers(0, 2, size=m).astype(float)
        if y.min() == y.max():
            continue
        scores = np.round(rng.random(m), 1)  # force ties
        rank = _rank_auc(scores, y)
        trap = trapezoid_auc(_roc_points(scores, y))
        assert abs(rank - trap) <= 1e-12
        checked += 1
    assert checked >= 20


def test_evaluate_auc_shuffled_labels():
    rng = np.random.default_rng(17)
    leg = _toy_features(rng, 50, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 50, 1.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    probes = _toy_features(rng, 400, 0.5, FeatureLabel.LEGITIMATE)
    half = len(probes) // 2
    relabeled = [dataclasses.replace(f, label=FeatureLabel.ADVERSARIAL)
                 for f in probes[:half]] + probes[half:]
    report = evaluate_auc(model, relabeled)
    assert abs(report.auc - 0.5) <= 0.08


def test_evaluate_auc_single_class_guard():
    rng = np.random.default_rng(18)
    leg = _toy_features(rng, 10, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 10, 1.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    with pytest.raises(SingleClassTestSet):
        evaluate_auc(model, leg)


def test_evaluate_auc_per_class_means():
    rng = np.random.default_rng(19)
    leg = _toy_features(rng, 30, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 30, 2.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    test = []
    for cls in ("drone", "chime"):
        for f in _toy_features(rng, 10, 0.0, FeatureLabel.LEGITIMATE):
            test.append(dataclasses.replace(f, class_label=cls))
        for f in _toy_features(rng, 10, 2.0, FeatureLabel.ADVERSARIAL):
            test.append(dataclasses.replace(f, class_label=cls))
    report = evaluate_auc(model, test)
    assert set(report.class_auc) == {"drone", "chime"}
    assert abs(report.mean_class_auc
               - np.mean(list(report.class_auc.values()))) <= 1e-15
    assert isinstance(report, AucReport)


def test_roc_curve_endpoints():
    rng = np.random.default_rng(20)
    leg = _toy_features(rng, 20, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 20, 2.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    report = evaluate_auc(model, leg + adv)
    roc = np.asarray(report.roc)
    assert tuple(roc[0]) == (0.0, 0.0)
    assert tuple(roc[-1]) == (1.0, 1.0)
    assert np.all(np.diff(roc[:, 0]) >= 0)
    assert np.all(np.diff(roc[:, 1]) >= 0)


def test_scale_sensitivity_diagnostic():
    rng = np.random.default_rng(21)
    leg = _toy_features(rng, 20, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 20, 1.0, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    drift = scale_sensitivity(model, leg + adv, factor=2.0)
    assert np.isfinite(drift)
    assert drift >= 0.0


def test_detector_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(22)
    leg = _toy_features(rng, 25, 0.0, FeatureLabel.LEGITIMATE)
    adv = _toy_features(rng, 25, 1.5, FeatureLabel.ADVERSARIAL)
    model = train_detector(leg, adv, seed=0)
    path = tmp_path / "detector.json"
    save_detector(model, path)
    back = load_detector(path)
    probes = _toy_features(rng, 10, 0.75, FeatureLabel.LEGITIMATE)
    assert np.array_equal(score_many(model, probes),
                          score_many(back, probes))
    assert back.ordering == model.ordering
    assert np.array_equal(back.kept, model.kept)


def test_desk_detector_schur_mode(desk):
    """End-to-end sanity on the shared corpus: schur mode separates FGSM."""
    from pencilguard.attacks import attack_fgsm
    from pencilguard.scalogram import add_gaussian_noise

    by_class = {}
    for spec in desk.train_specs:
        by_class.setdefault(spec.class_label, []).append(spec)
    legit = {}
    adv = {}
    for cls, batch in sorted(by_class.items()):
        batch = batch[:8]
        legit[cls] = batch + [add_gaussian_noise(s, 0.02, seed=i)
                              for i, s in enumerate(batch)]
        adv[cls] = [attack_fgsm(desk.mlp, s, eps=0.01,
                                value_range=desk.value_range).adversarial
                    for s in batch]
    leg_feats, adv_feats = build_pair_features(legit, adv, seed=0)
    model = train_detector(leg_feats, adv_feats, seed=0)

    test_feats = []
    for spec in desk.test_specs[:16]:
        test_feats.append(extract_test_feature(spec))
        attacked = attack_fgsm(desk.mlp, spec, eps=0.01,
                               value_range=desk.value_range).adversarial
        test_feats.append(extract_test_feature(attacked))
    report = evaluate_auc(model, test_feats)
    assert report.auc >= 0.8
