"""End-to-end pipeline stages on a small synthetic corpus.

One module-scoped run feeds most tests here; each test inspects a slice of
the artifact tree.
"""

import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from pencilguard.chordal import epsilon_of
from pencilguard.config import config_from_dict, validate_config
from pencilguard.detector import load_detector
from pencilguard.exceptions import MissingArtifact
from pencilguard.pipeline import (
    STAGES,
    load_spectrogram,
    stage_attack,
    stage_chordal,
    stage_detect,
    stage_prepare,
    stage_report,
)


def _tiny_config(out_dir):
    return validate_config(config_from_dict({
        "out_dir": str(out_dir),
        "seed": 1,
        "workers": 1,
        "corpus": {"clips_per_class": 3},
        "spectrogram": {
            "n": 8,
            "augmentation_scales": [0.9],
            "noise_sigmas": [0.02],
        },
        "attacks": {"fgsm": {}, "ea": {"iters": 40}, "lfa": {}},
    }))


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny") / "run"
    cfg = _tiny_config(out)
    stage_prepare(cfg)
    stage_attack(cfg)
    stage_chordal(cfg)
    stage_detect(cfg)
    stage_report(cfg)
    return cfg, out


def test_stage_registry_order():
    assert list(STAGES) == ["prepare", "attack", "chordal", "detect", "report"]


def test_manifest_structure(tiny):
    _, out = tiny
    man = json.loads((out / "manifest.json").read_text())
    assert man["classes"] == ["drone", "chime", "hiss", "ticker"]
    assert man["n"] == 8
    entries = man["entries"]
    # 12 source clips; the 8 training clips each gain one pitch-shifted copy
    assert len(entries) == 20
    splits = [e["split"] for e in entries]
    assert splits.count("test") == 4
    assert splits.count("train") == 16
    aug = [e for e in entries if e["augmented_from"]]
    assert len(aug) == 8
    assert all(e["split"] == "train" and e["scale"] == 0.9 for e in aug)
    ids = [e["clip_id"] for e in entries]
    assert ids == sorted(ids)
    for e in entries:
        assert (out / e["path"]).exists()


def test_corpus_sidecars_match_manifest(tiny):
    _, out = tiny
    man = json.loads((out / "manifest.json").read_text())
    for e in man["entries"][:6]:
        spec, sidecar = load_spectrogram(out / "corpus", e["clip_id"])
        assert spec.class_label == e["class_label"]
        assert sidecar["clip_id"] == e["clip_id"]
        assert spec.data.shape == (8, 8)


def test_prepare_rerun_is_byte_identical(tiny):
    cfg, out = tiny
    before = (out / "manifest.json").read_bytes()
    sample = out / "corpus" / "drone-000.pgm1"
    spec_before = sample.read_bytes()
    stage_prepare(cfg)
    assert (out / "manifest.json").read_bytes() == before
    assert sample.read_bytes() == spec_before


def test_victim_artifacts(tiny):
    _, out = tiny
    vic = json.loads((out / "victims" / "victims.json").read_text())
    for key in ("mlp_test_accuracy", "svm_test_accuracy",
                "surrogate_test_accuracy"):
        assert 0.0 <= vic[key] <= 1.0
    lo, hi = vic["value_range"]
    assert lo < hi
    assert (out / "victims" / "mlp.json").exists()
    assert (out / "victims" / "svm.json").exists()
    assert (out / "victims" / "surrogate" / "mlp.json").exists()


def test_attack_summary_and_sidecars(tiny):
    _, out = tiny
    summary = json.loads((out / "attacks" / "attacks.json").read_text())
    assert set(summary["attacks"]) == {"fgsm", "ea", "lfa"}
    assert set(summary["noise"]) == {"0.02"}
    fgsm = summary["attacks"]["fgsm"]
    assert fgsm["victim"] == "mlp"
    assert fgsm["train"]["count"] == 8
    assert fgsm["test"]["count"] == 4
    sidecars = sorted((out / "attacks" / "fgsm").glob("*.json"))
    assert len(sidecars) == 12
    item = json.loads(sidecars[0].read_text())
    for key in ("attack", "split", "success", "epsilon_realized",
                "iterations", "excluded"):
        assert key in item
    noise = summary["noise"]["0.02"]
    assert noise["train"]["count"] == 8 and noise["test"]["count"] == 4


def test_lfa_poisoned_model_saved(tiny):
    _, out = tiny
    summary = json.loads((out / "attacks" / "attacks.json").read_text())
    lfa = summary["attacks"]["lfa"]
    assert lfa["victim"] == "svm"
    assert lfa["flipped"] >= 1
    assert lfa["adversarial_count"] == lfa["test"]["count"]
    assert (out / "attacks" / "lfa" / "poisoned" / "svm.json").exists()


def test_attack_epsilon_matches_artifacts(tiny):
    _, out = tiny
    fgsm_dir = out / "attacks" / "fgsm"
    for path in sorted(fgsm_dir.glob("*.json"))[:3]:
        sidecar = json.loads(path.read_text())
        adv, _ = load_spectrogram(fgsm_dir, sidecar["clip_id"])
        clean, _ = load_spectrogram(out / "corpus", sidecar["clip_id"])
        eps = epsilon_of(clean.data, adv.data)
        assert abs(eps - sidecar["epsilon_realized"]) <= 1e-12


def test_attacks_csv_shape(tiny):
    _, out = tiny
    with open(out / "attacks" / "attacks.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["attack", "victim", "count", "success_rate",
                       "victim_accuracy", "mean_epsilon", "mean_iterations",
                       "excluded"]
    names = [r[0] for r in rows[1:]]
    assert names == ["ea", "fgsm", "lfa", "noise:0.02"]


def test_chordal_artifacts(tiny):
    _, out = tiny
    ch = json.loads((out / "chordal" / "chordal.json").read_text())
    tags = {row["tag"] for row in ch["rows"]}
    assert {"attack:fgsm", "attack:ea", "noisy:0.02"} <= tags
    sep = ch["separation"]
    assert sep["attack_pool_size"] >= 1 and sep["noise_pool_size"] >= 1
    assert sep["ratio"] is None or sep["ratio"] >= 0.0
    with open(out / "chordal" / "records.csv") as fh:
        records = list(csv.reader(fh))
    assert records[0] == ["pair_id", "tag", "chord", "bound", "gamma_slack",
                          "epsilon"]
    assert len(records) > 1


def test_detector_artifacts(tiny):
    _, out = tiny
    model = load_detector(out / "detector" / "detector.json")
    # fgsm is the only configured member of the default training family
    assert model.attacks_seen == ("fgsm",)
    auc = json.loads((out / "detector" / "auc.json").read_text())
    assert auc["train_attacks"] == ["fgsm"]
    assert set(auc["modes"]) == {"schur", "pair"}
    for per_attack in auc["modes"].values():
        # lfa only appears when the poisoned model actually flips test clips
        assert {"fgsm", "ea"} <= set(per_attack) <= {"fgsm", "ea", "lfa"}
        for value in per_attack.values():
            assert 0.0 <= value["auc"] <= 1.0
            assert value["n_legit"] == 4
            assert value["n_adversarial"] >= 1
    assert 0.0 <= auc["null_leakage_auc"] <= 1.0
    assert np.isfinite(auc["scale_sensitivity_x2"])


def test_report_outputs(tiny):
    _, out = tiny
    text = (out / "report.md").read_text()
    for heading in ("## Corpus", "## Victims", "## Attacks",
                    "## Detector AUC"):
        assert heading in text
    with open(out / "summary.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "section"
    assert len(rows) > 5


def test_missing_manifest_names_prepare(tmp_path):
    cfg = _tiny_config(tmp_path / "empty")
    (tmp_path / "empty").mkdir()
    with pytest.raises(MissingArtifact, match="prepare stage"):
        stage_chordal(cfg)


def test_missing_attacks_names_attack_stage(tiny, tmp_path):
    _, out = tiny
    part = tmp_path / "partial"
    part.mkdir()
    shutil.copy(out / "manifest.json", part / "manifest.json")
    shutil.copytree(out / "corpus", part / "corpus")
    cfg = _tiny_config(part)
    with pytest.raises(MissingArtifact, match="attack stage"):
        stage_chordal(cfg)
