"""The five experiment stages behind the CLI: prepare, attack, chordal,
detect, report.

Every stage is a pure function of (config, artifacts on disk): rerunning a
stage with the same config and seeds rewrites byte-identical files.  All
randomness is derived from explicit seeds — per-item streams come from a
content hash of the item's identity, so worker count and iteration order
never change results.  Timestamps exist only in the CLI's log file, never
in artifacts.
"""

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attacks import (
    attack_bim_a,
    attack_bim_b,
    attack_cwa,
    attack_ea,
    attack_fgsm,
    attack_jsma,
    attack_lfa,
    attack_opt,
)
from .audio import load_wav, with_duration, pitch_shift
from .chordal import epsilon_of, gamma_study
from .config import DEFAULT_ATTACKS
from .detector import (
    FeatureLabel,
    build_pair_features,
    class_references,
    evaluate_auc,
    extract_pair_test_feature,
    extract_test_feature,
    save_detector,
    scale_sensitivity,
    train_detector,
)
from .exceptions import MissingArtifact, ValidationError
from .pgm1 import read_matrix, write_matrix
from .scalogram import (
    Spectrogram,
    Visualization,
    add_gaussian_noise,
    finalize,
    morlet_scalogram,
    tag_noisy,
)
from .synth import synth_corpus
from .victims import (
    load_mlp,
    load_svm,
    save_mlp,
    save_svm,
    train_mlp,
    train_svm,
)

log = logging.getLogger("pencilguard.pipeline")

MANIFEST = "manifest.json"

# attacks that craft perturbed inputs against the MLP's loss gradients
MLP_ATTACKS = ("fgsm", "bim_a", "bim_b", "jsma", "cwa", "opt")

# default detector training pool: the small-budget gradient family.  Mixing in
# the large-budget attacks (jsma, opt, ea) pulls the hinge boundary toward
# gross spectral damage and the subtle attacks stop registering.
DEFAULT_TRAIN_ATTACKS = ("bim_a", "bim_b", "cwa", "fgsm")


# --- small artifact helpers ---------------------------------------------------


def _out(cfg, *parts):
    return Path(cfg.out_dir).joinpath(*parts)


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path, stage):
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"{path} (run the {stage} stage first)")
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise MissingArtifact(f"{path} is not parseable JSON: {exc}") from None


def _write_csv(path, header, rows):
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in row]
            )


def _item_seed(top_seed, *tokens):
    """Deterministic per-item entropy, independent of processing order."""
    digest = hashlib.sha256("|".join(str(t) for t in tokens).encode()).digest()
    return [int(top_seed), int.from_bytes(digest[:8], "little")]


def save_spectrogram(spec, directory, extra=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(directory / f"{spec.source_clip_id}.pgm1", spec.data)
    sidecar = {
        "class_label": spec.class_label,
        "clip_id": spec.source_clip_id,
        "native_shape": list(spec.native_shape),
        "perturbation_tag": spec.perturbation_tag,
        "visualization": spec.visualization.value,
    }
    sidecar.update(extra or {})
    _write_json(directory / f"{spec.source_clip_id}.json", sidecar)


def load_spectrogram(directory, clip_id, stage="prepare"):
    directory = Path(directory)
    matrix_path = directory / f"{clip_id}.pgm1"
    if not matrix_path.exists():
        raise MissingArtifact(f"{matrix_path} (run the {stage} stage first)")
    sidecar = _read_json(directory / f"{clip_id}.json", stage)
    spec = Spectrogram(
        data=read_matrix(matrix_path),
        visualization=Visualization(sidecar["visualization"]),
        source_clip_id=sidecar["clip_id"],
        class_label=sidecar["class_label"],
        perturbation_tag=sidecar["perturbation_tag"],
        native_shape=tuple(sidecar["native_shape"]),
    )
    return spec, sidecar


def _pmap(fn, jobs, workers):
    jobs = list(jobs)
    if workers <= 1 or len(jobs) < 2:
        return [fn(j) for j in jobs]
    chunk = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs, chunksize=chunk))


# --- prepare ------------------------------------------------------------------


def _wav_clips(cfg):
    root = Path(cfg.corpus.wav_dir)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(classes) < 2:
        raise ValidationError(
            f"corpus.wav_dir: found {len(classes)} class directories, need >= 2"
        )
    clips = []
    for label in classes:
        for path in sorted((root / label).glob("*.wav")):
            clip = load_wav(path, target_rate=cfg.corpus.sample_rate)
            clip = with_duration(clip, cfg.corpus.duration)
            clips.append(
                dataclasses.replace(
                    clip,
                    clip_id=f"{label}-{path.stem}",
                    class_label=label,
                )
            )
    if not clips:
        raise ValidationError(f"corpus.wav_dir: no wav files under {root}")
    return clips, tuple(classes)


def _source_clips(cfg):
    if cfg.corpus.wav_dir is not None:
        return _wav_clips(cfg)
    clips = synth_corpus(
        clips_per_class=cfg.corpus.clips_per_class,
        duration=cfg.corpus.duration,
        sample_rate=cfg.corpus.sample_rate,
        seed=cfg.seed,
        classes=cfg.corpus.classes,
    )
    return clips, tuple(cfg.corpus.classes)


def _scalogram_job(args):
    clip, mode, n = args
    return finalize(
        morlet_scalogram(clip), mode, n, clip.clip_id, clip.class_label
    )


def stage_prepare(cfg):
    """Synthesize/ingest audio, split, augment the training split, and
    write every finalized spectrogram plus the manifest."""
    clips, classes = _source_clips(cfg)
    clips = sorted(clips, key=lambda c: c.clip_id)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(clips))
    n_train = 2 * len(clips) // 3
    split = {}
    for rank, idx in enumerate(perm):
        split[clips[idx].clip_id] = "train" if rank < n_train else "test"

    entries = []
    jobs = []
    for clip in clips:
        jobs.append((clip, cfg.spectrogram.visualization, cfg.spectrogram.n))
        entries.append(
            {
                "clip_id": clip.clip_id,
                "class_label": clip.class_label,
                "split": split[clip.clip_id],
                "augmented_from": None,
                "scale": None,
            }
        )
        if split[clip.clip_id] != "train":
            continue
        for scale in cfg.spectrogram.augmentation_scales:
            shifted = dataclasses.replace(
                pitch_shift(clip, scale),
                clip_id=f"{clip.clip_id}@{scale:g}",
                class_label=clip.class_label,
            )
            jobs.append(
                (shifted, cfg.spectrogram.visualization, cfg.spectrogram.n)
            )
            entries.append(
                {
                    "clip_id": shifted.clip_id,
                    "class_label": clip.class_label,
                    "split": "train",
                    "augmented_from": clip.clip_id,
                    "scale": scale,
                }
            )

    log.info("computing %d scalograms (%d source clips)", len(jobs), len(clips))
    specs = _pmap(_scalogram_job, jobs, cfg.workers)
    corpus_dir = _out(cfg, "corpus")
    for entry, spec in zip(entries, specs):
        save_spectrogram(spec, corpus_dir)
        entry["path"] = f"corpus/{entry['clip_id']}.pgm1"

    entries.sort(key=lambda e: e["clip_id"])
    manifest = {
        "classes": list(classes),
        "n": cfg.spectrogram.n,
        "sample_rate": cfg.corpus.sample_rate,
        "seed": cfg.seed,
        "visualization": cfg.spectrogram.visualization,
        "entries": entries,
    }
    _write_json(_out(cfg, MANIFEST), manifest)
    log.info("manifest: %d entries (%d train, %d test)",
             len(entries),
             sum(e["split"] == "train" for e in entries),
             sum(e["split"] == "test" for e in entries))
    return manifest


# --- attack -------------------------------------------------------------------


def _load_manifest(cfg):
    return _read_json(_out(cfg, MANIFEST), "prepare")


def _load_corpus(cfg, manifest):
    corpus_dir = _out(cfg, "corpus")
    specs = {}
    for entry in manifest["entries"]:
        specs[entry["clip_id"]], _ = load_spectrogram(
            corpus_dir, entry["clip_id"]
        )
    return specs


def _victims(cfg, manifest, specs):
    """Load the trained victims, training and saving them when absent.

    Victims learn from the unaugmented training split; the pitch-shifted
    copies enlarge the legitimate sets used by the detector, not the
    classifiers under attack.
    """
    classes = tuple(manifest["classes"])
    train_entries = [
        e for e in manifest["entries"]
        if e["split"] == "train" and e["augmented_from"] is None
    ]
    test_entries = [e for e in manifest["entries"] if e["split"] == "test"]
    x_train = np.array([specs[e["clip_id"]].data.ravel() for e in train_entries])
    y_train = np.array([classes.index(e["class_label"]) for e in train_entries])
    x_test = np.array([specs[e["clip_id"]].data.ravel() for e in test_entries])
    y_test = np.array([classes.index(e["class_label"]) for e in test_entries])

    vdir = _out(cfg, "victims")
    v = cfg.victims
    if (vdir / "mlp.json").exists():
        mlp = load_mlp(vdir)
        surrogate = load_mlp(vdir / "surrogate")
        svm = load_svm(vdir)
        log.info("loaded existing victims from %s", vdir)
    else:
        log.info("training victims on %d clips", len(x_train))
        mlp = train_mlp(
            x_train, y_train, classes, hidden=v.mlp_hidden,
            epochs=v.mlp_epochs, batch_size=v.mlp_batch_size,
            learning_rate=v.mlp_learning_rate, seed=v.mlp_seed,
        )
        surrogate = train_mlp(
            x_train, y_train, classes, hidden=v.mlp_hidden,
            epochs=v.mlp_epochs, batch_size=v.mlp_batch_size,
            learning_rate=v.mlp_learning_rate, seed=v.surrogate_seed,
        )
        svm = train_svm(
            x_train, y_train, classes, C=v.svm_c, g=v.svm_g, tol=v.svm_tol,
        )
        save_mlp(mlp, vdir)
        save_mlp(surrogate, vdir / "surrogate")
        save_svm(svm, vdir)
    value_range = (float(x_train.min()), float(x_train.max()))
    summary = {
        "classes": list(classes),
        "mlp_test_accuracy": float(mlp.accuracy(x_test, y_test)),
        "mlp_train_accuracy": float(mlp.accuracy(x_train, y_train)),
        "surrogate_test_accuracy": float(surrogate.accuracy(x_test, y_test)),
        "svm_test_accuracy": float(svm.accuracy(x_test, y_test)),
        "svm_train_accuracy": float(svm.accuracy(x_train, y_train)),
        "value_range": list(value_range),
    }
    _write_json(vdir / "victims.json", summary)
    return mlp, surrogate, svm, value_range, (x_train, y_train, x_test, y_test)


def _craft(name, params, spec, mlp, surrogate, svm, value_range):
    if name == "fgsm":
        return attack_fgsm(mlp, spec, params["eps"], value_range)
    if name == "bim_a":
        return attack_bim_a(mlp, spec, params["eps"], params["step"],
                            params["iters"], value_range)
    if name == "bim_b":
        return attack_bim_b(mlp, spec, params["eps"], params["step"],
                            params["iters"], value_range)
    if name == "jsma":
        return attack_jsma(mlp, spec, params["budget_fraction"],
                           params["theta"], value_range)
    if name == "cwa":
        return attack_cwa(mlp, spec, params["c_init"], params["steps"],
                          params["search_steps"], params["lr"], value_range)
    if name == "opt":
        return attack_opt(surrogate, mlp, spec, params["c_init"],
                          params["steps"], params["search_steps"],
                          params["lr"], value_range)
    if name == "ea":
        return attack_ea(svm, spec, params["step"], params["iters"],
                         value_range)
    raise ValueError(f"unknown attack {name!r}")


def _split_stats(items):
    if not items:
        return {"count": 0}
    eps = [i["epsilon_realized"] for i in items]
    iters = [i["iterations"] for i in items]
    return {
        "count": len(items),
        "success_rate": float(np.mean([i["success"] for i in items])),
        "victim_accuracy": float(np.mean([not i["success"] for i in items])),
        "mean_epsilon": float(np.mean(eps)),
        "mean_iterations": float(np.mean(iters)),
        "excluded": int(sum(i["excluded"] for i in items)),
    }


def stage_attack(cfg):
    """Craft every configured attack set plus the noise sets; train the
    victims when no saved ones exist; write the accuracy summary."""
    manifest = _load_manifest(cfg)
    specs = _load_corpus(cfg, manifest)
    mlp, surrogate, svm, value_range, arrays = _victims(cfg, manifest, specs)
    x_train, y_train, x_test, y_test = arrays
    classes = tuple(manifest["classes"])

    base_train = [
        e for e in manifest["entries"]
        if e["split"] == "train" and e["augmented_from"] is None
    ]
    test_entries = [e for e in manifest["entries"] if e["split"] == "test"]

    summary = {"attacks": {}, "noise": {}}
    summary["epsilon_cap"] = float(cfg.epsilon_cap)
    summary["value_range"] = list(value_range)
    summary["clean"] = {
        "mlp_test_accuracy": float(mlp.accuracy(x_test, y_test)),
        "svm_test_accuracy": float(svm.accuracy(x_test, y_test)),
    }

    for name in sorted(cfg.attacks):
        params = {**DEFAULT_ATTACKS.get(name, {}), **cfg.attacks[name]}
        out_dir = _out(cfg, "attacks", name)
        if name == "lfa":
            test_specs = [specs[e["clip_id"]] for e in test_entries]
            res = attack_lfa(
                x_train, y_train, classes, test_specs,
                flip_fraction=params["flip_fraction"], seed=cfg.seed,
                C=cfg.victims.svm_c, g=cfg.victims.svm_g, clean_model=svm,
            )
            save_svm(res.poisoned, out_dir / "poisoned")
            for adv in res.adversarial:
                save_spectrogram(
                    adv, out_dir,
                    extra={"attack": name, "split": "test", "success": True,
                           "epsilon_realized": 0.0, "iterations": 0,
                           "excluded": False},
                )
            summary["attacks"][name] = {
                "victim": "svm",
                "flipped": int(len(res.flipped)),
                "adversarial_count": len(res.adversarial),
                "clean_test_accuracy": float(res.clean.accuracy(x_test, y_test)),
                "poisoned_test_accuracy": float(
                    res.poisoned.accuracy(x_test, y_test)
                ),
                "test": {
                    "count": len(res.adversarial),
                    "success_rate": 1.0 if res.adversarial else 0.0,
                    "victim_accuracy": float(
                        res.poisoned.accuracy(x_test, y_test)
                    ),
                    "mean_epsilon": 0.0,
                    "mean_iterations": 0.0,
                    "excluded": 0,
                },
            }
            log.info("lfa: flipped %d labels, %d adversarial test clips",
                     len(res.flipped), len(res.adversarial))
            continue

        victim = "svm" if name == "ea" else "mlp"
        per_split = {}
        for split_name, entries in (("train", base_train),
                                    ("test", test_entries)):
            items = []
            for entry in entries:
                spec = specs[entry["clip_id"]]
                res = _craft(name, params, spec, mlp, surrogate, svm,
                             value_range)
                excluded = bool(res.epsilon_realized > cfg.epsilon_cap)
                extra = {
                    "attack": name,
                    "split": split_name,
                    "success": bool(res.success),
                    "epsilon_realized": float(res.epsilon_realized),
                    "iterations": int(res.iterations),
                    "excluded": excluded,
                }
                save_spectrogram(res.adversarial, out_dir, extra=extra)
                items.append(extra)
            per_split[split_name] = _split_stats(items)
        summary["attacks"][name] = {"victim": victim, **per_split}
        log.info(
            "%s: test victim accuracy %.3f, mean eps %.4f",
            name, per_split["test"].get("victim_accuracy", float("nan")),
            per_split["test"].get("mean_epsilon", float("nan")),
        )

    for sigma in cfg.spectrogram.noise_sigmas:
        out_dir = _out(cfg, "attacks", "noise", f"{sigma:g}")
        stats = {}
        for split_name, entries in (("train", base_train),
                                    ("test", test_entries)):
            correct = []
            eps = []
            for entry in entries:
                spec = specs[entry["clip_id"]]
                noisy = add_gaussian_noise(
                    spec, sigma,
                    seed=_item_seed(cfg.seed, "noise", f"{sigma:g}",
                                    entry["clip_id"]),
                    epsilon_cap=cfg.epsilon_cap,
                )
                realized = float(epsilon_of(spec.data, noisy.data))
                save_spectrogram(
                    noisy, out_dir,
                    extra={"split": split_name, "sigma": sigma,
                           "epsilon_realized": realized, "excluded": False},
                )
                eps.append(realized)
                pred = mlp.predict_index(noisy.data.ravel())
                correct.append(pred == classes.index(entry["class_label"]))
            stats[split_name] = {
                "count": len(entries),
                "mlp_accuracy": float(np.mean(correct)),
                "mean_epsilon": float(np.mean(eps)),
            }
        summary["noise"][f"{sigma:g}"] = stats

    _write_json(_out(cfg, "attacks", "attacks.json"), summary)
    rows = []
    for name in sorted(summary["attacks"]):
        entry = summary["attacks"][name]
        test = entry["test"]
        rows.append(
            [name, entry["victim"], test["count"], test["success_rate"],
             test["victim_accuracy"], test["mean_epsilon"],
             test["mean_iterations"], test["excluded"]]
        )
    for key in sorted(summary["noise"], key=float):
        stats = summary["noise"][key]["test"]
        rows.append(
            [f"noise:{key}", "mlp", stats["count"], "",
             stats["mlp_accuracy"], stats["mean_epsilon"], "", 0]
        )
    _write_csv(
        _out(cfg, "attacks", "attacks.csv"),
        ["attack", "victim", "count", "success_rate", "victim_accuracy",
         "mean_epsilon", "mean_iterations", "excluded"],
        rows,
    )
    return summary


# --- chordal ------------------------------------------------------------------


def _attack_items(cfg, name, split):
    """Sidecars (sorted by clip id) of one attack directory, one split."""
    out_dir = _out(cfg, "attacks", name)
    if not out_dir.is_dir():
        raise MissingArtifact(f"{out_dir} (run the attack stage first)")
    items = []
    for sidecar_path in sorted(out_dir.glob("*.json")):
        with open(sidecar_path) as fh:
            sidecar = json.load(fh)
        if sidecar.get("split") != split:
            continue
        items.append(sidecar)
    return items


def _noise_dirs(cfg):
    root = _out(cfg, "attacks", "noise")
    if not root.is_dir():
        raise MissingArtifact(f"{root} (run the attack stage first)")
    return sorted((p.name for p in root.iterdir() if p.is_dir()), key=float)


def stage_chordal(cfg):
    """gamma_study over every (clean, perturbed) test pair, plus the
    attack-vs-noise separation summary."""
    manifest = _load_manifest(cfg)
    attack_summary = _read_json(_out(cfg, "attacks", "attacks.json"), "attack")
    corpus_dir = _out(cfg, "corpus")

    dataset = []
    for name in sorted(attack_summary["attacks"]):
        adv_dir = _out(cfg, "attacks", name)
        for item in _attack_items(cfg, name, "test"):
            clean, _ = load_spectrogram(corpus_dir, item["clip_id"])
            pert, _ = load_spectrogram(adv_dir, item["clip_id"], "attack")
            dataset.append((clean.data, pert.data, pert.perturbation_tag))
    for sigma_key in _noise_dirs(cfg):
        noise_dir = _out(cfg, "attacks", "noise", sigma_key)
        for item in _attack_items(cfg, f"noise/{sigma_key}", "test"):
            clean, _ = load_spectrogram(corpus_dir, item["clip_id"])
            pert, _ = load_spectrogram(noise_dir, item["clip_id"], "attack")
            dataset.append((clean.data, pert.data, pert.perturbation_tag))

    log.info("gamma study over %d pairs (%d probes)", len(dataset),
             cfg.chordal.probes)
    report, records = gamma_study(
        dataset, probes=cfg.chordal.probes, seed=cfg.chordal.seed,
        epsilon_max=None, workers=cfg.workers,
    )
    for row in report.rows:
        for name, entry in attack_summary["attacks"].items():
            if row.tag == f"attack:{name}":
                row.victim_accuracy = entry["test"]["victim_accuracy"]

    attack_tags = {"attack:fgsm", "attack:bim_a", "attack:bim_b", "attack:cwa"}
    attack_pool = [r.gamma_slack for r in records if r.tag in attack_tags]
    noise_pool = [r.gamma_slack for r in records
                  if r.tag.split(":")[0] in ("noisy", "noise")]
    attack_mean = float(np.mean(attack_pool)) if attack_pool else float("nan")
    noise_mean = float(np.mean(noise_pool)) if noise_pool else float("nan")
    ratio = (
        attack_mean / noise_mean
        if noise_pool and noise_mean > 0 else None
    )
    separation = {
        "attack_tags": sorted(attack_tags),
        "attack_pool_mean": attack_mean,
        "attack_pool_size": len(attack_pool),
        "noise_pool_mean": noise_mean,
        "noise_pool_size": len(noise_pool),
        "ratio": ratio,
    }

    out_dir = _out(cfg, "chordal")
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = json.loads(report.to_json())
    payload["separation"] = separation
    _write_json(out_dir / "chordal.json", payload)
    with open(out_dir / "chordal.csv", "w") as fh:
        fh.write(report.to_csv())
    _write_csv(
        out_dir / "records.csv",
        ["pair_id", "tag", "chord", "bound", "gamma_slack", "epsilon"],
        [[r.pair_id, r.tag, r.chord, r.bound, r.gamma_slack, r.epsilon]
         for r in records],
    )
    log.info("separation ratio: %s", ratio)
    return payload


# --- detect -------------------------------------------------------------------


def _legit_train_batches(cfg, manifest, specs):
    """Per-class legitimate batches: clean and pitch-shifted training
    clips plus their noisy copies (noisy samples sit with the legitimate
    class)."""
    batches = {}
    for entry in manifest["entries"]:
        if entry["split"] != "train":
            continue
        batches.setdefault(entry["class_label"], []).append(
            specs[entry["clip_id"]]
        )
    for sigma_key in _noise_dirs(cfg):
        noise_dir = _out(cfg, "attacks", "noise", sigma_key)
        for item in _attack_items(cfg, f"noise/{sigma_key}", "train"):
            spec, _ = load_spectrogram(noise_dir, item["clip_id"], "attack")
            batches.setdefault(spec.class_label, []).append(spec)
    return batches


def stage_detect(cfg):
    """Train the eigenvalue detector on training-split pairs, evaluate
    per attack on the test split in both schur and pair modes, and run
    the legitimate-vs-legitimate null-leakage check."""
    manifest = _load_manifest(cfg)
    attack_summary = _read_json(_out(cfg, "attacks", "attacks.json"), "attack")
    specs = _load_corpus(cfg, manifest)
    mlp = load_mlp(_out(cfg, "victims"))
    det = cfg.detector

    train_attacks = det.train_attacks
    if train_attacks is None:
        ran = set(attack_summary["attacks"])
        train_attacks = tuple(a for a in DEFAULT_TRAIN_ATTACKS if a in ran)
        if not train_attacks:
            train_attacks = tuple(sorted(a for a in ran if a != "lfa"))

    legit = _legit_train_batches(cfg, manifest, specs)
    adv = {}
    excluded_total = 0
    for name in train_attacks:
        adv_dir = _out(cfg, "attacks", name)
        for item in _attack_items(cfg, name, "train"):
            if item.get("excluded"):
                excluded_total += 1
                continue
            spec, _ = load_spectrogram(adv_dir, item["clip_id"], "attack")
            adv.setdefault(spec.class_label, []).append(spec)
    if excluded_total:
        log.info("excluded %d over-budget adversarial clips from training",
                 excluded_total)

    log.info("building pair features (legit %d, adversarial %d clips)",
             sum(len(v) for v in legit.values()),
             sum(len(v) for v in adv.values()))
    leg_feats, adv_feats = build_pair_features(
        legit, adv, pairs_per_class=det.pairs_per_class, seed=det.seed,
        clip_cap=det.clip_cap,
    )
    model = train_detector(
        leg_feats, adv_feats, reg_strength=det.reg_strength, seed=det.seed
    )
    model = dataclasses.replace(model, attacks_seen=tuple(train_attacks))
    out_dir = _out(cfg, "detector")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_detector(model, out_dir / "detector.json")

    # test-time features: schur of the matrix alone, and pair mode against
    # the stored class reference chosen by the victim's prediction
    base_train_by_class = {}
    for entry in manifest["entries"]:
        if entry["split"] == "train" and entry["augmented_from"] is None:
            base_train_by_class.setdefault(entry["class_label"], []).append(
                specs[entry["clip_id"]]
            )
    refs = class_references(base_train_by_class)

    def _features(spec_list):
        schur = []
        pair = []
        for spec in spec_list:
            schur.append(extract_test_feature(spec, det.clip_cap))
            predicted = mlp.predict_label(spec.data.ravel())
            pair.append(
                extract_pair_test_feature(spec, refs[predicted], det.clip_cap)
            )
        return schur, pair

    test_entries = [e for e in manifest["entries"] if e["split"] == "test"]
    clean_test = [specs[e["clip_id"]] for e in test_entries]
    clean_schur, clean_pair = _features(clean_test)

    rows = []
    results = {"schur": {}, "pair": {}}
    for name in sorted(attack_summary["attacks"]):
        adv_dir = _out(cfg, "attacks", name)
        adv_specs = [
            load_spectrogram(adv_dir, item["clip_id"], "attack")[0]
            for item in _attack_items(cfg, name, "test")
        ]
        if not adv_specs:
            continue
        adv_schur, adv_pair = _features(adv_specs)
        for mode, leg, bad in (("schur", clean_schur, adv_schur),
                               ("pair", clean_pair, adv_pair)):
            rep = evaluate_auc(model, leg + bad)
            results[mode][name] = {
                "auc": rep.auc,
                "mean_class_auc": rep.mean_class_auc,
                "class_auc": rep.class_auc,
                "n_legit": len(leg),
                "n_adversarial": len(bad),
            }
            rows.append([mode, name, rep.auc, rep.mean_class_auc,
                         len(leg), len(bad)])
            log.info("%s / %s: auc %.4f", mode, name, rep.auc)

    # null leakage: two halves of the legitimate set labeled as opposites
    null_rng = np.random.default_rng(np.random.SeedSequence([det.seed, 0xD0]))
    half_a, half_b = {}, {}
    for label in sorted(legit):
        batch = legit[label]
        perm = null_rng.permutation(len(batch))
        mid = len(batch) // 2
        half_a[label] = [batch[i] for i in perm[:mid]]
        half_b[label] = [batch[i] for i in perm[mid:]]
    null_leg, null_adv = build_pair_features(
        half_a, half_b, pairs_per_class=det.pairs_per_class,
        seed=det.seed, clip_cap=det.clip_cap,
    )
    null_model = train_detector(
        null_leg, null_adv, reg_strength=det.reg_strength, seed=det.seed
    )
    held = list(clean_schur)
    half = len(held) // 2
    held_perm = null_rng.permutation(len(held))
    null_test = [
        dataclasses.replace(
            held[i],
            label=(FeatureLabel.ADVERSARIAL if rank < half
                   else FeatureLabel.LEGITIMATE),
        )
        for rank, i in enumerate(held_perm)
    ]
    null_auc = evaluate_auc(null_model, null_test).auc
    log.info("null leakage auc: %.4f", null_auc)

    drift = scale_sensitivity(model, clean_schur, factor=2.0)

    payload = {
        "modes": results,
        "null_leakage_auc": null_auc,
        "scale_sensitivity_x2": drift,
        "train_attacks": list(train_attacks),
        "train_features": {"legitimate": len(leg_feats),
                           "adversarial": len(adv_feats),
                           "excluded_clips": excluded_total},
        "pair_reference": "per-class medoid of clean training clips, "
                          "class chosen by the victim's prediction",
    }
    _write_json(out_dir / "auc.json", payload)
    rows.append(["schur", "null:legit-vs-legit", null_auc, "", len(held), 0])
    _write_csv(
        out_dir / "auc.csv",
        ["mode", "attack", "auc", "mean_class_auc", "n_legit",
         "n_adversarial"],
        rows,
    )
    return payload


# --- report -------------------------------------------------------------------


def stage_report(cfg):
    """Consolidate every prior stage into one markdown summary + CSV."""
    manifest = _load_manifest(cfg)
    victims = _read_json(_out(cfg, "victims", "victims.json"), "attack")
    attacks = _read_json(_out(cfg, "attacks", "attacks.json"), "attack")
    chordal = _read_json(_out(cfg, "chordal", "chordal.json"), "chordal")
    auc = _read_json(_out(cfg, "detector", "auc.json"), "detect")

    by_tag = {row["tag"]: row for row in chordal["rows"]}
    lines = ["# Pencil-guard experiment report", ""]
    n_train = sum(e["split"] == "train" for e in manifest["entries"])
    n_test = sum(e["split"] == "test" for e in manifest["entries"])
    lines += [
        "## Corpus",
        "",
        f"- classes: {', '.join(manifest['classes'])}",
        f"- spectrograms: {len(manifest['entries'])} "
        f"({n_train} train incl. augmented, {n_test} test), "
        f"n = {manifest['n']}, visualization = {manifest['visualization']}",
        "",
        "## Victims (clean test accuracy)",
        "",
        f"- MLP: {victims['mlp_test_accuracy']:.3f}",
        f"- SVM: {victims['svm_test_accuracy']:.3f}",
        f"- surrogate MLP: {victims['surrogate_test_accuracy']:.3f}",
        "",
        "## Attacks and chordal separation",
        "",
        "| attack | victim | victim acc. | mean eps | mean gamma slack "
        "| bound violations |",
        "|---|---|---|---|---|---|",
    ]
    summary_rows = []
    for name in sorted(attacks["attacks"]):
        entry = attacks["attacks"][name]
        test = entry["test"]
        row = by_tag.get(f"attack:{name}", {})
        slack = row.get("gamma_mean", float("nan"))
        viol = row.get("bound_violation_rate", float("nan"))
        lines.append(
            f"| {name} | {entry['victim']} | {test['victim_accuracy']:.3f} "
            f"| {test['mean_epsilon']:.4f} | {slack:.6f} | {viol:.3f} |"
        )
        summary_rows.append(
            ["attack", name, entry["victim"], test["victim_accuracy"],
             test["mean_epsilon"], slack]
        )
    lines += ["", "| noise | mlp acc. | mean eps | mean gamma slack |",
              "|---|---|---|---|"]
    for key in sorted(attacks["noise"], key=float):
        stats = attacks["noise"][key]["test"]
        row = by_tag.get(tag_noisy(float(key)), {})
        slack = row.get("gamma_mean", float("nan"))
        lines.append(
            f"| sigma={key} | {stats['mlp_accuracy']:.3f} "
            f"| {stats['mean_epsilon']:.4f} | {slack:.6f} |"
        )
        summary_rows.append(
            ["noise", key, "mlp", stats["mlp_accuracy"],
             stats["mean_epsilon"], slack]
        )
    sep = chordal["separation"]
    ratio = sep["ratio"]
    ratio_text = f"{ratio:.1f}x" if ratio is not None else "undefined"
    lines += [
        "",
        f"Attack-pool mean gamma slack {sep['attack_pool_mean']:.6f} vs "
        f"noise-pool {sep['noise_pool_mean']:.6f} — separation {ratio_text}.",
        "",
        "## Detector AUC",
        "",
        "| attack | schur mode | pair mode |",
        "|---|---|---|",
    ]
    for name in sorted(auc["modes"]["schur"]):
        schur = auc["modes"]["schur"][name]["auc"]
        pair = auc["modes"]["pair"].get(name, {}).get("auc", float("nan"))
        lines.append(f"| {name} | {schur:.3f} | {pair:.3f} |")
        summary_rows.append(["auc", name, "detector", schur, pair, ""])
    lines += [
        "",
        f"Null-leakage (legitimate vs legitimate) AUC: "
        f"{auc['null_leakage_auc']:.3f}",
        f"Score drift under x2 input scaling: "
        f"{auc['scale_sensitivity_x2']:.4f}",
        "",
    ]

    report_path = _out(cfg, "report.md")
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as fh:
        fh.write("\n".join(lines))
    _write_csv(
        _out(cfg, "summary.csv"),
        ["section", "name", "victim", "metric_a", "metric_b", "metric_c"],
        summary_rows,
    )
    log.info("report written to %s", report_path)
    return "\n".join(lines)


STAGES = {
    "prepare": stage_prepare,
    "attack": stage_attack,
    "chordal": stage_chordal,
    "detect": stage_detect,
    "report": stage_report,
}
