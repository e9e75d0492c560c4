"""Eigenvalue-feature detector for adversarial spectrograms.

Training features are generalized eigenvalues of intra-class spectrogram
pairs (legitimate paired with legitimate, attacked with attacked); test
features come either from the Schur spectrum of the single test matrix
(default) or from pairing the test matrix against a stored per-class
legitimate reference ("pair mode").  A regularized logistic regression
separates the two feature populations.
"""

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import (
    ConfigMismatch,
    ConvergenceFailure,
    EmptyTrainingSet,
    InsufficientBatch,
    SingleClassTestSet,
)
from .pencil import Pencil, generalized_eigenvalues, qz_decompose, schur_eigenvalues

log = logging.getLogger(__name__)

CLIP_CAP = 30.0
ORDERING = "canonical-modulus-desc"


class FeatureSource(enum.Enum):
    PAIR_QZ = "pair_qz"
    SINGLE_SCHUR = "single_schur"


class FeatureLabel(enum.Enum):
    LEGITIMATE = "legitimate"
    ADVERSARIAL = "adversarial"


@dataclass(frozen=True)
class EigenFeature:
    """Fixed-length real vector of clipped eigenvalue log-moduli."""

    values: np.ndarray
    source: FeatureSource
    label: FeatureLabel
    class_label: str = ""
    pair_indices: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "values", np.asarray(self.values, dtype=np.float64)
        )


def _log_moduli(ev, clip_cap):
    """Canonically ordered eigenvalues -> clipped log-moduli vector."""
    out = np.empty(ev.n)
    for i in range(ev.n):
        if ev.infinite[i]:
            out[i] = clip_cap
            continue
        mod = abs(complex(ev.values[i]))
        if mod == 0.0:
            out[i] = -clip_cap
        else:
            out[i] = float(np.clip(np.log(mod), -clip_cap, clip_cap))
    return out


def _label_of(spec):
    tag = spec.perturbation_tag
    if tag.startswith("attack:"):
        return FeatureLabel.ADVERSARIAL
    return FeatureLabel.LEGITIMATE


def pair_feature(m1, m2, clip_cap=CLIP_CAP):
    """Feature of the pencil (m1, m2) via the QZ spectrum."""
    fact = qz_decompose(Pencil(m1, m2))
    return _log_moduli(generalized_eigenvalues(fact), clip_cap)


def extract_test_feature(spec, clip_cap=CLIP_CAP):
    """Schur-spectrum feature of one finalized spectrogram."""
    values = _log_moduli(schur_eigenvalues(spec.data), clip_cap)
    return EigenFeature(
        values=values,
        source=FeatureSource.SINGLE_SCHUR,
        label=_label_of(spec),
        class_label=spec.class_label,
    )


def extract_pair_test_feature(spec, reference, clip_cap=CLIP_CAP):
    """Pair-mode test feature: the spectrogram against a class reference."""
    return EigenFeature(
        values=pair_feature(spec.data, reference, clip_cap),
        source=FeatureSource.PAIR_QZ,
        label=_label_of(spec),
        class_label=spec.class_label,
    )


def class_references(class_batches):
    """Per-class medoid spectrogram matrix (least total Frobenius distance).

    Used as the fixed right-hand side of pair-mode test pencils.
    """
    refs = {}
    for label in sorted(class_batches):
        mats = [np.asarray(s.data, dtype=np.float64) for s in class_batches[label]]
        if not mats:
            raise InsufficientBatch(f"class {label!r} has no members")
        stack = np.stack(mats)
        totals = [
            float(np.sum(np.linalg.norm(stack - m, axis=(1, 2)))) for m in mats
        ]
        refs[label] = mats[int(np.argmin(totals))]
    return refs


def _sample_pairs(rng, m, count):
    """``count`` distinct ordered index pairs (i, j), i != j, shuffled."""
    total = m * (m - 1)
    codes = rng.permutation(total)[: min(count, total)]
    i = codes // (m - 1)
    j = codes % (m - 1)
    j = j + (j >= i)
    return list(zip(i.tolist(), j.tolist()))


def build_pair_features(class_batches, attacks, pairs_per_class=None, seed=0,
                        clip_cap=CLIP_CAP):
    """Balanced (Λ_leg, Λ_adv) from intra-class pairs, i != j.

    ``pairs_per_class`` defaults to 4x the legitimate batch size; pairs are
    sampled without replacement from the ordered index pairs of each class.
    Pairs whose factorization does not converge are logged and replaced
    from the remaining unsampled pool.
    """
    leg_features, adv_features = [], []
    for ci, label in enumerate(sorted(class_batches)):
        leg_batch = class_batches[label]
        adv_batch = attacks.get(label, [])
        if len(leg_batch) < 2:
            raise InsufficientBatch(
                f"class {label!r}: {len(leg_batch)} legitimate member(s)"
            )
        if len(adv_batch) < 2:
            raise InsufficientBatch(
                f"class {label!r}: {len(adv_batch)} attacked member(s)"
            )
        want = 4 * len(leg_batch) if pairs_per_class is None else pairs_per_class
        if want == 0:
            continue
        rng = np.random.default_rng(np.random.SeedSequence([seed, ci]))
        per_side = []
        for batch, feature_label in (
            (leg_batch, FeatureLabel.LEGITIMATE),
            (adv_batch, FeatureLabel.ADVERSARIAL),
        ):
            pool = _sample_pairs(rng, len(batch), len(batch) * (len(batch) - 1))
            side = []
            for i, j in pool:
                if len(side) == want:
                    break
                try:
                    values = pair_feature(
                        batch[i].data, batch[j].data, clip_cap
                    )
                except ConvergenceFailure as exc:
                    log.warning(
                        "pair (%s, %d, %d) dropped: %s", label, i, j, exc
                    )
                    continue
                side.append(
                    EigenFeature(
                        values=values,
                        source=FeatureSource.PAIR_QZ,
                        label=feature_label,
                        class_label=label,
                        pair_indices=(int(i), int(j)),
                    )
                )
            per_side.append(side)
        # keep the two sides balanced even when one lost pairs
        keep = min(len(per_side[0]), len(per_side[1]))
        leg_features.extend(per_side[0][:keep])
        adv_features.extend(per_side[1][:keep])
    return leg_features, adv_features


# --- logistic regression ----------------------------------------------------


@dataclass
class DetectorModel:
    """L2 logistic regression over standardized eigen-features."""

    weights: np.ndarray  # over kept columns
    bias: float
    feature_mean: np.ndarray
    feature_std: np.ndarray
    kept: np.ndarray  # column indices that had variance
    reg_strength: float
    n: int
    clip_cap: float = CLIP_CAP
    ordering: str = ORDERING
    seed: int = 0
    classes: tuple = ()
    attacks_seen: tuple = ()
    warnings: tuple = ()
    final_loss: float = float("nan")


def _logistic_loss(xk, y, w, b, reg):
    z = xk @ w + b
    # log(1 + exp(-s)) evaluated stably for both signs of s
    s = np.where(y > 0.5, z, -z)
    loss = float(np.mean(np.logaddexp(0.0, -s)))
    return loss + 0.5 * reg * float(w @ w) / y.shape[0]


def train_detector(leg_features, adv_features, reg_strength=1.0, seed=0,
                   grad_tol=1e-6, max_iter=200_000):
    """Full-batch gradient descent with backtracking line search."""
    if not leg_features or not adv_features:
        raise EmptyTrainingSet("both feature sets must be nonempty")
    features = list(leg_features) + list(adv_features)
    lengths = {f.values.shape[0] for f in features}
    if len(lengths) != 1:
        raise ConfigMismatch(f"mixed feature lengths {sorted(lengths)}")
    n = lengths.pop()
    x = np.stack([f.values for f in features])
    y = np.array(
        [1.0 if f.label is FeatureLabel.ADVERSARIAL else 0.0 for f in features]
    )

    mean = x.mean(axis=0)
    std = x.std(axis=0)
    kept = np.flatnonzero(std >= 1e-12)
    warnings = ()
    if kept.size < n:
        dropped = sorted(set(range(n)) - set(kept.tolist()))
        message = f"dropped zero-variance feature column(s) {dropped}"
        log.warning(message)
        warnings = (message,)
    std_safe = np.where(std < 1e-12, 1.0, std)
    xk = ((x - mean) / std_safe)[:, kept]

    m = y.shape[0]
    w = np.zeros(kept.size)
    b = 0.0
    loss = _logistic_loss(xk, y, w, b, reg_strength)
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(xk @ w + b)))
        gw = xk.T @ (p - y) / m + reg_strength * w / m
        gb = float(np.mean(p - y))
        gnorm2 = float(gw @ gw) + gb * gb
        if np.sqrt(gnorm2) <= grad_tol:
            break
        step = 1.0
        while step > 1e-20:
            cand_w = w - step * gw
            cand_b = b - step * gb
            cand = _logistic_loss(xk, y, cand_w, cand_b, reg_strength)
            if cand <= loss - 0.5 * step * gnorm2:
                break
            step *= 0.5
        w, b, loss = cand_w, cand_b, cand
    else:
        log.warning("detector training hit the iteration cap at %g", loss)

    classes = tuple(sorted({f.class_label for f in features if f.class_label}))
    return DetectorModel(
        weights=w,
        bias=float(b),
        feature_mean=mean,
        feature_std=std_safe,
        kept=kept,
        reg_strength=float(reg_strength),
        n=int(n),
        seed=seed,
        classes=classes,
        warnings=warnings,
        final_loss=loss,
    )


def _check_config(model, feature):
    if feature.values.shape[0] != model.n:
        raise ConfigMismatch(
            f"feature length {feature.values.shape[0]} != model n {model.n}"
        )


def score(model, feature):
    """P(adversarial) for one feature."""
    _check_config(model, feature)
    z = ((feature.values - model.feature_mean) / model.feature_std)[model.kept]
    return float(1.0 / (1.0 + np.exp(-(z @ model.weights + model.bias))))


def score_many(model, features):
    return np.array([score(model, f) for f in features])


# --- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class AucReport:
    auc: float
    roc: tuple  # ((fpr, tpr), ...) at every distinct threshold
    class_auc: dict = field(default_factory=dict)
    mean_class_auc: float = float("nan")


def _rank_auc(scores, y):
    """Probability a random positive outscores a random negative (ties half)."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.shape[0])
    sorted_scores = scores[order]
    i = 0
    while i < sorted_scores.shape[0]:
        j = i
        while j + 1 < sorted_scores.shape[0] and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    n_pos = int(np.sum(y))
    n_neg = y.shape[0] - n_pos
    return float(
        (ranks[y > 0.5].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    )


def _roc_points(scores, y):
    """(fpr, tpr) at every distinct score threshold, descending."""
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    labels = y[order]
    n_pos = int(np.sum(y))
    n_neg = y.shape[0] - n_pos
    points = [(0.0, 0.0)]
    tp = fp = 0
    i = 0
    while i < s.shape[0]:
        j = i
        while j + 1 < s.shape[0] and s[j + 1] == s[i]:
            j += 1
        tp += int(np.sum(labels[i:j + 1]))
        fp += (j - i + 1) - int(np.sum(labels[i:j + 1]))
        points.append((fp / n_neg, tp / n_pos))
        i = j + 1
    return tuple(points)


def trapezoid_auc(roc):
    fpr = np.array([p[0] for p in roc])
    tpr = np.array([p[1] for p in roc])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))


def evaluate_auc(model, features):
    """Rank-statistic AUC with a full ROC; class-wise means when available."""
    y = np.array(
        [1.0 if f.label is FeatureLabel.ADVERSARIAL else 0.0 for f in features]
    )
    if y.min() == y.max():
        raise SingleClassTestSet("need both legitimate and adversarial labels")
    scores = score_many(model, features)
    auc = _rank_auc(scores, y)
    roc = _roc_points(scores, y)

    class_auc = {}
    labels = sorted({f.class_label for f in features if f.class_label})
    for label in labels:
        idx = np.array([f.class_label == label for f in features])
        yc = y[idx]
        if yc.size and yc.min() != yc.max():
            class_auc[label] = _rank_auc(scores[idx], yc)
    mean_class = (
        float(np.mean(list(class_auc.values()))) if class_auc else float("nan")
    )
    return AucReport(
        auc=auc, roc=roc, class_auc=class_auc, mean_class_auc=mean_class
    )


def scale_sensitivity(model, features, factor=2.0):
    """Mean |Δscore| when the source spectrogram is scaled by ``factor``.

    Scaling a matrix by c shifts every log-modulus by log c; the effect on
    the detector is measured here, not assumed away.
    """
    shift = float(np.log(factor))
    deltas = []
    for f in features:
        shifted = replace(f, values=f.values + shift)
        deltas.append(abs(score(model, shifted) - score(model, f)))
    return float(np.mean(deltas))


# --- serialization -----------------------------------------------------------


def save_detector(model, path):
    import json

    payload = {
        "kind": "detector",
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "feature_mean": model.feature_mean.tolist(),
        "feature_std": model.feature_std.tolist(),
        "kept": model.kept.tolist(),
        "reg_strength": model.reg_strength,
        "n": model.n,
        "clip_cap": model.clip_cap,
        "ordering": model.ordering,
        "seed": model.seed,
        "classes": list(model.classes),
        "attacks_seen": list(model.attacks_seen),
        "warnings": list(model.warnings),
        "final_loss": model.final_loss,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)


def load_detector(path):
    import json

    with open(path) as fh:
        payload = json.load(fh)
    return DetectorModel(
        weights=np.array(payload["weights"]),
        bias=payload["bias"],
        feature_mean=np.array(payload["feature_mean"]),
        feature_std=np.array(payload["feature_std"]),
        kept=np.array(payload["kept"], dtype=np.int64),
        reg_strength=payload["reg_strength"],
        n=payload["n"],
        clip_cap=payload["clip_cap"],
        ordering=payload["ordering"],
        seed=payload["seed"],
        classes=tuple(payload["classes"]),
        attacks_seen=tuple(payload["attacks_seen"]),
        warnings=tuple(payload["warnings"]),
        final_loss=payload["final_loss"],
    )
