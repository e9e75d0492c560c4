"""Eight attacks against the desk victims, on square spectrograms.

White-box attacks (FGSM, BIM-a/b, JSMA, CWA) need the MLP's input
gradients; Opt transfers a CWA perturbation crafted on a surrogate; EA
descends the SVM decision margin; LFA poisons SVM training labels and
perturbs no inputs at all.

Conventions shared by every attack:

* the true class label (``spectrogram.class_label``) drives the loss, and
  ``success`` means the victim no longer predicts that label;
* ``epsilon_realized`` is recomputed from the clean/adversarial matrices
  via :func:`pencilguard.chordal.epsilon_of`, never trusted from the loop;
* values are clipped to ``value_range`` (the clean-corpus range) when one
  is given;
* everything is a pure function of its arguments — no hidden state.
"""

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .chordal import epsilon_of
from .exceptions import DegenerateFlip, GradientUnavailable
from .scalogram import tag_attack
from .victims import require_gradient_interface, train_svm


class AttackName(enum.Enum):
    FGSM = "fgsm"
    BIM_A = "bim_a"
    BIM_B = "bim_b"
    JSMA = "jsma"
    CWA = "cwa"
    OPT = "opt"
    EA = "ea"
    LFA = "lfa"


@dataclass(frozen=True)
class AttackSpec:
    """Budget bundle for one attack.

    ``eps`` is the attack's primary budget: the ∞-norm radius for
    FGSM/BIM, the pixel budget fraction for JSMA, and the initial
    margin weight c for CWA/Opt.  ``step`` and ``iters`` follow the same
    per-attack reading (JSMA: theta; CWA/Opt: learning rate / steps).
    """

    name: AttackName
    eps: float = 0.5
    step: float = 0.1
    iters: int = 10
    targeted: bool = False
    seed: int = 0

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.iters < 1:
            raise ValueError(f"iters must be at least 1, got {self.iters}")


@dataclass(frozen=True)
class AttackResult:
    adversarial: object  # Spectrogram tagged attack:<name>
    success: bool
    epsilon_realized: float
    iterations: int


def _true_index(model, spectrogram):
    if spectrogram.class_label not in model.classes:
        raise ValueError(
            f"label {spectrogram.class_label!r} unknown to the model"
        )
    return model.classes.index(spectrogram.class_label)


def _clip_range(x, value_range):
    if value_range is None:
        return x
    return np.clip(x, value_range[0], value_range[1])


def _result(model, spectrogram, name, adv_flat, iterations):
    adv = adv_flat.reshape(spectrogram.data.shape)
    out = replace(
        spectrogram, data=adv, perturbation_tag=tag_attack(name.value)
    )
    success = model.predict_index(adv_flat) != _true_index(model, spectrogram)
    return AttackResult(
        adversarial=out,
        success=bool(success),
        epsilon_realized=epsilon_of(spectrogram.data, adv),
        iterations=iterations,
    )


def attack_fgsm(model, spectrogram, eps, value_range=None):
    """One signed-gradient step of size eps per pixel."""
    x0 = np.asarray(spectrogram.data, dtype=np.float64).ravel()
    require_gradient_interface(model, x0.size)
    true = _true_index(model, spectrogram)
    if eps == 0:
        return _result(model, spectrogram, AttackName.FGSM, x0.copy(), 0)
    g = model.loss_input_gradient(x0, true)
    adv = _clip_range(x0 + eps * np.sign(g), value_range)
    return _result(model, spectrogram, AttackName.FGSM, adv, 1)


def _bim(model, spectrogram, eps, step, iters, value_range, stop_early, name):
    x0 = np.asarray(spectrogram.data, dtype=np.float64).ravel()
    require_gradient_interface(model, x0.size)
    true = _true_index(model, spectrogram)
    x = x0.copy()
    used = 0
    for _ in range(iters):
        if stop_early and model.predict_index(x) != true:
            break
        g = model.loss_input_gradient(x, true)
        x = np.clip(x + step * np.sign(g), x0 - eps, x0 + eps)
        x = _clip_range(x, value_range)
        used += 1
    return _result(model, spectrogram, name, x, used)


def attack_bim_a(model, spectrogram, eps, step, iters, value_range=None):
    """Iterative FGSM that stops at the first misclassification."""
    return _bim(model, spectrogram, eps, step, iters, value_range,
                stop_early=True, name=AttackName.BIM_A)


def attack_bim_b(model, spectrogram, eps, step, iters, value_range=None):
    """Iterative FGSM that always spends the whole iteration budget."""
    return _bim(model, spectrogram, eps, step, iters, value_range,
                stop_early=False, name=AttackName.BIM_B)


def attack_jsma(model, spectrogram, budget_fraction=0.1, theta=1.0,
                value_range=None):
    """Greedy saliency pairs: push the two most helpful pixels per round.

    The target is the clean runner-up class; a pixel's saliency is its
    pull on the target logit minus its pull on everything else.  At most
    ``budget_fraction`` of the pixels are touched, each at most once.
    """
    x0 = np.asarray(spectrogram.data, dtype=np.float64).ravel()
    require_gradient_interface(model, x0.size, "logit_input_jacobian")
    true = _true_index(model, spectrogram)
    lo, hi = value_range if value_range is not None else (x0.min(), x0.max())
    span = hi - lo
    logits = model.logits(x0)
    order = np.argsort(logits)
    target = int(order[-1] if order[-1] != true else order[-2])

    x = x0.copy()
    free = np.ones(x.size, dtype=bool)
    rounds = max(1, int(budget_fraction * x.size) // 2)
    used = 0
    for _ in range(rounds):
        if model.predict_index(x) != true:
            break
        jac = model.logit_input_jacobian(x)
        saliency = 2.0 * jac[target] - jac.sum(axis=0)
        saliency[~free | (x >= hi - 1e-12)] = -np.inf
        pair = np.argpartition(saliency, -2)[-2:]
        if not np.isfinite(saliency[pair]).any():
            break
        for p in pair:
            if np.isfinite(saliency[p]):
                x[p] = min(x[p] + theta * span, hi)
                free[p] = False
        used += 1
    return _result(model, spectrogram, AttackName.JSMA, x, used)


def _cw_optimize(model, x0, true, c_init, steps, search_steps, lr, lo, hi):
    """L2 margin minimization in tanh space; returns (best adv, steps)."""
    span = max(hi - lo, 1e-9)
    u = np.clip(2.0 * (x0 - lo) / span - 1.0, -1.0 + 1e-9, 1.0 - 1e-9)
    w0 = np.arctanh(u)

    best, best_l2 = None, np.inf
    lower, upper, c = 0.0, None, float(c_init)
    total = 0
    for _ in range(search_steps):
        w = w0.copy()
        velocity = np.zeros_like(w)
        round_hit = False
        for _ in range(steps):
            t = np.tanh(w)
            x = lo + span * 0.5 * (t + 1.0)
            acts = model._forward(x)
            logits = acts[-1][0]
            others = np.delete(np.arange(logits.size), true)
            runner = others[np.argmax(logits[others])]
            margin = logits[true] - logits[runner]
            if margin <= 0:
                l2 = float(np.linalg.norm(x - x0))
                round_hit = True
                if l2 < best_l2:
                    best, best_l2 = x.copy(), l2
                dmargin = 0.0
            else:
                up = np.zeros((1, logits.size))
                up[0, true] = 1.0
                up[0, runner] = -1.0
                dmargin = model._input_backprop(acts, up)[0]
            dx = 2.0 * (x - x0) + c * dmargin
            gw = dx * span * 0.5 * (1.0 - t * t)
            velocity = 0.9 * velocity - lr * gw
            w = w + velocity
            total += 1
        if round_hit:
            upper = c
            c = (lower + upper) / 2.0
        else:
            lower = c
            c = c * 10.0 if upper is None else (lower + upper) / 2.0
    return best, total


def attack_cwa(model, spectrogram, c_init=1.0, steps=200, search_steps=5,
               lr=0.05, value_range=None):
    """Carlini-Wagner L2 with kappa = 0 and a short binary search on c."""
    x0 = np.asarray(spectrogram.data, dtype=np.float64).ravel()
    require_gradient_interface(model, x0.size)
    true = _true_index(model, spectrogram)
    lo, hi = value_range if value_range is not None else (x0.min(), x0.max())
    best, total = _cw_optimize(
        model, x0, true, c_init, steps, search_steps, lr, lo, hi
    )
    adv = best if best is not None else x0.copy()
    return _result(model, spectrogram, AttackName.CWA, adv, total)


def attack_opt(surrogate, victim, spectrogram, c_init=1.0, steps=200,
               search_steps=5, lr=0.05, value_range=None):
    """Optimize on the surrogate, measure transfer on the victim."""
    inner = attack_cwa(surrogate, spectrogram, c_init, steps, search_steps,
                       lr, value_range)
    adv_flat = inner.adversarial.data.ravel()
    require_gradient_interface(victim, adv_flat.size)
    result = _result(victim, spectrogram, AttackName.OPT, adv_flat,
                     inner.iterations)
    return result


def attack_ea(model, spectrogram, step=0.05, iters=200, value_range=None):
    """Unit-gradient descent on the SVM margin until the label flips."""
    x0 = np.asarray(spectrogram.data, dtype=np.float64).ravel()
    require_gradient_interface(model, x0.size, "decision_gradient")
    true = _true_index(model, spectrogram)
    x = x0.copy()
    used = 0
    for _ in range(iters):
        values = model.decision_values(x)
        pred = int(np.argmax(values))
        if pred != true:
            break
        others = np.delete(np.arange(values.size), pred)
        runner = int(others[np.argmax(values[others])])
        g = model.decision_gradient(x, pred) - model.decision_gradient(x, runner)
        norm = np.linalg.norm(g)
        if norm < 1e-12:
            break
        x = _clip_range(x - step * g / norm, value_range)
        used += 1
    return _result(model, spectrogram, AttackName.EA, x, used)


@dataclass(frozen=True)
class LfaResult:
    """Poisoning outcome: a retrained model and its prediction flips."""

    poisoned: object
    clean: object
    adversarial: tuple  # test Spectrograms whose prediction flipped
    flipped: np.ndarray = field(repr=False)  # poisoned training indices


def attack_lfa(x_train, y_train, classes, test_specs, flip_fraction=0.2,
               seed=0, C=10.0, g=None, clean_model=None):
    """Flip the labels of the training points nearest the boundary.

    The adversarial set holds the (unmodified) test spectrograms whose
    poisoned-model prediction differs from the clean-model prediction.
    """
    if not 0.0 < flip_fraction <= 0.4:
        raise ValueError(f"flip_fraction {flip_fraction} outside (0, 0.4]")
    x_train = np.asarray(x_train, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    if clean_model is None:
        clean_model = train_svm(x_train, y_train, classes, C=C, g=g, seed=seed)

    values = clean_model.decision_values(x_train)
    top2 = np.sort(values, axis=1)[:, -2:]
    margin = top2[:, 1] - top2[:, 0]
    runner_up = np.argsort(values, axis=1)[:, -2]

    n_flip = int(flip_fraction * x_train.shape[0])
    flipped = np.argsort(margin, kind="stable")[:n_flip]
    y_poisoned = y_train.copy()
    y_poisoned[flipped] = runner_up[flipped]
    counts = np.bincount(y_poisoned, minlength=len(classes))
    if np.any(counts == 0):
        empty = [classes[i] for i in np.flatnonzero(counts == 0)]
        raise DegenerateFlip(f"flip would empty class(es) {empty}")

    poisoned = train_svm(
        x_train, y_poisoned, classes,
        C=clean_model.C, g=clean_model.g, seed=seed,
    )
    adversarial = []
    for spec in test_specs:
        flat = spec.data.ravel()
        if poisoned.predict_index(flat) != clean_model.predict_index(flat):
            adversarial.append(
                replace(spec, perturbation_tag=tag_attack("lfa"))
            )
    return LfaResult(poisoned, clean_model, tuple(adversarial), flipped)


def run_attack(attack, spectrogram, model, surrogate=None, value_range=None):
    """Dispatch an AttackSpec against a single spectrogram.

    LFA is excluded — it is a training-time attack with a different
    signature (see :func:`attack_lfa`).
    """
    name = attack.name
    if name is AttackName.FGSM:
        return attack_fgsm(model, spectrogram, attack.eps, value_range)
    if name is AttackName.BIM_A:
        return attack_bim_a(model, spectrogram, attack.eps, attack.step,
                            attack.iters, value_range)
    if name is AttackName.BIM_B:
        return attack_bim_b(model, spectrogram, attack.eps, attack.step,
                            attack.iters, value_range)
    if name is AttackName.JSMA:
        return attack_jsma(model, spectrogram, attack.eps, attack.step,
                           value_range)
    if name is AttackName.CWA:
        return attack_cwa(model, spectrogram, attack.eps, attack.iters,
                          lr=attack.step, value_range=value_range)
    if name is AttackName.OPT:
        if surrogate is None:
            raise GradientUnavailable("Opt needs a surrogate model")
        return attack_opt(surrogate, model, spectrogram, attack.eps,
                          attack.iters, lr=attack.step,
                          value_range=value_range)
    if name is AttackName.EA:
        return attack_ea(model, spectrogram, attack.step, attack.iters,
                         value_range)
    raise ValueError(f"{name} is not a per-input attack")
