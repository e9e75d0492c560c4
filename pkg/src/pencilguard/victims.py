"""Desk-scale victim classifiers: a small MLP and an RBF-kernel SVM.

Both models work on flattened square spectrograms.  The MLP exposes the
input gradients white-box attacks need; the SVM exposes the analytic
gradient of its decision function.  Training is deterministic from the
seed in both cases.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import DivergedTraining, GradientUnavailable, NoConvergence
from .pgm1 import read_matrix, write_matrix

MLP_HIDDEN = (128, 64)


def _softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _one_hot(y, k):
    out = np.zeros((y.shape[0], k))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


@dataclass
class MlpModel:
    """Two-hidden-layer rectifier network with a softmax head.

    ``weights[i]`` maps layer i to layer i+1; inputs are standardized by
    the stored per-feature mean and scale before the first layer, so the
    model is a pure function of the raw spectrogram values.
    """

    weights: list
    biases: list
    classes: tuple
    input_mean: np.ndarray
    input_scale: np.ndarray
    seed: int = 0
    training_log: dict = field(default_factory=dict)

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def n_classes(self):
        return self.weights[-1].shape[1]

    def _forward(self, x):
        """Return the per-layer activations ending with the logits."""
        a = (np.atleast_2d(x) - self.input_mean) / self.input_scale
        acts = [a]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i < last:
                a = np.maximum(a, 0.0)
            acts.append(a)
        return acts

    def logits(self, x):
        out = self._forward(x)[-1]
        return out[0] if np.ndim(x) == 1 else out

    def probabilities(self, x):
        return _softmax(self.logits(x))

    def predict_index(self, x):
        p = self.logits(x)
        return int(np.argmax(p)) if p.ndim == 1 else np.argmax(p, axis=1)

    def predict_label(self, x):
        idx = self.predict_index(x)
        if np.ndim(idx) == 0:
            return self.classes[idx]
        return [self.classes[i] for i in idx]

    def loss(self, x, y):
        """Mean cross-entropy of integer labels ``y``."""
        p = _softmax(np.atleast_2d(self.logits(x)))
        y = np.atleast_1d(y)
        return float(-np.mean(np.log(p[np.arange(y.shape[0]), y] + 1e-300)))

    def _input_backprop(self, acts, dlogits):
        """Push a gradient at the logits back to the raw input."""
        grad = dlogits
        for i in range(len(self.weights) - 1, -1, -1):
            grad = grad @ self.weights[i].T
            if i > 0:
                grad = grad * (acts[i] > 0)
        return grad / self.input_scale

    def loss_input_gradient(self, x, y):
        """d(mean cross-entropy)/dx, same shape as ``x``."""
        single = np.ndim(x) == 1
        acts = self._forward(x)
        p = _softmax(acts[-1])
        y = np.atleast_1d(y)
        dlogits = (p - _one_hot(y, self.n_classes)) / y.shape[0]
        grad = self._input_backprop(acts, dlogits)
        return grad[0] if single else grad

    def logit_input_jacobian(self, x):
        """Jacobian of the logits w.r.t. one input, shape (classes, dim)."""
        acts = self._forward(x)
        rows = []
        for k in range(self.n_classes):
            ek = np.zeros((1, self.n_classes))
            ek[0, k] = 1.0
            rows.append(self._input_backprop(acts, ek)[0])
        return np.array(rows)

    def accuracy(self, x, y):
        return float(np.mean(self.predict_index(x) == np.asarray(y)))


def train_mlp(x, y, classes, hidden=MLP_HIDDEN, epochs=40, batch_size=32,
              learning_rate=0.05, seed=0):
    """Minibatch SGD on cross-entropy.  Deterministic from ``seed``.

    Raises DivergedTraining as soon as an epoch loss stops being finite.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = tuple(classes)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad training shapes {x.shape} / {y.shape}")

    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale < 1e-12] = 1.0

    rng = np.random.default_rng(seed)
    sizes = (x.shape[1],) + tuple(hidden) + (len(classes),)
    weights = [
        rng.standard_normal((sizes[i], sizes[i + 1])) * np.sqrt(2.0 / sizes[i])
        for i in range(len(sizes) - 1)
    ]
    biases = [np.zeros(sizes[i + 1]) for i in range(len(sizes) - 1)]
    model = MlpModel(weights, biases, classes, mean, scale, seed=seed)

    m = x.shape[0]
    losses = []
    for _ in range(epochs):
        order = rng.permutation(m)
        epoch_loss = 0.0
        for start in range(0, m, batch_size):
            idx = order[start:start + batch_size]
            xb, yb = x[idx], y[idx]
            acts = model._forward(xb)
            p = _softmax(acts[-1])
            epoch_loss += float(
                -np.sum(np.log(p[np.arange(yb.shape[0]), yb] + 1e-300))
            )
            dlogits = (p - _one_hot(yb, len(classes))) / yb.shape[0]
            grad = dlogits
            for i in range(len(weights) - 1, -1, -1):
                gw = acts[i].T @ grad
                gb = grad.sum(axis=0)
                if i > 0:
                    grad = (grad @ weights[i].T) * (acts[i] > 0)
                weights[i] -= learning_rate * gw
                biases[i] -= learning_rate * gb
        epoch_loss /= m
        if not np.isfinite(epoch_loss):
            raise DivergedTraining(f"loss became {epoch_loss} during training")
        losses.append(epoch_loss)

    model.training_log = {
        "seed": seed,
        "loss": losses,
        "train_accuracy": model.accuracy(x, y),
    }
    return model


# --- SVM ------------------------------------------------------------------


def rbf_kernel(a, b, g):
    """exp(-g * ||a - b||^2), rows of a against rows of b."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    sq = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * (a @ b.T)
    )
    return np.exp(-g * np.maximum(sq, 0.0))


def _smo(kernel, y, C, tol, max_iter):
    """Dual coordinate ascent on working sets of two (maximal violators).

    Returns (alpha, bias, iterations).  The full Gram matrix doubles as
    the kernel cache at this scale.
    """
    n = y.shape[0]
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective, Q alpha - 1
    qdiag = np.diag(kernel)
    for it in range(max_iter):
        yg = -y * grad
        up = ((y > 0) & (alpha < C - 1e-12)) | ((y < 0) & (alpha > 1e-12))
        low = ((y > 0) & (alpha > 1e-12)) | ((y < 0) & (alpha < C - 1e-12))
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, yg, -np.inf)))
        j = int(np.argmin(np.where(low, yg, np.inf)))
        if yg[i] - yg[j] <= tol:
            break
        # analytic two-variable step along the equality constraint
        curv = qdiag[i] + qdiag[j] - 2.0 * y[i] * y[j] * kernel[i, j]
        delta = (yg[i] - yg[j]) / max(curv, 1e-12)
        old_i, old_j = alpha[i], alpha[j]
        ai = old_i + y[i] * delta
        aj = old_j - y[j] * delta
        # clip to the box while preserving y.alpha = const
        if y[i] == y[j]:
            total = old_i + old_j
            ai = min(max(ai, max(0.0, total - C)), min(C, total))
            aj = total - ai
        else:
            diff = old_i - old_j
            ai = min(max(ai, max(0.0, diff)), min(C, C + diff))
            aj = ai - diff
        alpha[i], alpha[j] = ai, aj
        grad += y * (y[i] * kernel[:, i] * (ai - old_i)
                     + y[j] * kernel[:, j] * (aj - old_j))
    else:
        raise NoConvergence(
            f"SMO still above tolerance {tol} after {max_iter} steps"
        )

    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    yg = -y * grad
    if free.any():
        bias = float(np.mean(yg[free]))
    else:
        hi = np.where(up, yg, -np.inf).max()
        lo = np.where(low, yg, np.inf).min()
        bias = float((hi + lo) / 2.0)
    return alpha, bias, it + 1


@dataclass
class SvmModel:
    """One-vs-rest RBF machines; class k wins by largest decision value.

    Each machine keeps only its support vectors: ``coefs[k]`` holds
    alpha_i * y_i and ``support[k]`` the matching training rows.
    """

    coefs: list
    support: list
    bias: list
    classes: tuple
    g: float
    C: float
    seed: int = 0

    @property
    def input_dim(self):
        return self.support[0].shape[1]

    def decision_values(self, x):
        single = np.ndim(x) == 1
        x = np.atleast_2d(x)
        cols = [
            rbf_kernel(x, sv, self.g) @ coef + b
            for coef, sv, b in zip(self.coefs, self.support, self.bias)
        ]
        out = np.stack(cols, axis=1)
        return out[0] if single else out

    def predict_index(self, x):
        d = self.decision_values(x)
        return int(np.argmax(d)) if d.ndim == 1 else np.argmax(d, axis=1)

    def predict_label(self, x):
        idx = self.predict_index(x)
        if np.ndim(idx) == 0:
            return self.classes[idx]
        return [self.classes[i] for i in idx]

    def decision_gradient(self, x, k):
        """Gradient of decision value k at a single input x."""
        x = np.asarray(x, dtype=np.float64)
        sv = self.support[k]
        kv = rbf_kernel(x[None, :], sv, self.g)[0] * self.coefs[k]
        return -2.0 * self.g * (kv.sum() * x - kv @ sv)

    def accuracy(self, x, y):
        return float(np.mean(self.predict_index(x) == np.asarray(y)))


def train_svm(x, y, classes, C=10.0, g=None, tol=1e-3, max_iter=None, seed=0):
    """One-vs-rest SMO.  g defaults to the 1 / (dim * var) heuristic."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    classes = tuple(classes)
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    if g is None:
        g = 1.0 / (x.shape[1] * max(float(x.var()), 1e-12))
    if max_iter is None:
        max_iter = max(20_000, 200 * x.shape[0])

    kernel = rbf_kernel(x, x, g)  # shared across the one-vs-rest machines
    coefs, support, bias = [], [], []
    for k in range(len(classes)):
        yk = np.where(y == k, 1.0, -1.0)
        alpha, b, _ = _smo(kernel, yk, C, tol, max_iter)
        sv = alpha > 1e-12
        coefs.append(alpha[sv] * yk[sv])
        support.append(x[sv].copy())
        bias.append(b)
    return SvmModel(coefs, support, bias, classes, float(g), float(C), seed)


# --- serialization ---------------------------------------------------------


def save_mlp(model, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blocks = {}
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        blocks[f"w{i}"] = f"mlp-w{i}.pgm1"
        blocks[f"b{i}"] = f"mlp-b{i}.pgm1"
        write_matrix(directory / blocks[f"w{i}"], w)
        write_matrix(directory / blocks[f"b{i}"], b[None, :])
    blocks["mean"] = "mlp-mean.pgm1"
    blocks["scale"] = "mlp-scale.pgm1"
    write_matrix(directory / blocks["mean"], model.input_mean[None, :])
    write_matrix(directory / blocks["scale"], model.input_scale[None, :])
    meta = {
        "kind": "mlp",
        "classes": list(model.classes),
        "layers": len(model.weights),
        "seed": model.seed,
        "training_log": model.training_log,
        "blocks": blocks,
    }
    (directory / "mlp.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_mlp(directory):
    directory = Path(directory)
    meta = json.loads((directory / "mlp.json").read_text())
    blocks = meta["blocks"]
    weights, biases = [], []
    for i in range(meta["layers"]):
        weights.append(read_matrix(directory / blocks[f"w{i}"]))
        biases.append(read_matrix(directory / blocks[f"b{i}"])[0])
    return MlpModel(
        weights=weights,
        biases=biases,
        classes=tuple(meta["classes"]),
        input_mean=read_matrix(directory / blocks["mean"])[0],
        input_scale=read_matrix(directory / blocks["scale"])[0],
        seed=meta["seed"],
        training_log=meta["training_log"],
    )


def save_svm(model, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    machines = []
    for k in range(len(model.classes)):
        entry = {
            "coef": f"svm-coef{k}.pgm1",
            "support": f"svm-sv{k}.pgm1",
            "bias": model.bias[k],
        }
        write_matrix(directory / entry["coef"], model.coefs[k][None, :])
        write_matrix(directory / entry["support"], model.support[k])
        machines.append(entry)
    meta = {
        "kind": "svm",
        "classes": list(model.classes),
        "g": model.g,
        "C": model.C,
        "seed": model.seed,
        "machines": machines,
    }
    (directory / "svm.json").write_text(json.dumps(meta, sort_keys=True, indent=2))


def load_svm(directory):
    directory = Path(directory)
    meta = json.loads((directory / "svm.json").read_text())
    coefs, support, bias = [], [], []
    for entry in meta["machines"]:
        coefs.append(read_matrix(directory / entry["coef"])[0])
        support.append(read_matrix(directory / entry["support"]))
        bias.append(entry["bias"])
    return SvmModel(
        coefs=coefs,
        support=support,
        bias=bias,
        classes=tuple(meta["classes"]),
        g=meta["g"],
        C=meta["C"],
        seed=meta["seed"],
    )


def require_gradient_interface(model, dim, attr="loss_input_gradient"):
    """Guard used by the attacks before touching a model."""
    if not hasattr(model, "input_dim") or not hasattr(model, attr):
        raise GradientUnavailable(
            f"{type(model).__name__} exposes no {attr} gradient"
        )
    if model.input_dim != dim:
        raise GradientUnavailable(
            f"model expects dimension {model.input_dim}, input has {dim}"
        )
