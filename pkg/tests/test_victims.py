import json

import numpy as np
import pytest

from pencilguard.exceptions import (
    DivergedTraining,
    GradientUnavailable,
    NoConvergence,
)
from pencilguard.victims import (
    load_mlp,
    load_svm,
    rbf_kernel,
    require_gradient_interface,
    save_mlp,
    save_svm,
    train_mlp,
    train_svm,
)


def _blobs(rng, n_per=60, spread=0.35):
    centers = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]])
    x = np.vstack([c + spread * rng.standard_normal((n_per, 2))
                   for c in centers])
    y = np.repeat(np.arange(4), n_per)
    return x, y


def test_mlp_blobs_accuracy():
    rng = np.random.default_rng(0)
    x, y = _blobs(rng)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(16,), seed=1)
    assert model.accuracy(x, y) >= 0.99


def test_softmax_probabilities_sum_to_one():
    rng = np.random.default_rng(1)
    x, y = _blobs(rng, n_per=20)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(8,), epochs=5,
                      seed=2)
    for trial in range(50):
        p = model.probabilities(rng.standard_normal(2) * 10.0)
        assert abs(p.sum() - 1.0) <= 1e-9
        assert np.all(p >= 0.0)


def test_mlp_forward_is_pure():
    rng = np.random.default_rng(2)
    x, y = _blobs(rng, n_per=20)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(8,), epochs=5,
                      seed=2)
    probe = rng.standard_normal(2)
    first = model.logits(probe)
    for _ in range(5):
        assert np.array_equal(model.logits(probe), first)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_mlp_diverged_training():
    rng = np.random.default_rng(3)
    x, y = _blobs(rng, n_per=30)
    x = x * 1e6
    with pytest.raises(DivergedTraining):
        train_mlp(x, y, ("a", "b", "c", "d"), learning_rate=1e4, seed=0)


def test_mlp_training_log():
    rng = np.random.default_rng(4)
    x, y = _blobs(rng, n_per=30)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(8,), epochs=7,
                      seed=5)
    assert len(model.training_log["loss"]) == 7
    assert model.training_log["loss"][-1] < model.training_log["loss"][0]
    assert model.training_log["seed"] == 5


def test_mlp_loss_gradient_matches_finite_differences():
    """Central finite differences on 10 random coordinates per model."""
    rng = np.random.default_rng(5)
    x, y = _blobs(rng, n_per=30)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(12, 6), epochs=15,
                      seed=6)
    h = 1e-6
    for trial in range(10):
        point = x[rng.integers(len(x))] + 0.01 * rng.standard_normal(2)
        label = int(rng.integers(4))
        grad = model.loss_input_gradient(point, label)
        k = int(rng.integers(2))
        lo, hi = point.copy(), point.copy()
        lo[k] -= h
        hi[k] += h
        fd = (model.loss(hi, label) - model.loss(lo, label)) / (2 * h)
        assert abs(grad[k] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_mlp_logit_jacobian_matches_finite_differences():
    rng = np.random.default_rng(6)
    x, y = _blobs(rng, n_per=30)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(8,), epochs=10,
                      seed=7)
    h = 1e-6
    point = x[3] + 0.02 * rng.standard_normal(2)
    jac = model.logit_input_jacobian(point)
    assert jac.shape == (4, 2)
    for k in range(2):
        lo, hi = point.copy(), point.copy()
        lo[k] -= h
        hi[k] += h
        fd = (model.logits(hi) - model.logits(lo)) / (2 * h)
        assert np.max(np.abs(jac[:, k] - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def test_mlp_batched_gradient_matches_single():
    """Batched rows are gradients of the mean loss, so they carry a 1/m."""
    rng = np.random.default_rng(7)
    x, y = _blobs(rng, n_per=20)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(8,), epochs=5,
                      seed=8)
    batch = x[:6]
    labels = y[:6]
    stacked = model.loss_input_gradient(batch, labels)
    for i in range(6):
        single = model.loss_input_gradient(batch[i], int(labels[i]))
        assert np.allclose(stacked[i] * 6.0, single, atol=1e-12)


def test_rbf_kernel_values():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 0.0], [0.0, 2.0]])
    k = rbf_kernel(a, b, 0.5)
    assert abs(k[0, 0] - 1.0) <= 1e-15
    assert abs(k[0, 1] - np.exp(-2.0)) <= 1e-12
    assert abs(k[1, 0] - np.exp(-0.5)) <= 1e-12


def test_svm_xor():
    """RBF SVM separates XOR, which no linear machine can."""
    x = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    y = np.array([0, 0, 1, 1])
    model = train_svm(x, y, ("even", "odd"), C=10.0, g=1.0)
    assert model.accuracy(x, y) == 1.0


def test_svm_blobs_and_dual_box():
    rng = np.random.default_rng(8)
    x, y = _blobs(rng, n_per=40)
    model = train_svm(x, y, ("a", "b", "c", "d"), C=10.0)
    assert model.accuracy(x, y) >= 0.99
    for coefs in model.coefs:
        assert np.all(np.abs(coefs) <= 10.0 + 1e-9)


def test_svm_no_convergence():
    rng = np.random.default_rng(9)
    x, y = _blobs(rng, n_per=40)
    with pytest.raises(NoConvergence):
        train_svm(x, y, ("a", "b", "c", "d"), max_iter=3)


def test_svm_decision_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    x, y = _blobs(rng, n_per=30)
    model = train_svm(x, y, ("a", "b", "c", "d"), C=10.0)
    h = 1e-6
    for trial in range(10):
        point = x[rng.integers(len(x))] + 0.05 * rng.standard_normal(2)
        k = int(rng.integers(4))
        grad = model.decision_gradient(point, k)
        j = int(rng.integers(2))
        lo, hi = point.copy(), point.copy()
        lo[j] -= h
        hi[j] += h
        fd = (model.decision_values(hi)[k] - model.decision_values(lo)[k]) / (2 * h)
        assert abs(grad[j] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_desk_victim_accuracy(desk):
    acc_mlp = desk.mlp.accuracy(desk.x[desk.test_idx], desk.y[desk.test_idx])
    acc_svm = desk.svm.accuracy(desk.x[desk.test_idx], desk.y[desk.test_idx])
    assert acc_mlp >= 0.85
    assert acc_svm >= 0.85


def test_mlp_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    x, y = _blobs(rng, n_per=30)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(8,), epochs=10,
                      seed=12)
    save_mlp(model, tmp_path)
    back = load_mlp(tmp_path)
    probes = rng.standard_normal((20, 2))
    assert np.array_equal(model.logits(probes), back.logits(probes))
    assert back.classes == model.classes
    save_mlp(back, tmp_path)
    again = load_mlp(tmp_path)
    assert np.array_equal(back.logits(probes), again.logits(probes))


def test_svm_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(12)
    x, y = _blobs(rng, n_per=30)
    model = train_svm(x, y, ("a", "b", "c", "d"), C=10.0)
    save_svm(model, tmp_path)
    back = load_svm(tmp_path)
    probes = x + 0.01 * rng.standard_normal(x.shape)
    assert np.array_equal(model.decision_values(probes),
                          back.decision_values(probes))
    assert abs(back.g - model.g) <= 1e-15


def test_mlp_metadata_is_sorted_json(tmp_path):
    rng = np.random.default_rng(13)
    x, y = _blobs(rng, n_per=20)
    model = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(4,), epochs=3,
                      seed=1)
    save_mlp(model, tmp_path)
    text = (tmp_path / "mlp.json").read_text()
    meta = json.loads(text)
    assert list(meta) == sorted(meta)


def test_require_gradient_interface():
    rng = np.random.default_rng(14)
    x, y = _blobs(rng, n_per=20)
    mlp = train_mlp(x, y, ("a", "b", "c", "d"), hidden=(4,), epochs=3, seed=1)
    svm = train_svm(x, y, ("a", "b", "c", "d"), C=10.0)
    require_gradient_interface(mlp, 2)
    require_gradient_interface(svm, 2, attr="decision_gradient")
    with pytest.raises(GradientUnavailable):
        require_gradient_interface(svm, 2)
    with pytest.raises(GradientUnavailable):
        require_gradient_interface(mlp, 2, attr="decision_gradient")
    with pytest.raises(GradientUnavailable):
        require_gradient_interface(mlp, 5)
