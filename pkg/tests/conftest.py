from types import SimpleNamespace

import numpy as np
import pytest

from pencilguard.scalogram import Visualization, finalize, morlet_scalogram
from pencilguard.synth import CLASS_NAMES, synth_corpus
from pencilguard.victims import train_mlp, train_svm


@pytest.fixture(scope="session")
def desk():
    """Small synthetic corpus with trained victims, shared across tests.

    30 clips per class, 2/3-1/3 split; everything downstream of this
    fixture must treat it as read-only.
    """
    clips = synth_corpus(clips_per_class=30, seed=0)
    specs = [
        finalize(morlet_scalogram(c), Visualization.LOG, 32, c.clip_id,
                 c.class_label)
        for c in clips
    ]
    x = np.array([s.data.ravel() for s in specs])
    y = np.array([CLASS_NAMES.index(s.class_label) for s in specs])
    rng = np.random.default_rng(7)
    perm = rng.permutation(len(x))
    n_train = 2 * len(x) // 3
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    value_range = (float(x[train_idx].min()), float(x[train_idx].max()))
    return SimpleNamespace(
        specs=specs,
        x=x,
        y=y,
        train_idx=train_idx,
        test_idx=test_idx,
        train_specs=[specs[i] for i in train_idx],
        test_specs=[specs[i] for i in test_idx],
        value_range=value_range,
        classes=CLASS_NAMES,
        mlp=train_mlp(x[train_idx], y[train_idx], CLASS_NAMES, seed=3),
        surrogate=train_mlp(x[train_idx], y[train_idx], CLASS_NAMES, seed=99),
        svm=train_svm(x[train_idx], y[train_idx], CLASS_NAMES, C=10.0),
    )
