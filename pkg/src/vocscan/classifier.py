"""Window classifiers: probability distributions over K+1 classes.

Two interchangeable model kinds are provided: a trainable 1-D
convolutional network (the reference classifier) and a nearest-centroid
baseline used for cross-checks. Both consume normalized delta x C
windows and emit a softmax distribution whose class 0 means "no target
compound". External models can be plugged in by matching
:class:`ClassifierModel`'s two methods.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .core import ContractError, derive_rng
from .dataset import DataPoint, LabeledDataset
from .network import (
    ConvBlock,
    ConvNet1d,
    ConvNetConfig,
    TrainingError,
    _STREAM_SHUFFLE,
    softmax,
    train_network,
)

__all__ = [
    "ClassifierModel",
    "ConvNetConfig",
    "ConvBlock",
    "ConvNetModel",
    "CentroidModel",
    "ModelMeta",
    "TrainingError",
    "softmax",
    "classify",
    "train_convnet",
    "train_centroid",
    "accuracy",
    "save_model",
    "load_model",
]

logger = logging.getLogger(__name__)

_MODEL_VERSION = 1


@dataclass(frozen=True)
class ModelMeta:
    """Shape contract of a trained model."""

    n_classes: int  # K + 1 including the negative class
    delta: int
    channels: int
    kind: str

    @property
    def n_targets(self) -> int:
        return self.n_classes - 1


class ClassifierModel:
    """Interface: batched probabilities over windows in (batch, C, delta) layout."""

    meta: ModelMeta

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, dp: DataPoint) -> np.ndarray:
        """Probability vector for one normalized data point."""
        _check_point(self.meta, dp)
        return self.predict_batch(dp.values.T[None])[0]


def _check_point(meta: ModelMeta, dp: DataPoint) -> None:
    if not dp.normalized:
        raise ContractError("classifier input must be normalized")
    if (dp.delta, dp.channels) != (meta.delta, meta.channels):
        raise ContractError(
            f"point shape ({dp.delta}, {dp.channels}) does not match model "
            f"({meta.delta}, {meta.channels})"
        )


def _check_batch(meta: ModelMeta, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (meta.channels, meta.delta):
        raise ContractError(
            f"expected batch shape (n, {meta.channels}, {meta.delta}), got {x.shape}"
        )
    return x


class ConvNetModel(ClassifierModel):
    """Trained reference network plus its shape metadata."""

    def __init__(self, net: ConvNet1d, train_accuracy: float | None = None,
                 loss_history: list[float] | None = None):
        self.net = net
        self.meta = ModelMeta(
            n_classes=net.n_classes, delta=net.in_length, channels=net.in_channels, kind="convnet"
        )
        self.train_accuracy = train_accuracy
        self.loss_history = list(loss_history or [])

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        return self.net.predict_proba(_check_batch(self.meta, x))


class CentroidModel(ClassifierModel):
    """Softmax over negative Euclidean distances to per-class mean windows."""

    def __init__(self, centroids: np.ndarray):
        centroids = np.asarray(centroids, dtype=np.float64)
        if centroids.ndim != 3:
            raise ContractError(f"centroids must be (classes, C, delta), got {centroids.shape}")
        self.centroids = centroids
        self.meta = ModelMeta(
            n_classes=centroids.shape[0],
            delta=centroids.shape[2],
            channels=centroids.shape[1],
            kind="centroid",
        )

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        x = _check_batch(self.meta, x)
        diff = x[:, None] - self.centroids[None]  # (n, classes, C, delta)
        dist = np.sqrt((diff * diff).sum(axis=(2, 3)))
        return softmax(-dist)


def classify(model: ClassifierModel, dp: DataPoint) -> tuple[int, float, np.ndarray]:
    """Label, confidence, and full probability vector for one window.

    The label is the argmax class; exact probability ties resolve to the
    smaller label. Confidence is the winning probability.
    """
    probs = model.predict(dp)
    label = int(np.argmax(probs))  # argmax returns the first (smallest) index on ties
    return label, float(probs[label]), probs


def _dataset_arrays(dataset: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    if not len(dataset):
        raise TrainingError("cannot train on an empty dataset")
    for p in dataset.points:
        if not p.normalized:
            raise TrainingError("training points must be normalized first")
    x, y = dataset.to_arrays()
    return x.transpose(0, 2, 1), y  # (n, C, delta)


def train_convnet(
    dataset: LabeledDataset, cfg: ConvNetConfig, *, n_classes: int | None = None
) -> ConvNetModel:
    """Train the reference network; deterministic given ``cfg.seed``.

    ``n_classes`` defaults to the highest label present + 1. The
    returned model carries the per-epoch loss history and the final
    accuracy on the training set.
    """
    x, y = _dataset_arrays(dataset)
    classes = dataset.n_classes if n_classes is None else n_classes
    classes = max(classes, 2)
    if int(y.max()) >= classes:
        raise ContractError(f"dataset contains label {int(y.max())} >= n_classes {classes}")
    net = ConvNet1d(cfg, in_channels=x.shape[1], in_length=x.shape[2], n_classes=classes)
    history = train_network(net, x, y, rng=derive_rng(cfg.seed, _STREAM_SHUFFLE))
    model = ConvNetModel(net, loss_history=history)
    model.train_accuracy = accuracy(model, dataset)
    logger.info(
        "trained convnet: %d points, %d classes, final loss %.4f, train accuracy %.4f",
        len(dataset), classes, history[-1], model.train_accuracy,
    )
    return model


def train_centroid(dataset: LabeledDataset, *, n_classes: int | None = None) -> CentroidModel:
    """Per-class mean of the normalized points; needs every class populated."""
    x, y = _dataset_arrays(dataset)
    classes = dataset.n_classes if n_classes is None else n_classes
    classes = max(classes, 2)
    centroids = np.empty((classes, x.shape[1], x.shape[2]))
    for c in range(classes):
        members = x[y == c]
        if members.shape[0] == 0:
            raise TrainingError(f"class {c} has no training points; centroids undefined")
        centroids[c] = members.mean(axis=0)
    return CentroidModel(centroids)


def accuracy(model: ClassifierModel, dataset: LabeledDataset, batch_size: int = 512) -> float:
    """Fraction of dataset points whose argmax class matches their label."""
    x, y = _dataset_arrays(dataset)
    hits = 0
    for start in range(0, x.shape[0], batch_size):
        probs = model.predict_batch(x[start : start + batch_size])
        hits += int((probs.argmax(axis=1) == y[start : start + batch_size]).sum())
    return hits / x.shape[0]


# ---------------------------------------------------------------------------
# persistence

def save_model(model: ClassifierModel, path) -> None:
    """Write a model to a versioned .npz container."""
    meta = model.meta
    common = dict(
        version=np.array(_MODEL_VERSION),
        kind=np.array(meta.kind),
        n_classes=np.array(meta.n_classes),
        delta=np.array(meta.delta),
        channels=np.array(meta.channels),
    )
    if isinstance(model, ConvNetModel):
        cfg = model.net.config
        config_doc = {
            "blocks": [[b.filters, b.kernel, b.pool] for b in cfg.blocks],
            "dense": list(cfg.dense),
            "learning_rate": cfg.learning_rate,
            "batch_size": cfg.batch_size,
            "epochs": cfg.epochs,
            "seed": cfg.seed,
            "momentum": cfg.momentum,
        }
        params = {f"param_{i}": p for i, p in enumerate(model.net.parameters())}
        np.savez(
            path,
            config=np.array(json.dumps(config_doc)),
            train_accuracy=np.array(
                np.nan if model.train_accuracy is None else model.train_accuracy
            ),
            **common,
            **params,
        )
    elif isinstance(model, CentroidModel):
        np.savez(path, centroids=model.centroids, **common)
    else:
        raise ContractError(f"cannot save model kind {meta.kind!r}")


def load_model(path) -> ClassifierModel:
    """Read a model written by :func:`save_model`."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"])
        if version != _MODEL_VERSION:
            raise ContractError(f"model version {version} unsupported (expected {_MODEL_VERSION})")
        kind = str(z["kind"])
        if kind == "centroid":
            return CentroidModel(z["centroids"])
        if kind != "convnet":
            raise ContractError(f"unknown model kind {kind!r}")
        doc = json.loads(str(z["config"]))
        cfg = ConvNetConfig(
            blocks=tuple(ConvBlock(*b) for b in doc["blocks"]),
            dense=tuple(doc["dense"]),
            learning_rate=doc["learning_rate"],
            batch_size=doc["batch_size"],
            epochs=doc["epochs"],
            seed=doc["seed"],
            momentum=doc["momentum"],
        )
        net = ConvNet1d(
            cfg,
            in_channels=int(z["channels"]),
            in_length=int(z["delta"]),
            n_classes=int(z["n_classes"]),
        )
        for i, p in enumerate(net.parameters()):
            p[...] = z[f"param_{i}"]
        train_acc = float(z["train_accuracy"])
        model = ConvNetModel(net, train_accuracy=None if np.isnan(train_acc) else train_acc)
        return model
