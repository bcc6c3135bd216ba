"""Reference detectors sharing one score-sequence interface.

Unsupervised detectors (random, pca, knn, kmeans) fit on per-timestep channel
vectors and ignore labels entirely; supervised ones (logreg, stand) refuse to
fit without labels. ``score`` always returns one finite real per timestep,
higher meaning more anomalous.
"""

from __future__ import annotations

import numpy as np

from . import stand as stand_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .data import TimeSeriesDataset, make_windows
from .exceptions import ConfigError, ContractError
from .ndcore import make_rng, sigmoid

UTAD = "UTAD-I"
STAD = "STAD"

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


def random_score(T: int, seed: int) -> np.ndarray:
    """i.i.d. uniform(0,1) scores from the seeded stream."""
    if T < 1:
        raise ConfigError("T must be >= 1")
    return make_rng(seed).uniform(size=T)


class RandomDetector:
    """Scores every timestep with an independent uniform draw."""

    kind = "random"
    supervision = UTAD

    def __init__(self, seed: int = 0):
        self.seed = seed

    def fit(self, values, labels=None):
        return self

    def score(self, values) -> np.ndarray:
        return random_score(len(values), self.seed)

    def state(self):
        return {"seed": self.seed}, {}


class PcaDetector:
    """Squared reconstruction error through the top-k principal subspace."""

    kind = "pca"
    supervision = UTAD

    def __init__(self, rank: int = 10):
        self.rank = rank
        self.mean_ = None
        self.components_ = None  # (k, C)

    def fit(self, values, labels=None):
        x = np.asarray(values, dtype=np.float64)
        if self.rank > x.shape[1]:
            raise ConfigError(f"pca rank {self.rank} exceeds channel count {x.shape[1]}")
        k = self.rank
        self.mean_ = x.mean(axis=0)
        centered = x - self.mean_
        cov = centered.T @ centered / max(len(x), 1)
        eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
        self.components_ = eigvecs[:, ::-1][:, :k].T.copy()
        return self

    def score(self, values) -> np.ndarray:
        if self.components_ is None:
            raise ConfigError("pca detector is not fitted")
        centered = np.asarray(values, dtype=np.float64) - self.mean_
        proj = centered @ self.components_.T @ self.components_
        return np.sum((centered - proj) ** 2, axis=1)

    def state(self):
        return {"rank": self.rank}, {"mean": self.mean_, "components": self.components_}


class KnnDetector:
    """Mean Euclidean distance to the k nearest stored training vectors."""

    kind = "knn"
    supervision = UTAD

    def __init__(self, k: int = 5, chunk: int = 2048):
        if k < 1:
            raise ConfigError("knn needs k >= 1")
        self.k = k
        self.chunk = chunk
        self.train_ = None

    def fit(self, values, labels=None):
        x = np.asarray(values, dtype=np.float64)
        if len(x) == 0:
            raise ConfigError("knn training set is empty")
        if self.k > len(x):
            raise ConfigError(f"knn k={self.k} exceeds training size {len(x)}")
        self.train_ = x.copy()
        return self

    def score(self, values) -> np.ndarray:
        if self.train_ is None:
            raise ConfigError("knn detector is not fitted")
        q = np.asarray(values, dtype=np.float64)
        train = self.train_
        t_sq = np.sum(train**2, axis=1)
        out = np.empty(len(q))
        for lo in range(0, len(q), self.chunk):
            block = q[lo : lo + self.chunk]
            d_sq = np.sum(block**2, axis=1)[:, None] + t_sq[None, :] - 2.0 * block @ train.T
            np.maximum(d_sq, 0.0, out=d_sq)
            nearest = np.partition(d_sq, self.k - 1, axis=1)[:, : self.k]
            out[lo : lo + len(block)] = np.sqrt(nearest).mean(axis=1)
        return out

    def state(self):
        return {"k": self.k}, {"train": self.train_}


class KmeansDetector:
    """Distance to the nearest of k centroids fitted by seeded Lloyd iterations.

    Assignment ties break toward the lowest centroid index; clusters that
    empty out are re-seeded from the point farthest from its centroid.
    """

    kind = "kmeans"
    supervision = UTAD

    def __init__(self, n_clusters: int = 10, seed: int = 0):
        if n_clusters < 1:
            raise ConfigError("kmeans needs n_clusters >= 1")
        self.n_clusters = n_clusters
        self.seed = seed
        self.centroids_ = None

    def fit(self, values, labels=None):
        x = np.asarray(values, dtype=np.float64)
        if len(x) == 0:
            raise ConfigError("kmeans training set is empty")
        k = min(self.n_clusters, len(x))
        rng = make_rng(self.seed)
        centroids = x[rng.choice(len(x), size=k, replace=False)].copy()
        for _ in range(KMEANS_MAX_ITER):
            d = _pairwise_dist(x, centroids)
            assign = np.argmin(d, axis=1)  # argmin picks the lowest index on ties
            new = np.empty_like(centroids)
            for j in range(k):
                members = x[assign == j]
                if len(members) == 0:
                    farthest = int(np.argmax(d[np.arange(len(x)), assign]))
                    new[j] = x[farthest]
                else:
                    new[j] = members.mean(axis=0)
            shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
            centroids = new
            if shift < KMEANS_TOL:
                break
        self.centroids_ = centroids
        return self

    def score(self, values) -> np.ndarray:
        if self.centroids_ is None:
            raise ConfigError("kmeans detector is not fitted")
        return np.min(_pairwise_dist(np.asarray(values, dtype=np.float64), self.centroids_), axis=1)

    def state(self):
        return {"n_clusters": self.n_clusters, "seed": self.seed}, {"centroids": self.centroids_}


def _pairwise_dist(a, b):
    d_sq = np.sum(a**2, axis=1)[:, None] + np.sum(b**2, axis=1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d_sq, 0.0))


class LogRegDetector:
    """Pointwise logistic regression trained by full-batch gradient descent on BCE.

    Weights start at zero, so the first step is exactly (1/N) sum (sigma(0)-y) x.
    Scores are logits.
    """

    kind = "logreg"
    supervision = STAD

    def __init__(self, learning_rate: float = 0.1, epochs: int = 500):
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.w_ = None
        self.b_ = 0.0

    def fit(self, values, labels=None):
        if labels is None:
            raise ContractError("logreg is supervised; fit requires labels")
        x = np.asarray(values, dtype=np.float64)
        y = np.asarray(labels, dtype=np.float64)
        n = len(x)
        w = np.zeros(x.shape[1])
        b = 0.0
        for _ in range(self.epochs):
            p = sigmoid(x @ w + b)
            err = (p - y) / n
            w = w - self.learning_rate * (x.T @ err)
            b = b - self.learning_rate * float(err.sum())
        self.w_, self.b_ = w, b
        return self

    def score(self, values) -> np.ndarray:
        if self.w_ is None:
            raise ConfigError("logreg detector is not fitted")
        return np.asarray(values, dtype=np.float64) @ self.w_ + self.b_

    def state(self):
        return (
            {"learning_rate": self.learning_rate, "epochs": self.epochs},
            {"w": self.w_, "b": np.array([self.b_])},
        )


class StandDetector:
    """Harness adapter around the supervised sequence detector."""

    kind = "stand"
    supervision = STAD

    def __init__(self, config: stand_mod.StandConfig, train_stride: int = 2,
                 infer_stride: int | None = None):
        self.config = config
        self.train_stride = min(train_stride, config.window)
        self.infer_stride = infer_stride
        self.params_ = None
        self.loss_history_ = None

    def fit(self, values, labels=None):
        if labels is None:
            raise ContractError("stand is supervised; fit requires labels")
        ds = TimeSeriesDataset(name="train", values=np.asarray(values, dtype=np.float64),
                               labels=np.asarray(labels))
        windows = make_windows(ds, self.config.window, self.train_stride)
        result = stand_mod.train(windows, self.config)
        self.params_ = result.params
        self.loss_history_ = result.loss_history
        return self

    def score(self, values) -> np.ndarray:
        if self.params_ is None:
            raise ConfigError("stand detector is not fitted")
        return stand_mod.infer(values, self.params_, self.config, stride=self.infer_stride)

    def state(self):
        cfg = self.config.to_dict()
        cfg["train_stride"] = self.train_stride
        return cfg, dict(self.params_)


DETECTOR_KINDS = {
    "random": RandomDetector,
    "pca": PcaDetector,
    "knn": KnnDetector,
    "kmeans": KmeansDetector,
    "logreg": LogRegDetector,
    "stand": StandDetector,
}


def build_detector(kind: str, **kwargs):
    """Instantiate a detector by kind tag; 'stand' takes StandConfig fields."""
    if kind not in DETECTOR_KINDS:
        raise ConfigError(f"unknown detector kind '{kind}'")
    if kind == "stand":
        train_stride = kwargs.pop("train_stride", 2)
        infer_stride = kwargs.pop("infer_stride", None)
        return StandDetector(
            stand_mod.StandConfig(**kwargs),
            train_stride=train_stride,
            infer_stride=infer_stride,
        )
    return DETECTOR_KINDS[kind](**kwargs)


def save_detector(detector, path) -> None:
    config, tensors = detector.state()
    save_checkpoint(path, detector.kind, config, {k: np.asarray(v) for k, v in tensors.items()})


def load_detector(path):
    kind, config, tensors = load_checkpoint(path)
    return detector_from_state(kind, config, tensors)


def detector_from_state(kind: str, config: dict, tensors: dict):
    if kind == "random":
        return RandomDetector(seed=int(config["seed"]))
    if kind == "pca":
        det = PcaDetector(rank=int(config["rank"]))
        det.mean_ = tensors["mean"]
        det.components_ = tensors["components"]
        return det
    if kind == "knn":
        det = KnnDetector(k=int(config["k"]))
        det.train_ = tensors["train"]
        return det
    if kind == "kmeans":
        det = KmeansDetector(n_clusters=int(config["n_clusters"]), seed=int(config["seed"]))
        det.centroids_ = tensors["centroids"]
        return det
    if kind == "logreg":
        det = LogRegDetector(
            learning_rate=float(config["learning_rate"]), epochs=int(config["epochs"])
        )
        det.w_ = tensors["w"]
        det.b_ = float(tensors["b"][0])
        return det
    if kind == "stand":
        cfg = dict(config)
        train_stride = int(cfg.pop("train_stride", 2))
        det = StandDetector(stand_mod.StandConfig(**cfg), train_stride=train_stride)
        det.params_ = tensors
        return det
    raise ConfigError(f"unknown detector kind '{kind}' in checkpoint")
