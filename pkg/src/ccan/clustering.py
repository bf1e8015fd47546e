"""Clustering layer and joint training of the capsule autoencoder.

Training runs in three phases: reconstruction-only pretraining, K-means
initialization of the cluster centres on the learned embeddings, then joint
updates of network and centres under reconstruction + alpha * KL(P || Q),
refreshing the soft assignments Q and targets P on the full dataset and
stopping once fewer than ``epsilon`` of the hard labels change.
"""

from __future__ import annotations

import json
import logging
import os
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import __version__
from . import kernels
from . import metrics
from . import tensor as T
from .autoencoder import CCAN, NetworkConfig, reconstruction_loss
from .errors import ConfigError, DegenerateClusterError, InitializationError
from .optim import Optimizer, SgdConfig
from .tensor import Parameter, Tensor

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# K-means


class KMeansResult(NamedTuple):
    centers: np.ndarray
    labels: np.ndarray
    inertia: float


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    idx = [int(rng.integers(n))]
    closest = _sq_dists(x, x[idx])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        nxt = int(rng.choice(n, p=closest / total)) if total > 0 else int(rng.integers(n))
        idx.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[nxt:nxt + 1])[:, 0])
    return x[idx].copy()


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int) -> KMeansResult:
    k = len(centers)
    labels = None
    for _ in range(max_iter):
        new = np.argmin(_sq_dists(x, centers), axis=1)
        counts = np.bincount(new, minlength=k)
        while (counts == 0).any():
            # steal the farthest point of the largest cluster
            empty = int(np.flatnonzero(counts == 0)[0])
            big = int(np.argmax(counts))
            members = np.flatnonzero(new == big)
            far = members[np.argmax(((x[members] - centers[big]) ** 2).sum(1))]
            new[far] = empty
            counts = np.bincount(new, minlength=k)
        centers = np.stack([x[new == j].mean(axis=0) for j in range(k)])
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
    labels = np.argmin(_sq_dists(x, centers), axis=1) if labels is None else labels
    inertia = float(((x - centers[labels]) ** 2).sum())
    return KMeansResult(centers, labels, inertia)


def kmeans(x, k: int, seed: int = 0, n_init: int = 20, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding; the best of ``n_init`` restarts."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ConfigError(f"kmeans expects an (N, d) array, got shape {x.shape}")
    if k < 1 or len(x) < k:
        raise InitializationError(f"cannot form {k} clusters from {len(x)} samples")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        result = _lloyd(x, _kmeans_pp(x, k, rng), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


# ---------------------------------------------------------------------------
# soft assignment, targets, losses


def soft_assign(z, centers) -> Tensor:
    """Student's t kernel (one degree of freedom), normalized over clusters."""
    z = T._lift(z)
    centers = T._lift(centers, z)
    if z.ndim == 1:
        z = z.reshape(1, -1)
    n, d = z.shape
    k = centers.shape[0]
    if centers.shape[1] != d:
        raise ConfigError(f"embedding dim {d} does not match centre dim {centers.shape[1]}")
    diff = z.reshape(n, 1, d) - centers.reshape(1, k, d)
    kernel = 1.0 / (1.0 + (diff * diff).sum(axis=-1))
    return kernel / kernel.sum(axis=1, keepdims=True)


def soft_assign_np(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Q for a full-dataset refresh, always in float64 so rows sum to 1 tightly."""
    with T.no_grad():
        return soft_assign(Tensor(z, dtype=np.float64), Tensor(centers, dtype=np.float64)).data


def target_distribution(q) -> np.ndarray:
    """Sharpened, frequency-normalized targets P from a frozen snapshot of Q."""
    q = np.asarray(q.data if isinstance(q, Tensor) else q, dtype=np.float64)
    freq = q.sum(axis=0)
    if (freq <= 0).any():
        bad = np.flatnonzero(freq <= 0).tolist()
        raise DegenerateClusterError(f"clusters {bad} received no soft assignment mass")
    weight = q * q / freq
    return weight / weight.sum(axis=1, keepdims=True)


def clustering_loss(p, q: Tensor, reduction: str = "sum") -> Tensor:
    """KL(P || Q) summed over samples and clusters (``mean``: averaged over samples).

    P is treated as a constant; terms with p = 0 contribute 0.
    """
    q = T._lift(q)
    p = np.asarray(p, dtype=q.dtype)
    if p.shape != q.shape:
        raise ConfigError(f"P {p.shape} and Q {q.shape} differ in shape")
    pos = p > 0
    entropy_term = float(np.sum(p[pos] * np.log(p[pos])))
    loss = entropy_term - (Tensor(p) * T.log(q)).sum()
    if reduction == "mean":
        loss = loss * (1.0 / q.shape[0])
    elif reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}")
    return loss


def joint_loss(rec_loss, clus_loss, alpha: float):
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    return rec_loss + alpha * clus_loss


def hard_labels(q: np.ndarray) -> np.ndarray:
    """argmax over clusters; ties go to the lowest index."""
    return np.argmax(np.asarray(q), axis=1)


def label_change_fraction(previous, current) -> float:
    previous, current = np.asarray(previous), np.asarray(current)
    if previous.shape != current.shape:
        raise ConfigError("label snapshots differ in length")
    return float(np.mean(previous != current)) if previous.size else 0.0


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    alpha: float = 0.1
    epsilon: float = 0.05
    pretrain_iterations: int = 100
    max_iterations: int = 2000
    batch_size: int = 32
    learning_rate: float = 0.001
    optimizer: str = "adam"
    target_update_interval: int = 1
    n_clusters: int = 9
    kmeans_restarts: int = 20
    kl_reduction: str = "mean"
    joint_unit: str = "batch"
    inference_batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must be a fraction in [0, 1], got {self.epsilon}")
        if self.pretrain_iterations < 0 or self.max_iterations < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.target_update_interval < 1:
            raise ConfigError("target_update_interval must be >= 1")
        if self.n_clusters < 2:
            raise ConfigError(f"n_clusters must be >= 2, got {self.n_clusters}")
        if self.kl_reduction not in ("sum", "mean"):
            raise ConfigError(f"kl_reduction must be sum or mean, got {self.kl_reduction!r}")
        if self.joint_unit not in ("batch", "epoch"):
            raise ConfigError(f"joint_unit must be batch or epoch, got {self.joint_unit!r}")
        self.sgd()  # validates learning rate, batch size, optimizer kind

    def sgd(self) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.batch_size, self.optimizer)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ClusterState:
    centers: np.ndarray
    q: np.ndarray
    p: np.ndarray
    labels: np.ndarray


@dataclass
class RunReport:
    config: dict = field(default_factory=dict)
    seed: int = 0
    pretrain_loss: list = field(default_factory=list)
    kmeans_inertia: Optional[float] = None
    joint: list = field(default_factory=list)
    label_change: list = field(default_factory=list)
    converged: bool = False
    joint_iterations: int = 0
    metrics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainResult:
    model: CCAN
    centers: Parameter
    state: ClusterState
    report: RunReport


def environment_info(precision: str) -> dict:
    return {
        "version": __version__,
        "precision": precision,
        "threads": int(os.environ.get("CCAN_THREADS", "1") or 1),
        "kernel_backend": kernels.BACKEND,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }


def _batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start:start + batch_size]


def evaluate_labels(predicted, truth) -> dict:
    return {
        "ca": metrics.clustering_accuracy(predicted, truth),
        "nmi_arithmetic": metrics.nmi(predicted, truth, "arithmetic"),
        "nmi_sqrt": metrics.nmi(predicted, truth, "sqrt"),
    }


def train(
    inputs: np.ndarray,
    net_config: Optional[NetworkConfig] = None,
    config: Optional[TrainConfig] = None,
    labels: Optional[np.ndarray] = None,
    progress: Optional[Callable[[str], None]] = None,
) -> TrainResult:
    """Pretrain, initialize clusters with K-means, then train jointly.

    ``inputs`` is the canonical (N, 1, H, W) array. ``labels`` (optional
    ground truth) is used only for the metrics in the report.
    """
    net_config = net_config or NetworkConfig()
    config = config or TrainConfig()
    say = progress or log.info
    n = len(inputs)
    if n < config.n_clusters:
        raise InitializationError(f"{n} samples cannot form {config.n_clusters} clusters")
    if net_config.embedding_dim < 1:
        raise ConfigError("embedding dimension must be positive")
    inputs = np.asarray(inputs, dtype=net_config.dtype)

    report = RunReport(
        config={"network": net_config.to_dict(), "train": config.to_dict()},
        seed=config.seed,
        environment=environment_info(net_config.precision),
    )
    rng = np.random.default_rng(config.seed)
    model = CCAN(net_config, seed=int(rng.integers(2**31)))
    batches = _batch_stream(n, config.batch_size, rng)

    # phase 1: reconstruction-only pretraining (one mini-batch per iteration)
    t0 = time.perf_counter()
    opt = Optimizer(model.parameters(), config.sgd())
    for it in range(config.pretrain_iterations):
        x = Tensor(inputs[next(batches)])
        recon, _ = model.forward(x)
        loss = reconstruction_loss(x, recon)
        loss.backward()
        opt.step()
        report.pretrain_loss.append(loss.item())
        if (it + 1) % 10 == 0:
            say(f"pretrain {it + 1}/{config.pretrain_iterations}  L_r={loss.item():.4f}")
    report.timings["pretrain_s"] = time.perf_counter() - t0

    # phase 2: K-means on the pretrained embeddings
    t0 = time.perf_counter()
    z = model.embed(inputs, config.inference_batch_size)
    km = kmeans(z, config.n_clusters, seed=int(rng.integers(2**31)), n_init=config.kmeans_restarts)
    report.kmeans_inertia = km.inertia
    centers = Parameter(km.centers.astype(net_config.dtype), name="cluster.centers")
    report.timings["kmeans_s"] = time.perf_counter() - t0
    say(f"k-means inertia {km.inertia:.6f}")

    # phase 3: joint training
    t0 = time.perf_counter()
    # the network keeps its optimizer state; the centres join with fresh moments
    opt.add_params([centers])
    previous = km.labels
    q = soft_assign_np(z, centers.data)
    p = target_distribution(q)
    current = hard_labels(q)
    for it in range(config.max_iterations):
        if it % config.target_update_interval == 0:
            if it > 0:
                z = model.embed(inputs, config.inference_batch_size)
                q = soft_assign_np(z, centers.data)
                p = target_distribution(q)
                current = hard_labels(q)
            frac = label_change_fraction(previous, current)
            entry = {"iteration": it, "fraction": frac}
            if labels is not None:
                entry["ca"] = metrics.clustering_accuracy(current, labels)
            report.label_change.append(entry)
            previous = current
            say(f"joint {it}: label change {frac:.4f}")
            # the refresh at iteration 0 only restates the K-means labels
            if it > 0 and frac < config.epsilon:
                report.converged = True
                break
        # one joint iteration is a single mini-batch step, or a full epoch
        if config.joint_unit == "batch":
            steps = [next(batches)]
        else:
            steps = _epoch(n, config.batch_size, rng)
        sums = np.zeros(3)
        seen = 0
        for idx in steps:
            x = Tensor(inputs[idx])
            recon, enc = model.forward(x)
            l_r = reconstruction_loss(x, recon)
            l_c = clustering_loss(p[idx], soft_assign(enc.embedding, centers), config.kl_reduction)
            l_j = joint_loss(l_r, l_c, config.alpha)
            l_j.backward()
            opt.step()
            sums += len(idx) * np.array([l_r.item(), l_c.item(), l_j.item()])
            seen += len(idx)
        sums /= seen
        report.joint.append({"iteration": it, "L_r": sums[0], "L_c": sums[1], "L_J": sums[2]})
        report.joint_iterations = it + 1
    else:
        if config.max_iterations > 0:
            z = model.embed(inputs, config.inference_batch_size)
            q = soft_assign_np(z, centers.data)
            p = target_distribution(q)
            current = hard_labels(q)
    report.timings["joint_s"] = time.perf_counter() - t0

    state = ClusterState(centers.data.copy(), q, p, current)
    if labels is not None:
        report.metrics = evaluate_labels(current, labels)
        say(f"CA={report.metrics['ca']:.4f}  NMI={report.metrics['nmi_arithmetic']:.4f}")
    return TrainResult(model, centers, state, report)


def _epoch(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
