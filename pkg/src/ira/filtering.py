"""Embedding-fusion relevance filter: a 3-layer MLP scored through a sigmoid.

The fused input is [mean(info, question) ; visual] of length 2d. The network
is input(2d) -> hidden(d) -> hidden(max(d//2, 8)) -> scalar with
rectified-linear activations between the affine layers; the sigmoid that
turns the raw score into a contribution probability is applied outside the
network. Training minimizes the binary cross-entropy between that
probability and the 0/1 helpfulness label, with analytic backpropagation and
adaptive-moment (Adam) updates. Everything is plain float64 numpy so that a
fixed seed reproduces checkpoints bitwise.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NonFiniteLoss
from .gateway import EmbeddingVector

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
SINGLE_MODES = ("q", "a", "qa", "s")
MODES = SINGLE_MODES + ("ensemble",)

# Sigmoid saturates to exactly 0/1 in float64 beyond |z| ~ 37; scores are
# clamped just inside the open interval required of contribution scores.
_SCORE_EPS = 1e-15


@dataclass
class FilterHyperparams:
    learning_rate: float = 1e-2
    batch_size: int = 256
    epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class FilterModel:
    mode: str
    dim: int
    seed: int
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def parameters(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    def shapes_ok(self) -> bool:
        h1, h2 = hidden_sizes(self.dim)
        return (
            self.w1.shape == (2 * self.dim, h1)
            and self.b1.shape == (h1,)
            and self.w2.shape == (h1, h2)
            and self.b2.shape == (h2,)
            and self.w3.shape == (h2, 1)
            and self.b3.shape == (1,)
        )


@dataclass
class FilterSample:
    """One supervision sample: embeddings plus the 0/1 helpfulness label."""

    question_embed: np.ndarray
    info_embed: np.ndarray
    visual_embed: np.ndarray
    label: int
    question_id: str = ""
    mode: str = ""
    info_text: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class TrainResult:
    model: FilterModel
    final_loss: float
    step_losses: list[float] = field(default_factory=list)


def _as_array(vec) -> np.ndarray:
    if isinstance(vec, EmbeddingVector):
        return np.asarray(vec.values, dtype=np.float64)
    return np.asarray(vec, dtype=np.float64)


def hidden_sizes(dim: int) -> tuple[int, int]:
    return dim, max(dim // 2, 8)


def init_filter(dim: int, mode: str, seed: int) -> FilterModel:
    """Uniform fan-in initialization, deterministic in the seed."""
    if mode not in MODES:
        raise ValueError(f"unknown filter mode {mode!r}")
    rng = np.random.default_rng([seed, 0])
    h1, h2 = hidden_sizes(dim)

    def layer(fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
        bound = 1.0 / np.sqrt(fan_in)
        return (
            rng.uniform(-bound, bound, (fan_in, fan_out)),
            rng.uniform(-bound, bound, fan_out),
        )

    w1, b1 = layer(2 * dim, h1)
    w2, b2 = layer(h1, h2)
    w3, b3 = layer(h2, 1)
    return FilterModel(mode=mode, dim=dim, seed=seed, w1=w1, b1=b1, w2=w2, b2=b2, w3=w3, b3=b3)


def fuse_features(question_embed, info_embed, visual_embed) -> np.ndarray:
    """[mean(info, question) ; visual]: the filter input of length 2d."""
    q = _as_array(question_embed)
    i = _as_array(info_embed)
    v = _as_array(visual_embed)
    if not (q.shape == i.shape == v.shape) or q.ndim != 1:
        raise DimensionMismatch(
            f"embedding dims differ: question {q.shape}, info {i.shape}, visual {v.shape}"
        )
    return np.concatenate([(q + i) / 2.0, v])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: FilterModel, fused: np.ndarray) -> np.ndarray:
    """Raw (pre-sigmoid) scores for a batch of fused vectors."""
    X = np.atleast_2d(np.asarray(fused, dtype=np.float64))
    if X.shape[1] != 2 * model.dim:
        raise DimensionMismatch(f"fused length {X.shape[1]} != 2*dim = {2 * model.dim}")
    a1 = np.maximum(X @ model.w1 + model.b1, 0.0)
    a2 = np.maximum(a1 @ model.w2 + model.b2, 0.0)
    return (a2 @ model.w3 + model.b3).ravel()


def filter_score(model: FilterModel, fused) -> float:
    """Contribution score sigma(MLP(fused)), strictly inside (0, 1)."""
    z = forward(model, _as_array(fused))[0]
    return float(np.clip(sigmoid(z), _SCORE_EPS, 1.0 - _SCORE_EPS))


def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy -[y log p + (1-y) log(1-p)] for p in (0, 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must be in (0, 1), got {p}")
    if y not in (0, 1):
        raise ValueError(f"y must be 0 or 1, got {y!r}")
    return float(-(y * np.log(p) + (1 - y) * np.log(1.0 - p)))


def loss_and_gradients(model: FilterModel, X: np.ndarray, y: np.ndarray):
    """Mean BCE loss over the batch and its analytic parameter gradients.

    The loss is evaluated in the numerically stable raw-score form
    softplus(z) - y*z, which equals bce_loss(sigmoid(z), y) exactly.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    n = X.shape[0]
    if X.shape[1] != 2 * model.dim:
        raise DimensionMismatch(f"fused length {X.shape[1]} != 2*dim = {2 * model.dim}")

    z1 = X @ model.w1 + model.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ model.w2 + model.b2
    a2 = np.maximum(z2, 0.0)
    z = (a2 @ model.w3 + model.b3).ravel()

    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))

    dz = ((sigmoid(z) - y) / n)[:, None]
    dw3 = a2.T @ dz
    db3 = dz.sum(axis=0)
    da2 = dz @ model.w3.T
    da2[z2 <= 0.0] = 0.0
    dw2 = a1.T @ da2
    db2 = da2.sum(axis=0)
    da1 = da2 @ model.w2.T
    da1[z1 <= 0.0] = 0.0
    dw1 = X.T @ da1
    db1 = da1.sum(axis=0)
    return loss, [dw1, db1, dw2, db2, dw3, db3]


def samples_to_matrix(samples: list[FilterSample]) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack(
        [fuse_features(s.question_embed, s.info_embed, s.visual_embed) for s in samples]
    )
    y = np.array([s.label for s in samples], dtype=np.float64)
    return X, y


def train_filter(
    samples: list[FilterSample],
    mode: str,
    hyperparams: FilterHyperparams | None = None,
    seed: int = 0,
) -> TrainResult:
    """Train one filter with mini-batch Adam; deterministic given the seed."""
    hp = hyperparams or FilterHyperparams()
    if not samples:
        raise ValueError("cannot train on an empty sample list")
    X, y = samples_to_matrix(samples)
    labels = set(int(v) for v in y)
    if labels != {0, 1}:
        logger.warning("training set contains only label(s) %s; filter may be degenerate", labels)
    dim = X.shape[1] // 2
    model = init_filter(dim, mode, seed)
    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    shuffle_rng = np.random.default_rng([seed, 1])
    step = 0
    step_losses = []
    for _ in range(hp.epochs):
        order = shuffle_rng.permutation(len(X))
        for start in range(0, len(X), hp.batch_size):
            batch = order[start : start + hp.batch_size]
            loss, grads = loss_and_gradients(model, X[batch], y[batch])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"training loss became {loss} at step {step}")
            step_losses.append(loss)
            step += 1
            for j, grad in enumerate(grads):
                m[j] = hp.beta1 * m[j] + (1 - hp.beta1) * grad
                v[j] = hp.beta2 * v[j] + (1 - hp.beta2) * grad**2
                m_hat = m[j] / (1 - hp.beta1**step)
                v_hat = v[j] / (1 - hp.beta2**step)
                params[j] -= hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.adam_eps)
    final_loss, _ = loss_and_gradients(model, X, y)
    if not np.isfinite(final_loss):
        raise NonFiniteLoss(f"final training loss is {final_loss}")
    return TrainResult(model=model, final_loss=final_loss, step_losses=step_losses)


# -- checkpoint io --------------------------------------------------------
#
# One JSON file per model: metadata header plus base64-encoded little-endian
# float64 arrays. (A zip-based container would embed timestamps and break
# byte-identical reruns.)

_ARRAY_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


def save_checkpoint(
    model: FilterModel, path: str | Path, hyperparams: FilterHyperparams | None = None
) -> None:
    arrays = {}
    for name in _ARRAY_NAMES:
        arr = np.ascontiguousarray(getattr(model, name), dtype=np.float64)
        arrays[name] = {
            "shape": list(arr.shape),
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    record = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "ira-filter-checkpoint",
        "mode": model.mode,
        "dim": model.dim,
        "seed": model.seed,
        "hyperparams": asdict(hyperparams) if hyperparams else None,
        "arrays": arrays,
    }
    Path(path).write_text(json.dumps(record, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> FilterModel:
    record = json.loads(Path(path).read_text(encoding="utf-8"))
    version = record.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format_version {version!r}")
    kwargs = {}
    for name in _ARRAY_NAMES:
        entry = record["arrays"][name]
        arr = np.frombuffer(base64.b64decode(entry["data"]), dtype=np.float64)
        kwargs[name] = arr.reshape(entry["shape"]).copy()
    model = FilterModel(mode=record["mode"], dim=record["dim"], seed=record["seed"], **kwargs)
    if not model.shapes_ok():
        raise ValueError(f"checkpoint {path} has inconsistent layer shapes")
    return model
