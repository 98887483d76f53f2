"""Linear softmax head over frozen embeddings, trained with AdamW.

Training is step-scheduled (epochs x steps_per_epoch optimizer steps over a
seeded shuffled cyclic sampler) rather than full passes over the data, and is
fully deterministic for a fixed seed. All arithmetic is 64-bit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InsufficientData,
    LabelOutOfRange,
    ShapeHeaderMismatch,
    ShapeMismatch,
)

CHECKPOINT_MAGIC = b"MQCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 10
    steps_per_epoch: int = 100
    batch_size: int = 8
    seed: int = 42

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie strictly in (0, 1)")
        if self.learning_rate <= 0 or self.epsilon <= 0:
            raise ValueError("learning_rate and epsilon must be positive")

    def stable_hash(self) -> int:
        """64-bit content hash used to key checkpoints and run logs."""
        payload = repr(sorted(asdict(self).items())).encode("utf-8")
        return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


@dataclass
class ClassifierState:
    W: np.ndarray  # K x D
    b: np.ndarray  # K
    m_W: np.ndarray
    v_W: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    t: int = 0

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dim(self) -> int:
        return self.W.shape[1]


@dataclass
class HeadGradients:
    W: np.ndarray
    b: np.ndarray


@dataclass
class TrainHistory:
    step_losses: list[float]
    epoch_losses: list[float]
    config: TrainConfig
    final_dev_accuracy: float | None = None


def init_state(num_classes: int, dim: int, rng: np.random.Generator) -> ClassifierState:
    """Uniform +-1/sqrt(D) weights (bounded logits on unit-norm inputs), zero bias."""
    bound = 1.0 / np.sqrt(dim)
    return ClassifierState(
        W=rng.uniform(-bound, bound, size=(num_classes, dim)),
        b=np.zeros(num_classes),
        m_W=np.zeros((num_classes, dim)),
        v_W=np.zeros((num_classes, dim)),
        m_b=np.zeros(num_classes),
        v_b=np.zeros(num_classes),
        t=0,
    )


def forward_logits(state: ClassifierState, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != state.dim:
        raise ShapeMismatch(f"expected B x {state.dim} inputs, got {X.shape}")
    return X @ state.W.T + state.b


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient w.r.t. the logits.

    Log-probabilities use max-subtraction so large logits stay finite;
    the gradient is (softmax - onehot) / B.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"logits {logits.shape} do not match labels {labels.shape}")
    b, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in 0..{k - 1}")

    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = float(-log_probs[np.arange(b), labels].mean())

    grad = np.exp(log_probs)
    grad[np.arange(b), labels] -= 1.0
    return loss, grad / b


def adamw_step(state: ClassifierState, grads: HeadGradients,
               config: TrainConfig) -> ClassifierState:
    """One decoupled-weight-decay Adam update; returns a new state snapshot."""
    if grads.W.shape != state.W.shape or grads.b.shape != state.b.shape:
        raise ShapeMismatch(f"gradient shapes {grads.W.shape}/{grads.b.shape} do not match "
                            f"state {state.W.shape}/{state.b.shape}")
    t = state.t + 1
    b1, b2 = config.beta1, config.beta2
    lr, eps, wd = config.learning_rate, config.epsilon, config.weight_decay

    def update(theta, m, v, g):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + wd * theta)
        return theta, m, v

    W, m_W, v_W = update(state.W, state.m_W, state.v_W, np.asarray(grads.W, dtype=np.float64))
    b, m_b, v_b = update(state.b, state.m_b, state.v_b, np.asarray(grads.b, dtype=np.float64))
    return ClassifierState(W=W, b=b, m_W=m_W, v_W=v_W, m_b=m_b, v_b=v_b, t=t)


class _CyclicSampler:
    """Seeded shuffled index stream; reshuffles whenever a pass is exhausted."""

    def __init__(self, n: int, rng: np.random.Generator):
        self._n = n
        self._rng = rng
        self._order = rng.permutation(n)
        self._pos = 0

    def draw(self, count: int) -> np.ndarray:
        out = np.empty(count, dtype=np.int64)
        for i in range(count):
            if self._pos == self._n:
                self._order = self._rng.permutation(self._n)
                self._pos = 0
            out[i] = self._order[self._pos]
            self._pos += 1
        return out


def train(X: np.ndarray, labels: np.ndarray, config: TrainConfig,
          num_classes: int | None = None) -> tuple[ClassifierState, TrainHistory]:
    """Run exactly epochs * steps_per_epoch AdamW steps over sampled batches."""
    X = np.asarray(getattr(X, "data", X), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or labels.shape != (X.shape[0],):
        raise ShapeMismatch(f"embeddings {X.shape} do not match labels {labels.shape}")
    n, dim = X.shape
    if n < config.batch_size:
        raise InsufficientData(f"{n} rows cannot fill a batch of {config.batch_size}")
    if labels.min() < 0:
        raise LabelOutOfRange("labels must be non-negative")
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    if labels.max() >= k:
        raise LabelOutOfRange(f"labels must lie in 0..{k - 1}")

    rng = np.random.default_rng(config.seed)
    state = init_state(k, dim, rng)
    sampler = _CyclicSampler(n, rng)

    step_losses: list[float] = []
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        epoch = []
        for _ in range(config.steps_per_epoch):
            idx = sampler.draw(config.batch_size)
            logits = forward_logits(state, X[idx])
            loss, grad_logits = softmax_cross_entropy(logits, labels[idx])
            grads = HeadGradients(W=grad_logits.T @ X[idx], b=grad_logits.sum(axis=0))
            state = adamw_step(state, grads, config)
            epoch.append(loss)
        step_losses.extend(epoch)
        epoch_losses.append(float(np.mean(epoch)))

    return state, TrainHistory(step_losses=step_losses, epoch_losses=epoch_losses,
                               config=config)


def predict(state: ClassifierState, X: np.ndarray) -> np.ndarray:
    """Row-wise argmax of the logits; ties resolve to the lowest class index."""
    return np.argmax(forward_logits(state, X), axis=1)


# --- checkpoints --------------------------------------------------------------
# Layout (little-endian): magic "MQCK" | version u32 | K u32 | D u32 | t u64 |
# config hash u64 | W, b, m_W, v_W, m_b, v_b as float64 row-major.

def save_checkpoint(state: ClassifierState, path: str | Path,
                    config: TrainConfig | None = None) -> None:
    config_hash = config.stable_hash() if config is not None else 0
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIIQQ", CHECKPOINT_VERSION, state.num_classes, state.dim,
                            state.t, config_hash))
        for tensor in (state.W, state.b, state.m_W, state.v_W, state.m_b, state.v_b):
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path,
                    expected_dim: int | None = None) -> tuple[ClassifierState, int]:
    """Read a checkpoint; returns (state, stored config hash)."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    header = struct.calcsize("<IIIQQ")
    if len(blob) < 4 + header:
        raise ShapeHeaderMismatch(f"{path}: header cut short")
    version, k, dim, t, config_hash = struct.unpack_from("<IIIQQ", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise BadMagic(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if expected_dim is not None and dim != expected_dim:
        raise ShapeHeaderMismatch(f"{path}: checkpoint dim {dim} does not match "
                                  f"embeddings of dim {expected_dim}")

    shapes = [(k, dim), (k,), (k, dim), (k, dim), (k,), (k,)]
    expected_bytes = sum(int(np.prod(s)) for s in shapes) * 8
    payload = blob[4 + header :]
    if len(payload) != expected_bytes:
        raise ShapeHeaderMismatch(f"{path}: payload holds {len(payload)} bytes, "
                                  f"expected {expected_bytes}")
    tensors = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        tensors.append(np.frombuffer(payload, dtype="<f8", count=count,
                                     offset=offset).reshape(shape).copy())
        offset += count * 8
    W, b, m_W, v_W, m_b, v_b = tensors
    return ClassifierState(W=W, b=b, m_W=m_W, v_W=v_W, m_b=m_b, v_b=v_b, t=t), config_hash
