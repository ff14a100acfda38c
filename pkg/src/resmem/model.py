"""One-hidden-layer softmax classifier used as the base predictor.

The hidden ReLU activation vector serves as the example embedding for
neighbor search; ``forward`` returns it alongside the logits. Training is
plain minibatch SGD with momentum, bit-deterministic given the seed.

Checkpoint layout (RMLP v1, little-endian):

    magic "RMLP" | version u32 | d_in u64 | h u64 | c u64
    w1 (d_in*h f64) | b1 (h f64) | w2 (h*c f64) | b2 (c f64)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from resmem.errors import (
    BadMagic,
    NonFiniteLoss,
    NonFiniteValue,
    ShapeMismatch,
    VersionUnsupported,
)

MAGIC = b"RMLP"
VERSION = 1

_HEADER = struct.Struct("<4sIQQQ")


@dataclass
class MlpParams:
    w1: np.ndarray  # (d_in, h)
    b1: np.ndarray  # (h,)
    w2: np.ndarray  # (h, c)
    b2: np.ndarray  # (c,)

    @property
    def d_in(self) -> int:
        return self.w1.shape[0]

    @property
    def h(self) -> int:
        return self.w1.shape[1]

    @property
    def c(self) -> int:
        return self.w2.shape[1]

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 0.1
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ShapeMismatch("epochs must be >= 0")
        if self.batch_size < 1:
            raise ShapeMismatch("batch_size must be >= 1")
        if self.learning_rate <= 0.0:
            raise ShapeMismatch("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ShapeMismatch("momentum must lie in [0, 1)")


def init_mlp(d_in: int, h: int, c: int, seed: int = 0) -> MlpParams:
    """Glorot-uniform weights (bound sqrt(6 / (fan_in + fan_out))), zero biases."""
    if d_in < 1 or h < 1:
        raise ShapeMismatch("d_in and h must be >= 1")
    if c < 2:
        raise ShapeMismatch("c must be >= 2")
    rng = np.random.default_rng(seed)
    lim1 = np.sqrt(6.0 / (d_in + h))
    lim2 = np.sqrt(6.0 / (h + c))
    return MlpParams(
        w1=rng.uniform(-lim1, lim1, size=(d_in, h)),
        b1=np.zeros(h),
        w2=rng.uniform(-lim2, lim2, size=(h, c)),
        b2=np.zeros(c),
    )


def forward(p: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Hidden ReLU activations and logits for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.d_in,):
        raise ShapeMismatch(f"input shape {x.shape} != ({p.d_in},)")
    hidden = np.maximum(x @ p.w1 + p.b1, 0.0)
    logits = hidden @ p.w2 + p.b2
    return hidden, logits


def forward_batch(p: MlpParams, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Row-wise forward pass; returns (hidden (n, h), logits (n, c))."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.d_in:
        raise ShapeMismatch(f"input shape {X.shape} incompatible with d_in={p.d_in}")
    hidden = np.maximum(X @ p.w1 + p.b1, 0.0)
    logits = hidden @ p.w2 + p.b2
    return hidden, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grad(
    p: MlpParams, X: np.ndarray, y: np.ndarray
) -> Tuple[float, MlpParams]:
    """Mean softmax cross-entropy over the batch and its exact gradients."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ShapeMismatch("batch must be nonempty")
    if y.size and (y.min() < 0 or y.max() >= p.c):
        raise ShapeMismatch("labels out of range")
    b = X.shape[0]

    hidden = np.maximum(X @ p.w1 + p.b1, 0.0)
    logits = hidden @ p.w2 + p.b2
    log_probs = _log_softmax(logits)
    loss = -log_probs[np.arange(b), y].mean()

    dlogits = np.exp(log_probs)
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b

    gw2 = hidden.T @ dlogits
    gb2 = dlogits.sum(axis=0)
    dhidden = dlogits @ p.w2.T
    dhidden[hidden <= 0.0] = 0.0  # ReLU subgradient at 0 taken as 0
    gw1 = X.T @ dhidden
    gb1 = dhidden.sum(axis=0)
    return float(loss), MlpParams(gw1, gb1, gw2, gb2)


def train_sgd(
    p: MlpParams, X: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> Tuple[MlpParams, List[float]]:
    """Minibatch SGD with momentum; reshuffles each epoch from cfg.seed.

    Returns the trained parameters and the mean per-example loss per epoch.
    Raises NonFiniteLoss (with the epoch index) if the loss diverges.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[1] != p.d_in:
        raise ShapeMismatch(f"feature dim {X.shape[1]} != d_in {p.d_in}")
    n = X.shape[0]
    p = p.copy()
    vel = MlpParams(
        np.zeros_like(p.w1), np.zeros_like(p.b1),
        np.zeros_like(p.w2), np.zeros_like(p.b2),
    )
    rng = np.random.default_rng(cfg.seed)
    trace: List[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, g = loss_and_grad(p, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss diverged at epoch {epoch}")
            epoch_loss += loss * idx.shape[0]
            for name in ("w1", "b1", "w2", "b2"):
                v = getattr(vel, name)
                v *= cfg.momentum
                v -= cfg.learning_rate * getattr(g, name)
                getattr(p, name).__iadd__(v)
        trace.append(epoch_loss / n)
    return p, trace


def save_mlp(p: MlpParams, path) -> None:
    """Write an RMLP v1 checkpoint."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, p.d_in, p.h, p.c))
        for arr in (p.w1, p.b1, p.w2, p.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_mlp(path) -> MlpParams:
    """Read an RMLP v1 checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise BadMagic(f"{path}: file shorter than the RMLP header")
    magic, version, d_in, h, c = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(f"{path}: version {version} not supported")
    counts = (d_in * h, h, h * c, c)
    expected = _HEADER.size + 8 * sum(counts)
    if len(raw) != expected:
        raise ShapeMismatch(f"{path}: file holds {len(raw)} bytes, header declares {expected}")
    off = _HEADER.size
    arrs = []
    for cnt in counts:
        arrs.append(np.frombuffer(raw, dtype="<f8", count=cnt, offset=off).copy())
        off += 8 * cnt
    p = MlpParams(
        w1=arrs[0].reshape(d_in, h), b1=arrs[1],
        w2=arrs[2].reshape(h, c), b2=arrs[3],
    )
    for arr in (p.w1, p.b1, p.w2, p.b2):
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"{path}: checkpoint contains NaN or Inf")
    return p
