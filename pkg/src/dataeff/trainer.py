"""A small dense classifier trained from scratch on the focal cosine loss.

The network is ``x -> f (ReLU dense stack) -> psi (dense, L2-normalised)
-> g (dense) -> softmax``.  Training is plain minibatch SGD with inverted
dropout on the hidden activations of ``f`` and an EMA shadow of the weights
that is meant to be used at inference.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyClassError,
    NonFiniteLossError,
    ZeroVectorError,
)
from .image import AugmentPolicy, ImageU8, apply_augment, lsb_swap_corpus, to_input
from .losses import (
    LossHyperparams,
    focal_cosine_grad,
    focal_cosine_loss,
    normalize_l2_backward,
    one_hot,
    softmax,
)

# --------------------------------------------------------------------------
# Parameters
# --------------------------------------------------------------------------


@dataclass
class Dense:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight + self.bias


@dataclass
class ModelParams:
    f_layers: list[Dense]
    psi: Dense
    g: Dense

    def __post_init__(self):
        prev = None
        for layer in self.layers():
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[1],):
                raise DimensionMismatchError("dense layer weight/bias shapes disagree")
            if prev is not None and layer.weight.shape[0] != prev:
                raise DimensionMismatchError("layer shapes do not chain")
            prev = layer.weight.shape[1]
        if self.g.weight.shape != (prev, prev):
            raise DimensionMismatchError("softmax head must map C -> C")

    def layers(self) -> list[Dense]:
        return [*self.f_layers, self.psi, self.g]

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases in a fixed order (layer by layer)."""
        out = []
        for layer in self.layers():
            out += [layer.weight, layer.bias]
        return out

    def names(self) -> list[str]:
        labels = [f"f{i}" for i in range(len(self.f_layers))] + ["psi", "g"]
        return [f"{lab}.{part}" for lab in labels for part in ("weight", "bias")]

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "ModelParams":
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.layers()):
            raise DimensionMismatchError("wrong number of parameter arrays")
        for new, old in zip(arrays, self.arrays()):
            if np.shape(new) != old.shape:
                raise DimensionMismatchError(f"array shape {np.shape(new)} != {old.shape}")
        dense = [Dense(np.asarray(arrays[i], dtype=np.float64),
                       np.asarray(arrays[i + 1], dtype=np.float64))
                 for i in range(0, len(arrays), 2)]
        return ModelParams(dense[:-2], dense[-2], dense[-1])

    def copy(self) -> "ModelParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    @property
    def input_dim(self) -> int:
        return self.layers()[0].weight.shape[0]

    @property
    def num_classes(self) -> int:
        return self.g.weight.shape[1]


def init_params(input_dim: int, num_classes: int, hidden: Sequence[int] = (128, 64),
                rng: Union[int, np.random.Generator] = 0) -> ModelParams:
    """He-normal weights, zero biases except a small random psi bias.

    The psi bias keeps the psi output nonzero almost surely even when every
    ReLU unit below it is inactive or dropped.
    """
    rng = np.random.default_rng(rng)
    sizes = [input_dim, *hidden, num_classes, num_classes]
    dense = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
        dense.append(Dense(w, np.zeros(fan_out)))
    dense[-2].bias = 0.01 * rng.standard_normal(num_classes)
    return ModelParams(dense[:-2], dense[-2], dense[-1])


# --------------------------------------------------------------------------
# Forward / backward
# --------------------------------------------------------------------------


def _check_inputs(params: ModelParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.input_dim or x.ndim not in (1, 2):
        raise DimensionMismatchError(
            f"input of shape {x.shape} does not match input dimension {params.input_dim}")
    return x


def _forward_cache(params: ModelParams, x: np.ndarray, dropout_rate: float,
                   rng: Optional[np.random.Generator]) -> dict:
    h = x
    pre_acts, masks, acts = [], [], [x]
    for layer in params.f_layers:
        a = layer(h)
        h = np.maximum(a, 0.0)
        mask = None
        if rng is not None and dropout_rate > 0:
            mask = (rng.random(h.shape) >= dropout_rate) / (1.0 - dropout_rate)
            h = h * mask
        pre_acts.append(a)
        masks.append(mask)
        acts.append(h)
    psi_raw = params.psi(h)
    norm = np.linalg.norm(psi_raw, axis=-1, keepdims=True)
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ZeroVectorError("psi embedding has zero or non-finite norm")
    e = psi_raw / norm
    logits = params.g(e)
    return dict(pre_acts=pre_acts, masks=masks, acts=acts, psi_raw=psi_raw, e=e,
                logits=logits, p_hat=softmax(logits))


def forward(params: ModelParams, x, *, dropout_rate: float = 0.0,
            rng: Optional[np.random.Generator] = None):
    """Run the network on one input vector or a batch.

    Dropout is applied only when ``rng`` is given (train mode).

    Returns:
        ``(psi_raw, e, p_hat)``: the raw psi output, its L2-normalised
        embedding and the softmax head's probabilities.
    """
    x = _check_inputs(params, x)
    cache = _forward_cache(params, x, dropout_rate, rng)
    return cache["psi_raw"], cache["e"], cache["p_hat"]


def loss_and_grad(params: ModelParams, x, y, hp: LossHyperparams = LossHyperparams(),
                  dropout_rate: float = 0.0, rng: Optional[np.random.Generator] = None):
    """Mean focal cosine loss over the batch and its gradient for every weight."""
    x = _check_inputs(params, np.atleast_2d(x))
    y = np.atleast_1d(np.asarray(y))
    if y.shape != (x.shape[0],):
        raise DimensionMismatchError(f"{y.shape[0]} labels for {x.shape[0]} inputs")
    cache = _forward_cache(params, x, dropout_rate, rng)
    losses = focal_cosine_loss(y, cache["e"], cache["p_hat"], hp)
    mean_loss = float(np.mean(losses))
    if not math.isfinite(mean_loss):
        raise NonFiniteLossError(f"loss is {mean_loss}")
    n = x.shape[0]
    _, grad_logits = focal_cosine_grad(y, cache["psi_raw"], cache["logits"], hp)
    grad_logits = grad_logits / n
    grads: list[np.ndarray] = []
    e = cache["e"]
    grads_g = [e.T @ grad_logits, grad_logits.sum(axis=0)]
    grad_e = -one_hot(y, params.num_classes) / n + grad_logits @ params.g.weight.T
    grad_psi_raw = normalize_l2_backward(cache["psi_raw"], grad_e)
    h = cache["acts"][-1]
    grads_psi = [h.T @ grad_psi_raw, grad_psi_raw.sum(axis=0)]
    grad_h = grad_psi_raw @ params.psi.weight.T
    for i in reversed(range(len(params.f_layers))):
        if cache["masks"][i] is not None:
            grad_h = grad_h * cache["masks"][i]
        grad_a = grad_h * (cache["pre_acts"][i] > 0)
        grads = [cache["acts"][i].T @ grad_a, grad_a.sum(axis=0)] + grads
        grad_h = grad_a @ params.f_layers[i].weight.T
    grads += grads_psi + grads_g
    return mean_loss, params.with_arrays(grads)


def train_step(params: ModelParams, inputs, labels, cfg: "TrainConfig",
               rng: Optional[np.random.Generator] = None):
    """One SGD step; returns ``(new_params, pre-step mean loss)``.

    ``rng`` drives the dropout masks; without it the step runs dropout-free.
    """
    if len(inputs) == 0:
        raise DimensionMismatchError("empty batch")
    labels = np.asarray(labels)
    if np.any(labels < 0) or np.any(labels >= params.num_classes):
        raise DimensionMismatchError("label outside [0, C)")
    try:
        loss, grads = loss_and_grad(params, inputs, labels, cfg.loss, cfg.dropout_rate, rng)
    except ZeroVectorError as exc:
        raise NonFiniteLossError(str(exc)) from exc
    lr = cfg.learning_rate
    new = params.with_arrays([w - lr * g for w, g in zip(params.arrays(), grads.arrays())])
    return new, loss


# --------------------------------------------------------------------------
# EMA
# --------------------------------------------------------------------------


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def _split(a):
    c = 134217729.0 * a  # 2**27 + 1
    hi = c - (c - a)
    return hi, a - hi


def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def _ema_step(hi, lo, theta, alpha):
    # shadow + residual  <-  theta + alpha * (shadow + residual - theta),
    # carried in double-double so long runs do not accumulate rounding drift
    d_hi, d_err = _two_sum(hi, -theta)
    d_hi, d_lo = _two_sum(d_hi, d_err + lo)
    m_hi, m_err = _two_prod(alpha, d_hi)
    m_lo = m_err + alpha * d_lo
    s_hi, s_err = _two_sum(theta, m_hi)
    return _two_sum(s_hi, s_err + m_lo)


@dataclass
class EmaState:
    """EMA shadow of the weights.

    ``residual`` holds the low-order part of a double-double accumulator;
    ``shadow`` alone is the usable parameter set.
    """

    shadow: ModelParams
    decay: float = 0.999
    step_count: int = 0
    residual: Optional[ModelParams] = None

    def __post_init__(self):
        if not 0.0 <= self.decay < 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1), got {self.decay}")
        if self.residual is None:
            self.residual = self.shadow.with_arrays(
                [np.zeros_like(a) for a in self.shadow.arrays()])

    @classmethod
    def start(cls, params: ModelParams, decay: float = 0.999) -> "EmaState":
        return cls(shadow=params.copy(), decay=decay)


def ema_update(ema: EmaState, params: ModelParams, decay: Optional[float] = None) -> EmaState:
    """``shadow <- a * shadow + (1 - a) * params``; ``decay`` overrides ``ema.decay`` once."""
    alpha = ema.decay if decay is None else decay
    if not 0.0 <= alpha < 1.0:
        raise ValueError(f"EMA decay must lie in [0, 1), got {alpha}")
    his, los = [], []
    for hi, lo, theta in zip(ema.shadow.arrays(), ema.residual.arrays(), params.arrays()):
        if hi.shape != theta.shape:
            raise DimensionMismatchError(f"EMA shape {hi.shape} != params shape {theta.shape}")
        new_hi, new_lo = _ema_step(hi, lo, theta, alpha)
        his.append(new_hi)
        los.append(new_lo)
    return EmaState(shadow=ema.shadow.with_arrays(his), decay=ema.decay,
                    step_count=ema.step_count + 1, residual=ema.residual.with_arrays(los))


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 30
    batch_size: int = 32
    dropout_rate: float = 0.1
    seed: int = 0
    loss: LossHyperparams = field(default_factory=LossHyperparams)
    augment: AugmentPolicy = field(default_factory=lambda: AugmentPolicy(ops_per_image=0))
    lsb_swap: Optional[int] = None  # None = off, else k for online in-batch swaps
    hidden_sizes: tuple[int, ...] = (128, 64)
    ema_decay: float = 0.999
    ema_warmup: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.lsb_swap is not None and not 0 <= self.lsb_swap <= 8:
            raise ValueError(f"lsb_swap k must lie in [0, 8], got {self.lsb_swap}")
        if any(h < 1 for h in self.hidden_sizes):
            raise ValueError("hidden sizes must be positive")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    mean_loss: float
    train_accuracy: float


def _as_matrix(samples) -> np.ndarray:
    if len(samples) and isinstance(samples[0], ImageU8):
        return np.stack([to_input(img) for img in samples])
    return np.asarray(samples, dtype=np.float64)


def accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray) -> float:
    _, _, p_hat = forward(params, x)
    return float(np.mean(np.argmax(p_hat, axis=-1) == y))


def train(samples, labels, cfg: TrainConfig = TrainConfig(), num_classes: Optional[int] = None):
    """Train from scratch.

    Args:
        samples: a sequence of ``ImageU8`` (augmentation and LSB swapping
            apply) or an ``(N, D)`` array of ready-made feature vectors.
        labels: integer class per sample.
        cfg: training configuration; together with the data it fully
            determines the result.
        num_classes: defaults to ``max(labels) + 1``.

    Returns:
        ``(params, ema, log)`` with one ``EpochLog`` per epoch.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if len(samples) != n or n == 0:
        raise DimensionMismatchError(f"{len(samples)} samples for {n} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    counts = np.bincount(labels, minlength=num_classes)
    if len(counts) > num_classes or np.any(counts == 0):
        raise EmptyClassError(f"every class in [0, {num_classes}) needs an example")
    images = isinstance(samples[0], ImageU8)
    clean = _as_matrix(samples)
    if clean.ndim != 2:
        raise DimensionMismatchError("samples must share one input dimension")

    init_seq, order_seq, aug_seq, drop_seq, lsb_seq = np.random.SeedSequence(cfg.seed).spawn(5)
    params = init_params(clean.shape[1], num_classes, cfg.hidden_sizes, np.random.default_rng(init_seq))
    ema = EmaState.start(params, cfg.ema_decay)
    order_rng = np.random.default_rng(order_seq)
    aug_rng = np.random.default_rng([cfg.augment.seed, *aug_seq.generate_state(2)])
    drop_rng = np.random.default_rng(drop_seq)
    lsb_rng = np.random.default_rng(lsb_seq)
    augmenting = images and cfg.augment.ops_per_image > 0
    swapping = images and cfg.lsb_swap is not None

    log = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if augmenting or swapping:
                batch = [samples[i] for i in idx]
                if swapping and len(batch) >= 2:
                    batch = lsb_swap_corpus(batch, cfg.lsb_swap, int(lsb_rng.integers(2**63)))
                if augmenting:
                    seeds = aug_rng.integers(2**63, size=len(batch))
                    batch = [apply_augment(img, dataclasses.replace(cfg.augment, seed=int(s)))
                             for img, s in zip(batch, seeds)]
                x = np.stack([to_input(img) for img in batch])
            else:
                x = clean[idx]
            params, loss = train_step(params, x, labels[idx], cfg, drop_rng)
            total += loss * len(idx)
            decay = cfg.ema_decay
            if cfg.ema_warmup:
                decay = min(decay, (1.0 + ema.step_count) / (10.0 + ema.step_count))
            ema = ema_update(ema, params, decay)
        log.append(EpochLog(epoch + 1, total / n, accuracy(params, clean, labels)))
    return params, ema, log


def format_log_csv(log: Iterable[EpochLog]) -> str:
    lines = ["epoch,mean_loss,train_accuracy"]
    lines += [f"{r.epoch},{r.mean_loss!r},{r.train_accuracy!r}" for r in log]
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Inference
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    item_id: str
    probs: tuple[float, ...]
    predicted_class: int
    confidence: float

    @classmethod
    def from_probs(cls, item_id: str, probs) -> "PredictionRecord":
        probs = np.asarray(probs, dtype=np.float64)
        # np.argmax returns the lowest index among ties
        top = int(np.argmax(probs))
        return cls(str(item_id), tuple(float(p) for p in probs), top, float(probs[top]))


def _resolve(model) -> ModelParams:
    return model.shadow if isinstance(model, EmaState) else model


def predict(model, items) -> list[PredictionRecord]:
    """Dropout-free predictions for ``(item_id, input)`` pairs.

    ``model`` is a ``ModelParams`` or an ``EmaState`` (its shadow is used).
    Inputs are ``ImageU8`` or feature vectors.  Each item is run on its own
    so its record does not depend on what else is in the list (BLAS rounding
    varies with batch shape).
    """
    params = _resolve(model)
    items = list(items)
    if not items:
        return []
    ids = [item_id for item_id, _ in items]
    x = _check_inputs(params, np.atleast_2d(_as_matrix([inp for _, inp in items])))
    return [PredictionRecord.from_probs(i, forward(params, row[None])[2][0])
            for i, row in zip(ids, x)]


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"DATAEFF-CHECKPOINT 1\n"


@dataclass
class Checkpoint:
    params: ModelParams
    ema: EmaState
    config: dict
    meta: dict


def save_checkpoint(path, params: ModelParams, ema: EmaState, config: dict, meta: dict) -> None:
    """Write weights, EMA state, config and metadata as one file.

    Layout: the magic line, one line of JSON header (sorted keys) listing
    every array's name and shape in order, then the arrays' samples as
    contiguous little-endian float64, C order.
    """
    arrays = [("params/" + name, a) for name, a in zip(params.names(), params.arrays())]
    arrays += [("ema/" + name, a) for name, a in zip(params.names(), ema.shadow.arrays())]
    arrays += [("ema_residual/" + name, a) for name, a in zip(params.names(), ema.residual.arrays())]
    header = {
        "config": config,
        "meta": meta,
        "hidden_layers": len(params.f_layers),
        "ema": {"decay": ema.decay, "step_count": ema.step_count},
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint")
    end = blob.index(b"\n", len(CHECKPOINT_MAGIC))
    header = json.loads(blob[len(CHECKPOINT_MAGIC):end])
    offset = end + 1
    loaded = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        chunk = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        loaded[entry["name"]] = chunk.reshape(entry["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")

    def group(prefix):
        arrays = [v for k, v in loaded.items() if k.startswith(prefix + "/")]
        dense = [Dense(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
        return ModelParams(dense[:-2], dense[-2], dense[-1])

    ema = EmaState(shadow=group("ema"), decay=header["ema"]["decay"],
                   step_count=header["ema"]["step_count"], residual=group("ema_residual"))
    return Checkpoint(group("params"), ema, header["config"], header["meta"])
