"""Cosine loss, focal loss and their combination, with closed-form gradients.

All arithmetic is float64.  Functions accept a single example (1-D vectors,
integer label) or a batch (2-D arrays, integer label array) and return a
scalar or a per-example array accordingly; batch reduction is left to the
caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, ZeroVectorError

LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossHyperparams:
    """Focusing exponent ``gamma`` and combination weight ``lam``.

    ``strict_paper_sign`` flips the focal term to a subtraction, reproducing
    the combined objective exactly as originally printed.  Minimising that
    variant rewards confident mistakes, so it exists for comparison only.
    """

    gamma: float = 2.0
    lam: float = 0.1
    strict_paper_sign: bool = False

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")

    @property
    def focal_weight(self) -> float:
        return -self.lam if self.strict_paper_sign else self.lam


def _as_float(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _labels(y, e: np.ndarray) -> np.ndarray:
    """Validate labels against the class axis of ``e``."""
    y = np.asarray(y)
    if not np.issubdtype(y.dtype, np.integer):
        raise DimensionMismatchError(f"labels must be integers, got {y.dtype}")
    if e.ndim == 1 and y.ndim != 0:
        raise DimensionMismatchError("a single vector needs a scalar label")
    if e.ndim == 2 and y.shape != (e.shape[0],):
        raise DimensionMismatchError(f"{y.shape} labels for a batch of {e.shape[0]}")
    if e.ndim not in (1, 2):
        raise DimensionMismatchError(f"expected 1-D or 2-D input, got {e.ndim}-D")
    num_classes = e.shape[-1]
    if np.any(y < 0) or np.any(y >= num_classes):
        raise DimensionMismatchError(f"label outside [0, {num_classes})")
    return y


def one_hot(y, num_classes: int) -> np.ndarray:
    y = np.asarray(y)
    return (np.arange(num_classes) == y[..., None]).astype(np.float64)


def _pick(e: np.ndarray, y: np.ndarray) -> np.ndarray:
    if e.ndim == 1:
        return e[int(y)]
    return e[np.arange(e.shape[0]), y]


def normalize_l2(v) -> np.ndarray:
    v = _as_float(v)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ZeroVectorError("cannot L2-normalise a zero vector")
    return v / norm


def normalize_l2_backward(v, grad_out) -> np.ndarray:
    """Pull a gradient w.r.t. ``normalize_l2(v)`` back to ``v``.

    The Jacobian of ``v / |v|`` is ``(I - e e^T) / |v|``: the incoming
    gradient is projected onto the tangent space of the unit sphere at ``e``.
    """
    v = _as_float(v)
    grad_out = _as_float(grad_out)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norm == 0):
        raise ZeroVectorError("cannot L2-normalise a zero vector")
    e = v / norm
    radial = np.sum(grad_out * e, axis=-1, keepdims=True)
    return (grad_out - radial * e) / norm


def softmax(logits) -> np.ndarray:
    z = _as_float(logits)
    z = z - np.max(z, axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / np.sum(ez, axis=-1, keepdims=True)


def cosine_loss(y, e):
    """``1 - <onehot(y), e>`` for unit-norm ``e``; lies in [0, 2]."""
    e = _as_float(e)
    y = _labels(y, e)
    return 1.0 - _pick(e, y)


def focal_loss(p, p_hat, gamma: float = 2.0):
    """``-sum_h p_h (1 - p_hat_h)^gamma log p_hat_h`` with ``p_hat`` clamped at 1e-12."""
    p = _as_float(p)
    p_hat = _as_float(p_hat)
    if p.shape != p_hat.shape:
        raise DimensionMismatchError(f"shapes differ: {p.shape} vs {p_hat.shape}")
    q = np.clip(p_hat, LOG_CLAMP, 1.0)
    terms = p * (1.0 - q) ** gamma * np.log(q)
    return -np.sum(terms, axis=-1)


def focal_cosine_loss(y, e, p_hat, h: LossHyperparams = LossHyperparams()):
    e = _as_float(e)
    p_hat = _as_float(p_hat)
    y = _labels(y, e)
    if p_hat.shape != e.shape:
        raise DimensionMismatchError(f"shapes differ: {e.shape} vs {p_hat.shape}")
    target = one_hot(y, e.shape[-1])
    return cosine_loss(y, e) + h.focal_weight * focal_loss(target, p_hat, h.gamma)


def focal_loss_logit_grad(y, logits, gamma: float = 2.0) -> np.ndarray:
    """Gradient of ``focal_loss(onehot(y), softmax(logits), gamma)`` w.r.t. the logits."""
    logits = _as_float(logits)
    y = _labels(y, logits)
    s = softmax(logits)
    sy = _pick(s, y)
    live = sy >= LOG_CLAMP  # below the clamp the loss is locally constant
    q = np.where(live, sy, 1.0)
    om = 1.0 - q
    om_safe = np.where(om > 0, om, 1.0)
    # s_y * dFL/ds_y = gamma (1-s)^(gamma-1) s log s - (1-s)^gamma
    if gamma == 0:
        focus_term = np.zeros_like(q)
    else:
        focus_term = np.where(om > 0, gamma * om_safe ** (gamma - 1.0) * q * np.log(q), 0.0)
    weighted = np.where(live, focus_term - om ** gamma, 0.0)
    # chain through softmax: dFL/dl_j = G (delta_jy - s_j) with G = s_y dFL/ds_y
    target = one_hot(y, logits.shape[-1])
    return np.asarray(weighted)[..., None] * (target - s)


def focal_cosine_grad(y, raw_psi, logits, h: LossHyperparams = LossHyperparams()):
    """Analytic gradients of the focal cosine loss.

    The loss is evaluated as ``focal_cosine_loss(y, normalize_l2(raw_psi),
    softmax(logits), h)``, treating ``raw_psi`` and ``logits`` as independent
    inputs.

    Returns:
        ``(grad_raw_psi, grad_logits)``, same shapes as the inputs.
    """
    raw_psi = _as_float(raw_psi)
    logits = _as_float(logits)
    y = _labels(y, raw_psi)
    if logits.shape != raw_psi.shape:
        raise DimensionMismatchError(f"shapes differ: {raw_psi.shape} vs {logits.shape}")
    target = one_hot(y, raw_psi.shape[-1])
    grad_psi = normalize_l2_backward(raw_psi, -target)
    if h.lam == 0:
        grad_logits = np.zeros_like(logits)
    else:
        grad_logits = h.focal_weight * focal_loss_logit_grad(y, logits, h.gamma)
    return grad_psi, grad_logits
