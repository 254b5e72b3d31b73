"""Flat ``key = value`` training configuration files.

Blank lines and ``#`` comments are ignored.  Recognised keys, with the
defaults used when a key is absent::

    learning_rate = 0.05      epochs = 30            batch_size = 32
    dropout_rate = 0.1        seed = 0               hidden_sizes = 128,64
    gamma = 2.0               lambda = 0.1           strict_paper_sign = false
    ops_per_image = 0         magnitude = 0.5        augment_seed = 0
    lsb_swap = off            ema_decay = 0.999      ema_warmup = true

``lsb_swap`` is ``off`` or the number of low bits exchanged between random
pairs inside each training batch.
"""

from __future__ import annotations

from typing import Any, Callable, Mapping

from .errors import ConfigError
from .image import AugmentPolicy
from .losses import LossHyperparams
from .trainer import TrainConfig


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_lsb(text: str):
    low = text.strip().lower()
    return None if low in ("off", "none", "") else int(low)


def _parse_sizes(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


_PARSERS: dict[str, Callable[[str], Any]] = {
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "dropout_rate": float,
    "seed": int,
    "gamma": float,
    "lambda": float,
    "strict_paper_sign": _parse_bool,
    "ops_per_image": int,
    "magnitude": float,
    "augment_seed": int,
    "lsb_swap": _parse_lsb,
    "hidden_sizes": _parse_sizes,
    "ema_decay": float,
    "ema_warmup": _parse_bool,
}

TRAIN_KEYS = tuple(_PARSERS)


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def train_config_from_mapping(mapping: Mapping[str, Any]) -> TrainConfig:
    """Build a TrainConfig from string or already-typed values."""
    values = dict(train_config_to_mapping(TrainConfig()))
    for key, value in mapping.items():
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}")
        try:
            values[key] = _PARSERS[key](value) if isinstance(value, str) else value
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    try:
        return TrainConfig(
            learning_rate=float(values["learning_rate"]),
            epochs=int(values["epochs"]),
            batch_size=int(values["batch_size"]),
            dropout_rate=float(values["dropout_rate"]),
            seed=int(values["seed"]),
            loss=LossHyperparams(gamma=float(values["gamma"]), lam=float(values["lambda"]),
                                 strict_paper_sign=bool(values["strict_paper_sign"])),
            augment=AugmentPolicy(ops_per_image=int(values["ops_per_image"]),
                                  magnitude=float(values["magnitude"]),
                                  seed=int(values["augment_seed"])),
            lsb_swap=None if values["lsb_swap"] is None else int(values["lsb_swap"]),
            hidden_sizes=tuple(int(h) for h in values["hidden_sizes"]),
            ema_decay=float(values["ema_decay"]),
            ema_warmup=bool(values["ema_warmup"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def train_config_to_mapping(cfg: TrainConfig) -> dict[str, Any]:
    """JSON-friendly flat view of a TrainConfig, keyed like the config file."""
    return {
        "learning_rate": cfg.learning_rate,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "dropout_rate": cfg.dropout_rate,
        "seed": cfg.seed,
        "gamma": cfg.loss.gamma,
        "lambda": cfg.loss.lam,
        "strict_paper_sign": cfg.loss.strict_paper_sign,
        "ops_per_image": cfg.augment.ops_per_image,
        "magnitude": cfg.augment.magnitude,
        "augment_seed": cfg.augment.seed,
        "lsb_swap": cfg.lsb_swap,
        "hidden_sizes": list(cfg.hidden_sizes),
        "ema_decay": cfg.ema_decay,
        "ema_warmup": cfg.ema_warmup,
    }


def format_config_text(mapping: Mapping[str, Any]) -> str:
    def fmt(value):
        if value is None:
            return "off"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, (list, tuple)):
            return ",".join(str(v) for v in value)
        return repr(value) if isinstance(value, float) else str(value)

    return "".join(f"{key} = {fmt(value)}\n" for key, value in mapping.items())
