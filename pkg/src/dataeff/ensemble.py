"""Thresholded plurality voting across models and TTA soft voting within one."""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .errors import DimensionMismatchError, EmptyModelSetError, MisalignedItemsError
from .image import AugmentPolicy, ImageU8, apply_augment
from .trainer import PredictionRecord, predict

TIE_BREAK_CASCADE = ("base-first", "max-summed-confidence", "lowest-index")


@dataclass(frozen=True)
class EnsembleConfig:
    base_model_id: str
    threshold: float = 0.7
    tie_break: tuple[str, ...] = TIE_BREAK_CASCADE

    def __post_init__(self):
        if not 0.0 <= self.threshold:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        unknown = set(self.tie_break) - set(TIE_BREAK_CASCADE)
        if unknown:
            raise ValueError(f"unknown tie-break rules {sorted(unknown)}")


class Vote(NamedTuple):
    model_id: str
    predicted_class: int
    confidence: float


@dataclass(frozen=True)
class VoteSet:
    item_id: str
    votes: tuple[Vote, ...]

    def __post_init__(self):
        if not self.votes:
            raise EmptyModelSetError(f"no votes for item {self.item_id!r}")
        ids = [v.model_id for v in self.votes]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate model ids among votes for {self.item_id!r}")


class FusedLabel(NamedTuple):
    item_id: str
    predicted_class: int
    source: str  # "base" or "vote"


def mode_with_tiebreak(votes: VoteSet, cfg: EnsembleConfig) -> int:
    """Most frequent class; ties resolved by the rules in ``cfg.tie_break``.

    With the default cascade a tie goes to the base model's class if it is
    among the tied classes, then to the tied class with the largest summed
    confidence, then to the lowest class index.  Confidences are summed as
    exact rationals, so the comparison is free of rounding and vote order.
    """
    counts = Counter(v.predicted_class for v in votes.votes)
    top = max(counts.values())
    tied = sorted(c for c, k in counts.items() if k == top)
    for rule in cfg.tie_break:
        if len(tied) == 1:
            break
        if rule == "base-first":
            base = [v.predicted_class for v in votes.votes if v.model_id == cfg.base_model_id]
            if base and base[0] in tied:
                tied = [base[0]]
        elif rule == "max-summed-confidence":
            sums = {c: sum(Fraction(v.confidence) for v in votes.votes if v.predicted_class == c)
                    for c in tied}
            best = max(sums.values())
            tied = [c for c in tied if sums[c] == best]
        else:
            tied = tied[:1]
    return tied[0]


def plurality_vote(models: Mapping[str, Sequence[PredictionRecord]],
                   cfg: EnsembleConfig) -> list[FusedLabel]:
    """Keep the base model's answer when it is confident, otherwise vote.

    For every item, if the base model's confidence is at least
    ``cfg.threshold`` its prediction stands (source ``"base"``); otherwise the
    hard votes of every model, the base included, are fused with
    ``mode_with_tiebreak`` (source ``"vote"``).  Items are matched by id at
    every position; any disagreement is an error.
    """
    if not models:
        raise EmptyModelSetError("no models to ensemble")
    if cfg.base_model_id not in models:
        raise KeyError(f"base model {cfg.base_model_id!r} is not among the models")
    base = models[cfg.base_model_id]
    n = len(base)
    for model_id, records in models.items():
        if len(records) != n:
            raise MisalignedItemsError(f"model {model_id!r} has {len(records)} items, base has {n}")
    out = []
    for j, base_rec in enumerate(base):
        for model_id, records in models.items():
            if records[j].item_id != base_rec.item_id:
                raise MisalignedItemsError(
                    f"item {j}: {model_id!r} has {records[j].item_id!r}, base has {base_rec.item_id!r}")
        if base_rec.confidence >= cfg.threshold:
            out.append(FusedLabel(base_rec.item_id, base_rec.predicted_class, "base"))
            continue
        votes = VoteSet(base_rec.item_id, tuple(
            Vote(model_id, records[j].predicted_class, records[j].confidence)
            for model_id, records in models.items()))
        out.append(FusedLabel(base_rec.item_id, mode_with_tiebreak(votes, cfg), "vote"))
    return out


def soft_vote(prob_sets) -> np.ndarray:
    """Elementwise mean of one item's probability vectors.

    Computed as ``min + mean(p - min)`` with the offsets summed in sorted
    order, so the result is exactly idempotent on identical inputs and
    exactly invariant to the order of the inputs.
    """
    prob_sets = [np.asarray(p, dtype=np.float64) for p in prob_sets]
    if not prob_sets:
        raise EmptyModelSetError("soft_vote needs at least one probability vector")
    if len({p.shape for p in prob_sets}) != 1 or prob_sets[0].ndim != 1:
        raise DimensionMismatchError("probability vectors must be 1-D and of equal length")
    stack = np.stack(prob_sets)
    low = stack.min(axis=0)
    offsets = np.sort(stack - low, axis=0)
    return low + offsets.sum(axis=0) / len(prob_sets)


def replicate_policies(policy: AugmentPolicy, r: int) -> list[AugmentPolicy]:
    """Per-replicate policies: replicate ``i`` draws its ops from seed ``(policy.seed, i)``."""
    seeds = [int(np.random.SeedSequence([policy.seed, i]).generate_state(1, np.uint64)[0])
             for i in range(r)]
    return [dataclasses.replace(policy, seed=s) for s in seeds]


def tta_predict(model, item: tuple[str, ImageU8], policy: AugmentPolicy,
                r: int = 5) -> PredictionRecord:
    if r < 1:
        raise ValueError(f"replicate count must be >= 1, got {r}")
    return tta_predict_many(model, [item], policy, r)[0]


def tta_predict_many(model, items, policy: AugmentPolicy, r: int = 5) -> list[PredictionRecord]:
    """``tta_predict`` over many items, batching each replicate's forward pass."""
    if r < 1:
        raise ValueError(f"replicate count must be >= 1, got {r}")
    items = list(items)
    if not items:
        return []
    per_replicate = []
    for rep_policy in replicate_policies(policy, r):
        variants = [(item_id, apply_augment(img, rep_policy)) for item_id, img in items]
        per_replicate.append(predict(model, variants))
    return [PredictionRecord.from_probs(item_id, soft_vote([recs[j].probs for recs in per_replicate]))
            for j, (item_id, _) in enumerate(items)]
