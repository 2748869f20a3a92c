"""Audio-visual fusion at the embedding level and at the score level."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .embedstore import EmbeddingStore, concat


class FusionError(ValueError):
    pass


class FusionMode(enum.Enum):
    EMBED_CONCAT = "embed-concat"
    SCORE_SUM = "score-sum"


@dataclass(frozen=True)
class FusionSpec:
    mode: FusionMode = FusionMode.EMBED_CONCAT
    weights: tuple[float, ...] = (0.5, 0.5)
    normalize_halves: bool = True

    def __post_init__(self):
        if self.mode is FusionMode.SCORE_SUM:
            check_weights(self.weights)


def check_weights(weights) -> None:
    if not weights:
        raise FusionError("need at least one weight")
    if any(w < 0 or not math.isfinite(w) for w in weights):
        raise FusionError("weights must be finite and non-negative")
    if abs(math.fsum(weights) - 1.0) > 1e-9:
        raise FusionError(f"weights sum to {math.fsum(weights)}, not 1")


def fuse_embeddings(audio_store: EmbeddingStore, face_store: EmbeddingStore,
                    key_pairs: dict[str, tuple[str, str]],
                    spec: FusionSpec = FusionSpec()) -> EmbeddingStore:
    """Concatenate ``audio_store[a]`` and ``face_store[f]`` for every
    ``out_key -> (a, f)``."""
    if spec.mode is not FusionMode.EMBED_CONCAT:
        raise FusionError("fuse_embeddings needs mode EMBED_CONCAT")
    out = EmbeddingStore(audio_store.dim + face_store.dim)
    for out_key, (a_key, f_key) in key_pairs.items():
        if a_key not in audio_store:
            raise FusionError(f"{out_key}: audio key {a_key!r} missing")
        if f_key not in face_store:
            raise FusionError(f"{out_key}: face key {f_key!r} missing")
        try:
            vec = concat(audio_store[a_key], face_store[f_key], spec.normalize_halves)
        except ValueError as exc:
            raise FusionError(f"{out_key}: {exc}") from None
        out.add(out_key, vec)
    return out


def fuse_scores(per_modality) -> list:
    """Weighted per-trial sum of calibrated LLRs.

    ``per_modality`` is a list of ``(weight, records)``; every record list must
    cover the same trials in the same order. Condition and label are taken
    from the first modality.
    """
    if not per_modality:
        raise FusionError("nothing to fuse")
    weights = [w for w, _ in per_modality]
    check_weights(weights)
    lists = [list(recs) for _, recs in per_modality]
    n = len(lists[0])
    if any(len(rs) != n for rs in lists):
        raise FusionError("modalities have different trial counts")
    fused = []
    for i, first in enumerate(lists[0]):
        total = 0.0
        for w, rs in zip(weights, lists):
            r = rs[i]
            if (r.model, r.segment) != (first.model, first.segment):
                raise FusionError(f"trial {i} misaligned: ({first.model}, {first.segment}) "
                                  f"vs ({r.model}, {r.segment})")
            total += w * r.score
        fused.append(replace(first, score=total))
    return fused
