"""Trial scoring with cosine or PLDA backends, score files and RTF."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embedstore import EmbeddingStore, average, l2_normalize
from .plda import PldaModel
from .trialset import Condition, EnrollmentMap, Label, TrialRecord

log = logging.getLogger(__name__)


class MissingEmbeddingError(KeyError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    model: str
    segment: str
    score: float
    condition: Condition = Condition.OTHER
    label: Label | None = None


@dataclass
class ScoringResult:
    records: list[ScoreRecord]
    errors: list[tuple[int, str]] = field(default_factory=list)


@dataclass(frozen=True)
class RtfReport:
    processing_seconds: float
    audio_seconds: float
    rtf: float


def compute_rtf(processing_seconds: float, audio_seconds: float) -> RtfReport:
    if not audio_seconds > 0:
        raise ValueError("audio duration must be positive")
    if processing_seconds < 0:
        raise ValueError("processing time must be non-negative")
    return RtfReport(processing_seconds, audio_seconds, processing_seconds / audio_seconds)


def cosine_score(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch {a.shape} vs {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0 or nb == 0:
        raise ValueError("cosine of a zero vector")
    # norms multiplied in a fixed, argument-independent way keeps it symmetric
    denom = max(na, nb) * min(na, nb)
    return float(np.clip(np.dot(a, b) / denom, -1.0, 1.0))


def model_embedding(model: str, enroll_store: EmbeddingStore, enroll_map: EnrollmentMap,
                    normalize: bool = True) -> np.ndarray:
    segs = enroll_map.entries.get(model)
    if not segs:
        raise MissingEmbeddingError(f"model {model!r} not in enrollment map")
    vecs = []
    for seg in segs:
        if seg.id not in enroll_store:
            raise MissingEmbeddingError(f"enrollment segment {seg.id!r} of {model!r} has no embedding")
        vecs.append(enroll_store[seg.id])
    avg = average(vecs)
    return l2_normalize(avg) if normalize else avg


def score_trials(enroll_store: EmbeddingStore, test_store: EmbeddingStore,
                 enroll_map: EnrollmentMap, trials: list[TrialRecord],
                 backend: str | PldaModel = "cosine",
                 keys: dict | None = None, strict: bool = False,
                 workers: int = 1) -> ScoringResult:
    """Score every trial; output order follows ``trials``.

    ``backend`` is ``"cosine"`` or a :class:`PldaModel`. Multi-enrollment
    models are averaged (and length-normalised for cosine). Trials with a
    missing embedding are reported in ``errors`` and left out, unless
    ``strict`` is set, in which case the first one raises.
    """
    use_plda = isinstance(backend, PldaModel)
    if not use_plda and backend != "cosine":
        raise ValueError(f"unknown backend {backend!r}")

    # model vectors are resolved once, up front, so workers only read
    model_vecs: dict[str, np.ndarray | str] = {}
    for t in trials:
        if t.model not in model_vecs:
            try:
                model_vecs[t.model] = model_embedding(t.model, enroll_store, enroll_map,
                                                      normalize=not use_plda)
            except MissingEmbeddingError as exc:
                model_vecs[t.model] = str(exc.args[0])

    def one(t: TrialRecord) -> float | str:
        mvec = model_vecs[t.model]
        if isinstance(mvec, str):
            return mvec
        if t.segment.id not in test_store:
            return f"test segment {t.segment.id!r} has no embedding"
        tvec = test_store[t.segment.id]
        if use_plda:
            return backend.llr(mvec, tvec)
        return cosine_score(mvec, tvec)

    def run(lo: int, hi: int, out: list) -> None:
        for i in range(lo, hi):
            out[i] = one(trials[i])

    slots: list = [None] * len(trials)
    if workers <= 1 or len(trials) < 2:
        run(0, len(trials), slots)
    else:
        step = -(-len(trials) // workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run, lo, min(lo + step, len(trials)), slots)
                       for lo in range(0, len(trials), step)]
            for f in futures:
                f.result()

    records, errors = [], []
    for i, (t, val) in enumerate(zip(trials, slots)):
        if isinstance(val, str):
            if strict:
                raise MissingEmbeddingError(f"trial {i} ({t.model}, {t.segment.id}): {val}")
            errors.append((i, val))
            continue
        label = keys.get((t.model, t.segment.id)) if keys is not None else None
        records.append(ScoreRecord(t.model, t.segment.id, val, t.condition, label))
    if errors:
        log.warning("%d of %d trials skipped for missing embeddings", len(errors), len(trials))
    return ScoringResult(records, errors)


def format_scores(records, precision: int = 6) -> str:
    return "".join(f"{r.model}\t{r.segment}\t{r.score:.{precision}f}\n" for r in records)


def parse_scores(text: str) -> list[tuple[str, str, float]]:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"line {lineno}: expected model, segment, score")
        try:
            score = float(fields[2])
        except ValueError:
            raise ValueError(f"line {lineno}: bad score {fields[2]!r}") from None
        if not np.isfinite(score):
            raise ValueError(f"line {lineno}: non-finite score")
        rows.append((fields[0], fields[1], score))
    return rows


def attach(rows, trials=None, keys=None) -> list[ScoreRecord]:
    """Rebuild ScoreRecords from score-file rows, taking conditions from the
    trial list and labels from the key when given."""
    cond = {(t.model, t.segment.id): t.condition for t in trials} if trials is not None else {}
    out = []
    for model, seg, score in rows:
        out.append(ScoreRecord(model, seg, score, cond.get((model, seg), Condition.OTHER),
                               keys.get((model, seg)) if keys is not None else None))
    return out
