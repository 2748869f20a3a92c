"""Synthetic Gaussian speaker worlds and brute-force reference oracles.

Worlds are drawn with numpy's PCG64 bit generator (``numpy.random.Generator``)
seeded from the spec, so a fixed seed reproduces a world bit for bit.

Layout of a world: speaker ``k`` owns utterances ``spkKKKK-uJJ``. Utterance 0
is the enrollment of model ``mKKKK``; the remaining ones are test segments.
Condition tags are drawn per trial from ``condition_mix`` and written as the
explicit condition column of the trial list.
"""
from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .embedstore import EmbeddingStore, write_store
from .trialset import (Condition, EnrollmentMap, Label, SegmentId, TrialRecord,
                       format_enrollment_map, format_trial_key, format_trial_list)

RNG_ALGORITHM = "numpy.random.PCG64"


class InfeasibleWorldError(ValueError):
    pass


@dataclass(frozen=True)
class SpeakerWorldSpec:
    n_speakers: int = 100
    utts_per_speaker: int = 5
    dim: int = 16
    between_std: float = 1.0
    within_std: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ValueError("n_speakers must be >= 2")
        if self.utts_per_speaker < 1 or self.dim < 1:
            raise ValueError("utts_per_speaker and dim must be positive")
        if self.between_std < 0 or self.within_std < 0:
            raise ValueError("standard deviations must be non-negative")


@dataclass
class SynthWorld:
    spec: SpeakerWorldSpec
    embeddings: list[tuple[str, np.ndarray]]       # (speaker label, vector) per utterance
    utt_ids: list[str]
    enroll_map: EnrollmentMap
    trials: list[TrialRecord]
    keys: dict[tuple[str, str], Label]
    enroll_store: EmbeddingStore
    test_store: EmbeddingStore
    modality2: dict[str, EmbeddingStore] | None = None
    meta: dict = field(default_factory=dict)


def _utt_id(spk: int, j: int) -> str:
    return f"spk{spk:04d}-u{j:02d}"


def _model_id(spk: int) -> str:
    return f"m{spk:04d}"


def _draw_embeddings(rng, spec: SpeakerWorldSpec, between_std, within_std) -> np.ndarray:
    means = rng.normal(0.0, 1.0, size=(spec.n_speakers, spec.dim)) * between_std
    noise = rng.normal(0.0, 1.0, size=(spec.n_speakers, spec.utts_per_speaker, spec.dim))
    return means[:, None, :] + noise * within_std


def _stores(X: np.ndarray) -> tuple[EmbeddingStore, EmbeddingStore]:
    n_spk, n_utt, dim = X.shape
    enroll = EmbeddingStore(dim)
    test = EmbeddingStore(dim)
    for k in range(n_spk):
        enroll.add(_utt_id(k, 0), X[k, 0])
        for j in range(1, n_utt):
            test.add(_utt_id(k, j), X[k, j])
    return enroll, test


def generate_world(spec: SpeakerWorldSpec, target_ratio: float = 0.1, n_trials: int = 1000,
                   condition_mix: dict[Condition, float] | None = None,
                   modality2_std: tuple[float, float] | None = None) -> SynthWorld:
    """Draw a world and a trial list hitting ``target_ratio`` up to rounding.

    ``modality2_std`` = (between_std, within_std) adds a second, independent
    modality (own speaker means, own noise) over the same utterance ids.
    """
    condition_mix = condition_mix or {Condition.SPH_SPH: 1.0}
    if abs(sum(condition_mix.values()) - 1.0) > 1e-9 or any(v < 0 for v in condition_mix.values()):
        raise ValueError("condition_mix fractions must be non-negative and sum to 1")
    if not 0 <= target_ratio <= 1:
        raise ValueError("target_ratio must be in [0, 1]")
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    X = _draw_embeddings(rng, spec, spec.between_std, spec.within_std)

    S, U = spec.n_speakers, spec.utts_per_speaker
    n_tests = U - 1
    n_tgt = int(round(target_ratio * n_trials))
    n_non = n_trials - n_tgt
    if n_tgt > S * n_tests:
        raise InfeasibleWorldError(f"{n_tgt} target trials requested, only {S * n_tests} same-speaker pairs")
    if n_non > S * (S - 1) * n_tests:
        raise InfeasibleWorldError(f"{n_non} nontarget trials requested, only {S * (S - 1) * n_tests} pairs")

    # target pairs index (model k, test j) as k*n_tests + j; nontargets index
    # (model k, other speaker slot o, test j) over the S*(S-1)*n_tests grid
    tgt_idx = np.sort(rng.choice(S * n_tests, size=n_tgt, replace=False)) if n_tgt else np.zeros(0, int)
    non_idx = (np.sort(rng.choice(S * (S - 1) * n_tests, size=n_non, replace=False))
               if n_non else np.zeros(0, int))
    pairs = []
    for i in tgt_idx.tolist():
        k, j = divmod(i, n_tests)
        pairs.append((k, k, j + 1))
    for i in non_idx.tolist():
        k, rest = divmod(i, (S - 1) * n_tests)
        o, j = divmod(rest, n_tests)
        other = o if o < k else o + 1
        pairs.append((k, other, j + 1))
    order = rng.permutation(len(pairs))
    conds = list(condition_mix)
    probs = np.array([condition_mix[c] for c in conds], dtype=np.float64)
    cond_draw = rng.choice(len(conds), size=len(pairs), p=probs / probs.sum()) if pairs else []

    trials, keys = [], {}
    for pos, idx in enumerate(order.tolist()):
        k, spk, j = pairs[idx]
        model, seg = _model_id(k), _utt_id(spk, j)
        trials.append(TrialRecord(model, SegmentId(seg), conds[int(cond_draw[pos])]))
        keys[(model, seg)] = Label.TARGET if spk == k else Label.NONTARGET

    enroll_map = EnrollmentMap({_model_id(k): (SegmentId(_utt_id(k, 0)),) for k in range(S)})
    enroll_store, test_store = _stores(X)
    embeddings = [(f"spk{k:04d}", X[k, j]) for k in range(S) for j in range(U)]
    utt_ids = [_utt_id(k, j) for k in range(S) for j in range(U)]

    modality2 = None
    if modality2_std is not None:
        X2 = _draw_embeddings(rng, spec, *modality2_std)
        e2, t2 = _stores(X2)
        modality2 = {"enroll": e2, "test": t2}

    meta = {"rng": RNG_ALGORITHM, **asdict(spec), "target_ratio": target_ratio,
            "n_trials": n_trials,
            "condition_mix": ",".join(f"{c.value}={condition_mix[c]!r}" for c in conds)}
    if modality2_std is not None:
        meta["modality2_std"] = f"{modality2_std[0]!r},{modality2_std[1]!r}"
    return SynthWorld(spec, embeddings, utt_ids, enroll_map, trials, keys,
                      enroll_store, test_store, modality2, meta)


def labeled_embeddings(world: SynthWorld) -> list[tuple[str, np.ndarray]]:
    return list(world.embeddings)


def dump_world(world: SynthWorld, out_dir, store_format: str = "binary") -> dict[str, str]:
    """Write a world in the standard file formats; returns name -> path."""
    os.makedirs(out_dir, exist_ok=True)
    ext = "emb" if store_format == "binary" else "txt"
    paths = {
        "meta": os.path.join(out_dir, "world.meta"),
        "enroll_map": os.path.join(out_dir, "enroll_map.tsv"),
        "trials": os.path.join(out_dir, "trials.tsv"),
        "keys": os.path.join(out_dir, "keys.tsv"),
        "enroll_store": os.path.join(out_dir, f"enroll.{ext}"),
        "test_store": os.path.join(out_dir, f"test.{ext}"),
    }
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        fh.write("# synthetic speaker world\n")
        for k, v in world.meta.items():
            fh.write(f"{k} = {v}\n")
    for name, text in (("enroll_map", format_enrollment_map(world.enroll_map)),
                       ("trials", format_trial_list(world.trials)),
                       ("keys", format_trial_key(world.keys))):
        with open(paths[name], "w", encoding="utf-8") as fh:
            fh.write(text)
    write_store(world.enroll_store, paths["enroll_store"], store_format)
    write_store(world.test_store, paths["test_store"], store_format)
    if world.modality2 is not None:
        paths["face_enroll_store"] = os.path.join(out_dir, f"face_enroll.{ext}")
        paths["face_test_store"] = os.path.join(out_dir, f"face_test.{ext}")
        write_store(world.modality2["enroll"], paths["face_enroll_store"], store_format)
        write_store(world.modality2["test"], paths["face_test_store"], store_format)
    return paths


def inject_miscalibration(records, effects):
    """Apply ``score -> scale * score + offset`` per condition (test-time
    channel effects). ``effects`` maps Condition -> (scale, offset)."""
    out = []
    for r in records:
        scale, offset = effects.get(r.condition, (1.0, 0.0))
        out.append(replace(r, score=scale * r.score + offset))
    return out


# ---------------------------------------------------------------------------
# Reference oracles. Deliberately naive and independent of metrics/calibration.


def oracle_det(scores, labels) -> list[tuple[float, float, float]]:
    """Exhaustive threshold sweep: (threshold, p_miss, p_fa) at every distinct
    score, plus (+inf, 1, 0)."""
    tg = [float(s) for s, lab in zip(scores, labels) if lab is Label.TARGET]
    nt = [float(s) for s, lab in zip(scores, labels) if lab is not Label.TARGET]
    if not tg or not nt:
        raise ValueError("need at least one target and one nontarget")
    points = []
    for thr in sorted(set(tg + nt)):
        misses = 0
        for s in tg:
            if not s >= thr:
                misses += 1
        fas = 0
        for s in nt:
            if s >= thr:
                fas += 1
        points.append((thr, misses / len(tg), fas / len(nt)))
    points.append((math.inf, 1.0, 0.0))
    return points


def oracle_eer(points) -> float:
    prev = None
    for _, pm, pf in points:
        if pm == pf:
            return pm
        if pm > pf:
            pm0, pf0 = prev
            # solve pm0 + u (pm - pm0) == pf0 + u (pf - pf0)
            u = (pf0 - pm0) / ((pm - pm0) - (pf - pf0))
            return pm0 + u * (pm - pm0)
        prev = (pm, pf)
    raise AssertionError("curve never crosses")


def _oracle_cost(pm, pf, p_target, c_miss, c_fa):
    norm = min(c_miss * p_target, c_fa * (1 - p_target))
    return (c_miss * p_target * pm + c_fa * (1 - p_target) * pf) / norm


def oracle_min_dcf(points, p_target, c_miss=1.0, c_fa=1.0) -> float:
    return min(_oracle_cost(pm, pf, p_target, c_miss, c_fa) for _, pm, pf in points)


def oracle_act_dcf(llrs, labels, p_target, c_miss=1.0, c_fa=1.0) -> float:
    beta = math.log(c_fa * (1 - p_target) / (c_miss * p_target))
    tg = [s for s, lab in zip(llrs, labels) if lab is Label.TARGET]
    nt = [s for s, lab in zip(llrs, labels) if lab is not Label.TARGET]
    pm = sum(1 for s in tg if s < beta) / len(tg)
    pf = sum(1 for s in nt if s >= beta) / len(nt)
    return _oracle_cost(pm, pf, p_target, c_miss, c_fa)


def oracle_loss(a, b, scores, labels, prior, ridge=0.0) -> float:
    """Prior-weighted logistic loss, written out term by term."""
    tau = math.log(prior / (1 - prior))
    tg = [s for s, lab in zip(scores, labels) if lab is Label.TARGET]
    nt = [s for s, lab in zip(scores, labels) if lab is not Label.TARGET]

    def softplus(z):
        return max(z, 0.0) + math.log1p(math.exp(-abs(z)))

    lt = math.fsum(softplus(-(a * s + b + tau)) for s in tg) / len(tg)
    ln = math.fsum(softplus(a * s + b + tau) for s in nt) / len(nt)
    return prior * lt + (1 - prior) * ln + ridge * a * a


def oracle_affine_grid(scores, labels, prior, grid_bounds, grid_steps, ridge=0.0):
    """Grid minimiser of the weighted logistic loss.

    ``grid_bounds`` = ((a_lo, a_hi), (b_lo, b_hi)); ``grid_steps`` = (n_a, n_b).
    Returns ``(AffineCalibration, loss)``. Vectorised over the grid with numpy, but shares
    no code with the Newton trainer.
    """
    from .calibration import AffineCalibration

    (a_lo, a_hi), (b_lo, b_hi) = grid_bounds
    n_a, n_b = grid_steps
    A = np.linspace(a_lo, a_hi, n_a) if n_a > 1 else np.array([a_lo])
    Bv = np.linspace(b_lo, b_hi, n_b) if n_b > 1 else np.array([b_lo])
    s = np.asarray(scores, dtype=np.float64)
    is_t = np.array([lab is Label.TARGET for lab in labels])
    tau = math.log(prior / (1 - prior))
    best = (math.inf, A[0], Bv[0])
    for a in A:
        z = a * s[None, :] + Bv[:, None] + tau
        lt = np.logaddexp(0.0, -z[:, is_t]).mean(axis=1)
        ln = np.logaddexp(0.0, z[:, ~is_t]).mean(axis=1)
        loss = prior * lt + (1 - prior) * ln + ridge * a * a
        i = int(np.argmin(loss))
        if loss[i] < best[0]:
            best = (float(loss[i]), float(a), float(Bv[i]))
    return AffineCalibration(best[1], best[2]), best[0]
