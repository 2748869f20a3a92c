import numpy as np
import pytest

from svkit.embedstore import EmbeddingStore, l2_normalize
from svkit.fusion import FusionError, FusionMode, FusionSpec, fuse_embeddings, fuse_scores
from svkit.metrics import det_curve, eer
from svkit.scoring import ScoreRecord, cosine_score, score_trials
from svkit.synthgen import SpeakerWorldSpec, generate_world

from conftest import N, T


def unit_store(rng, keys, dim):
    return EmbeddingStore(dim, {k: l2_normalize(rng.normal(size=dim)) for k in keys})


def test_fused_cosine_is_mean(rng):
    keys = [f"k{i}" for i in range(10)]
    audio, face = unit_store(rng, keys, 6), unit_store(rng, keys, 4)
    fused = fuse_embeddings(audio, face, {k: (k, k) for k in keys})
    assert fused.dim == 10 and len(fused) == 10
    for a in keys[:5]:
        for b in keys[5:]:
            mean = (cosine_score(audio[a], audio[b]) + cosine_score(face[a], face[b])) / 2
            assert cosine_score(fused[a], fused[b]) == pytest.approx(mean, abs=1e-6)


def test_constant_face_keeps_audio_eer():
    w = generate_world(SpeakerWorldSpec(n_speakers=80, utts_per_speaker=6, dim=16, within_std=1.0,
                                        seed=21), 0.2, 2000)
    face_vec = np.ones(8)
    stores = {}
    for side, store in (("enroll", w.enroll_store), ("test", w.test_store)):
        face = EmbeddingStore(8, {k: face_vec for k in store.keys()})
        stores[side] = fuse_embeddings(store, face, {k: (k, k) for k in store.keys()})
    audio = score_trials(w.enroll_store, w.test_store, w.enroll_map, w.trials, keys=w.keys).records
    fused = score_trials(stores["enroll"], stores["test"], w.enroll_map, w.trials, keys=w.keys).records
    for a, f in zip(audio, fused):
        assert f.score == pytest.approx((a.score + 1) / 2, abs=1e-6)
    labs = [r.label for r in audio]
    assert eer(det_curve([r.score for r in fused], labs)) == eer(det_curve([r.score for r in audio], labs))


def test_fuse_embeddings_edge_cases(rng):
    audio = unit_store(rng, ["a"], 3)
    face = EmbeddingStore(2, {"a": [0.0, 0.0]})
    assert len(fuse_embeddings(audio, face, {})) == 0
    with pytest.raises(FusionError):
        fuse_embeddings(audio, face, {"x": ("a", "a")})
    fuse_embeddings(audio, face, {"x": ("a", "a")}, FusionSpec(normalize_halves=False))
    with pytest.raises(FusionError):
        fuse_embeddings(audio, face, {"x": ("missing", "a")})
    with pytest.raises(FusionError):
        fuse_embeddings(audio, face, {}, FusionSpec(FusionMode.SCORE_SUM))


def recs(scores):
    return [ScoreRecord(f"m{i}", f"s{i}", s, label=T if i % 2 else N) for i, s in enumerate(scores)]


def test_fuse_scores_degenerate_weights(rng):
    a, b = recs(rng.normal(size=50)), recs(rng.normal(size=50))
    assert fuse_scores([(1.0, a), (0.0, b)]) == a
    assert fuse_scores([(0.5, a), (0.5, a)]) == a
    assert fuse_scores([(1.0, a)]) == a


def test_fuse_scores_errors(rng):
    a = recs(rng.normal(size=5))
    b = recs(rng.normal(size=5))[::-1]
    with pytest.raises(FusionError):
        fuse_scores([(0.5, a), (0.5, b)])
    with pytest.raises(FusionError):
        fuse_scores([(0.5, a), (0.5, a[:3])])
    with pytest.raises(FusionError):
        fuse_scores([(0.7, a), (0.7, a)])
    with pytest.raises(FusionError):
        FusionSpec(FusionMode.SCORE_SUM, weights=(1.5, -0.5))


def test_constant_modality_score_fusion_is_affine(rng):
    a = recs(rng.normal(size=300) + np.tile([0, 1.5], 150))
    const = [ScoreRecord(r.model, r.segment, 0.3, label=r.label) for r in a]
    fused = fuse_scores([(0.6, a), (0.4, const)])
    labs = [r.label for r in a]
    assert eer(det_curve([r.score for r in fused], labs)) == eer(det_curve([r.score for r in a], labs))
