import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from svkit.embedstore import (DimMismatchError, EmbeddingStore, MagicError, NonFiniteError,
                              TruncatedRecordError, average, concat, l2_normalize, read_store,
                              write_store)
from svkit.scoring import cosine_score


def random_store(rng, n=20, dim=8):
    return EmbeddingStore(dim, {f"seg{i:03d}": rng.normal(size=dim) for i in range(n)})


def test_read_text_example(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("s1 3 1.0 0.0 0.0\n")
    store = read_store(p, "text")
    assert store.dim == 3
    np.testing.assert_array_equal(store["s1"], [1, 0, 0])


@pytest.mark.parametrize("fmt", ["binary", "text"])
def test_round_trip_exact(tmp_path, rng, fmt):
    store = random_store(rng)
    p = tmp_path / f"s.{fmt}"
    write_store(store, p, fmt)
    assert read_store(p, fmt) == store
    assert read_store(p) == store  # format sniffing


def test_binary_deterministic(tmp_path, rng):
    store = random_store(rng)
    write_store(store, tmp_path / "a", "binary")
    write_store(store, tmp_path / "b", "binary")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_binary_layout(tmp_path):
    write_store(EmbeddingStore(2, {"k": [1.0, -2.0]}), tmp_path / "s", "binary")
    raw = (tmp_path / "s").read_bytes()
    assert raw == b"EMB1" + struct.pack("<IQH", 2, 1, 1) + b"k" + struct.pack("<2f", 1.0, -2.0)


def test_dim_mismatch_text(tmp_path):
    p = tmp_path / "s.txt"
    p.write_text("s1 3 1 0 0\ns2 4 1 0 0 0\n")
    with pytest.raises(DimMismatchError):
        read_store(p, "text")


def test_load_errors_are_distinct(tmp_path, rng):
    store = random_store(rng, n=3)
    p = tmp_path / "s.emb"
    write_store(store, p, "binary")
    raw = p.read_bytes()
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(MagicError):
        read_store(tmp_path / "magic", "binary")
    (tmp_path / "trunc").write_bytes(raw[:-3])
    with pytest.raises(TruncatedRecordError):
        read_store(tmp_path / "trunc", "binary")
    bad = bytearray(raw)
    bad[-4:] = struct.pack("<f", float("nan"))
    (tmp_path / "nan").write_bytes(bytes(bad))
    with pytest.raises(NonFiniteError):
        read_store(tmp_path / "nan", "binary")
    (tmp_path / "inf.txt").write_text("s1 2 1.0 inf\n")
    with pytest.raises(NonFiniteError):
        read_store(tmp_path / "inf.txt", "text")


def test_l2_normalize():
    np.testing.assert_allclose(l2_normalize([3, 4]), [0.6, 0.8])
    u = l2_normalize([1.0, 2.0, -2.0])
    np.testing.assert_allclose(l2_normalize(u), u, atol=1e-6)
    with pytest.raises(ValueError):
        l2_normalize([0, 0])


vectors = arrays(np.float64, 6, elements=st.floats(-100, 100)).filter(lambda v: np.linalg.norm(v) > 1e-3)


@given(vectors)
def test_l2_normalize_unit_norm(v):
    u = l2_normalize(v)
    assert abs(np.linalg.norm(u) - 1) < 1e-6
    assert cosine_score(u, v) == pytest.approx(1.0, abs=1e-9)


def test_average_examples(rng):
    v = rng.normal(size=5)
    np.testing.assert_allclose(average([v, v, v]), v)
    np.testing.assert_array_equal(average([[1, 0], [0, 1]]), [0.5, 0.5])
    vs = rng.normal(size=(5, 8))
    expected = [sum(vs[i][j] for i in range(5)) / 5 for j in range(8)]
    np.testing.assert_allclose(average(list(vs)), expected, rtol=1e-12, atol=1e-15)
    with pytest.raises(ValueError):
        average([])
    with pytest.raises(DimMismatchError):
        average([[1, 2], [1, 2, 3]])


@given(st.lists(arrays(np.float64, 4, elements=st.floats(-10, 10)), min_size=1, max_size=8),
       st.randoms())
def test_average_permutation_invariant(vs, r):
    shuffled = list(vs)
    r.shuffle(shuffled)
    np.testing.assert_allclose(average(vs), average(shuffled), atol=1e-12)


def test_concat_examples():
    np.testing.assert_array_equal(concat([1, 0], [0, 1], False), [1, 0, 0, 1])
    with pytest.raises(ValueError):
        concat([3, 4], [0, 0], True)


def test_concat_fused_cosine_is_mean(rng):
    for _ in range(100):
        a1, b1 = (l2_normalize(rng.normal(size=5)) for _ in range(2))
        a2, b2 = (l2_normalize(rng.normal(size=3)) for _ in range(2))
        fused = cosine_score(concat(a1, a2), concat(b1, b2))
        assert fused == pytest.approx((cosine_score(a1, b1) + cosine_score(a2, b2)) / 2, abs=1e-12)
