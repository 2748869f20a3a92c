import numpy as np
import pytest
from scipy.stats import multivariate_normal

from svkit.plda import (EmTrace, PldaError, PldaModel, _group, _log_likelihood, plda_llr,
                        plda_train_em, read_plda, write_plda)


def oracle_llr(mu, B, W, e, t):
    """Log-density ratio of the stacked pair under the same/different-speaker
    joint Gaussians."""
    T = B + W
    z = np.concatenate([e, t])
    m = np.concatenate([mu, mu])
    same = np.block([[T, B], [B, T]])
    diff = np.block([[T, np.zeros_like(B)], [np.zeros_like(B), T]])
    return multivariate_normal(m, same).logpdf(z) - multivariate_normal(m, diff).logpdf(z)


def random_psd(rng, d, scale=1.0):
    A = rng.normal(size=(d, d))
    return scale * (A @ A.T / d + 0.1 * np.eye(d))


def sample(rng, mu, B, W, n_spk, n_utt):
    d = len(mu)
    LB, LW = np.linalg.cholesky(B), np.linalg.cholesky(W)
    data = []
    for s in range(n_spk):
        y = LB @ rng.normal(size=d)
        for _ in range(n_utt):
            data.append((s, mu + y + LW @ rng.normal(size=d)))
    return data


def rel_frob(est, true):
    return np.linalg.norm(est - true) / np.linalg.norm(true)


def test_zero_between_gives_zero_llr(rng):
    m = PldaModel(np.zeros(3), np.zeros((3, 3)), np.eye(3))
    for _ in range(10):
        assert m.llr(rng.normal(size=3), rng.normal(size=3)) == 0.0


def test_dim1_value():
    m = PldaModel(np.zeros(1), np.eye(1), np.eye(1))
    # same: N(0, [[2,1],[1,2]]), diff: N(0, 2I) at the origin -> -0.5 log(3/4)
    assert m.llr([0.0], [0.0]) == pytest.approx(-0.5 * np.log(0.75), abs=1e-12)
    assert m.llr([0.0], [0.0]) == pytest.approx(oracle_llr(np.zeros(1), np.eye(1), np.eye(1),
                                                           np.zeros(1), np.zeros(1)), abs=1e-12)


def test_llr_matches_density_oracle(rng):
    for _ in range(50):
        d = int(rng.integers(1, 6))
        mu, B, W = rng.normal(size=d), random_psd(rng, d, 2.0), random_psd(rng, d)
        m = PldaModel(mu, B, W)
        e, t = mu + rng.normal(size=d) * 2, mu + rng.normal(size=d) * 2
        assert plda_llr(m, e, t) == pytest.approx(oracle_llr(mu, B, W, e, t), abs=1e-6)


def test_llr_symmetric(rng):
    m = PldaModel(rng.normal(size=4), random_psd(rng, 4), random_psd(rng, 4))
    for _ in range(100):
        e, t = rng.normal(size=4) * 3, rng.normal(size=4) * 3
        assert abs(m.llr(e, t) - m.llr(t, e)) < 1e-9


def test_llr_shrinks_with_within_scale(rng):
    B = random_psd(rng, 3)
    W0 = random_psd(rng, 3)
    e = np.array([0.2, -0.1, 0.3])
    t = np.array([0.25, -0.05, 0.2])
    vals = [abs(PldaModel(np.zeros(3), B, W0 * k).llr(e, t)) for k in (1.0, 10.0, 100.0)]
    assert vals[0] > vals[1] > vals[2]


def test_llr_dim_mismatch():
    m = PldaModel(np.zeros(2), np.eye(2), np.eye(2))
    with pytest.raises(ValueError):
        m.llr([1, 2, 3], [1, 2])


def test_marginal_likelihood_matches_full_gaussian(rng):
    d = 2
    mu, B, W = rng.normal(size=d), random_psd(rng, d), random_psd(rng, d)
    data = sample(rng, mu, B, W, 4, 3)
    data += [(9, mu + rng.normal(size=d))]  # a single-utterance speaker
    stats = _group(data)
    expected = 0.0
    for spk in dict.fromkeys(s for s, _ in data):
        X = np.concatenate([x for s, x in data if s == spk])
        n = len(X) // d
        cov = np.kron(np.ones((n, n)), B) + np.kron(np.eye(n), W)
        expected += multivariate_normal(np.tile(mu, n), cov).logpdf(X)
    assert _log_likelihood(stats, mu, B, W) == pytest.approx(expected, abs=1e-8)


def test_em_recovers_diagonal_model():
    rng = np.random.default_rng(2024)
    d = 4
    B_true, W_true = 4.0 * np.eye(d), np.eye(d)
    data = sample(rng, np.zeros(d), B_true, W_true, 200, 10)
    model = plda_train_em(data, max_iters=200, tol=1e-8)
    assert rel_frob(model.between_cov, B_true) < 0.15
    assert rel_frob(model.within_cov, W_true) < 0.15


def test_em_monotone_and_first_step(rng):
    for _ in range(5):
        d = 3
        data = sample(rng, rng.normal(size=d), random_psd(rng, d, 3.0), random_psd(rng, d), 30,
                      int(rng.integers(2, 6)))
        trace = EmTrace()
        plda_train_em(data, max_iters=40, tol=0.0, trace=trace)
        ll = np.array(trace.log_likelihoods)
        assert ll[1] >= ll[0] - 1e-8
        assert np.all(np.diff(ll) >= -1e-8)


def test_degenerate_identical_per_speaker(rng):
    d = 3
    means = rng.normal(size=(40, d)) * 2
    data = [(s, means[s].copy()) for s in range(40) for _ in range(4)]
    model = plda_train_em(data, max_iters=30)
    assert np.max(np.linalg.eigvalsh(model.within_cov)) < 1e-4
    assert np.min(np.linalg.eigvalsh(model.within_cov)) > 1e-10
    emp = np.cov(means.T, bias=True)
    assert rel_frob(model.between_cov, emp) < 1e-3


def test_singular_scatter_needs_regularization(rng):
    data = [(s, rng.normal(size=8)) for s in range(3) for _ in range(2)]
    with pytest.raises(PldaError, match="regularization"):
        plda_train_em(data, regularize=False)
    plda_train_em(data, regularize=True)


def test_needs_two_speakers(rng):
    with pytest.raises(PldaError):
        plda_train_em([(0, rng.normal(size=2)) for _ in range(5)])


def test_model_file_round_trip(tmp_path, rng):
    m = PldaModel(rng.normal(size=3), random_psd(rng, 3), random_psd(rng, 3))
    write_plda(m, tmp_path / "p.bin")
    raw = (tmp_path / "p.bin").read_bytes()
    assert raw[:4] == b"PLD1" and len(raw) == 8 + 8 * (3 + 18)
    back = read_plda(tmp_path / "p.bin")
    for name in ("mean", "between_cov", "within_cov"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(PldaError):
        read_plda(tmp_path / "bad")
