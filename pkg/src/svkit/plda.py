"""Two-covariance PLDA.

Generative model: ``x = mu + y + e`` with speaker variable ``y ~ N(0, B)``
shared by all utterances of a speaker and ``e ~ N(0, W)`` drawn per utterance.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"PLD1"
_LOG2PI = np.log(2.0 * np.pi)


class PldaError(ValueError):
    pass


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _logdet(m: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(m)
    if sign <= 0:
        raise PldaError("matrix is not positive definite")
    return float(val)


def _clip_eigenvalues(m: np.ndarray, floor: float) -> np.ndarray:
    vals, vecs = np.linalg.eigh(_sym(m))
    return _sym((vecs * np.maximum(vals, floor)) @ vecs.T)


@dataclass(frozen=True, eq=False)
class PldaModel:
    mean: np.ndarray
    between_cov: np.ndarray
    within_cov: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.mean).shape[0]
        for name in ("between_cov", "within_cov"):
            if np.asarray(getattr(self, name)).shape != (d, d):
                raise ValueError(f"{name} must be {d}x{d}")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @cached_property
    def _scoring(self):
        B = np.asarray(self.between_cov, dtype=np.float64)
        T = B + np.asarray(self.within_cov, dtype=np.float64)
        T_inv = _sym(np.linalg.inv(T))
        S = T - B @ T_inv @ B
        lam = _sym(np.linalg.inv(S))
        gamma = _sym(-T_inv @ B @ lam)
        Q = lam - T_inv
        const = -0.5 * (_logdet(S) - _logdet(T))
        return Q, gamma, const

    def llr(self, enroll, test) -> float:
        """Same-speaker vs different-speaker log-likelihood ratio."""
        e = np.asarray(enroll, dtype=np.float64) - self.mean
        t = np.asarray(test, dtype=np.float64) - self.mean
        if e.shape != (self.dim,) or t.shape != (self.dim,):
            raise ValueError(f"expected dim {self.dim} vectors")
        Q, gamma, const = self._scoring
        return float(const - 0.5 * (e @ Q @ e + t @ Q @ t) - e @ gamma @ t)


def plda_llr(model: PldaModel, enroll, test) -> float:
    return model.llr(enroll, test)


@dataclass
class _Speakers:
    counts: np.ndarray      # (S,)
    means: np.ndarray       # (S, d)
    scatter: np.ndarray     # (d, d) pooled within-speaker scatter around speaker means
    total: int


def _group(data) -> _Speakers:
    """Collect per-speaker sufficient statistics, speakers in first-seen order."""
    order: dict = {}
    for label, vec in data:
        order.setdefault(label, []).append(np.asarray(vec, dtype=np.float64))
    if len(order) < 2:
        raise PldaError("need at least two speakers")
    dims = {v.shape for vs in order.values() for v in vs}
    if len(dims) != 1:
        raise PldaError("embeddings differ in dimension")
    (shape,) = dims
    d = shape[0]
    counts, means = [], []
    scatter = np.zeros((d, d))
    for vs in order.values():
        X = np.stack(vs)
        m = X.mean(axis=0)
        R = X - m
        scatter += R.T @ R
        counts.append(len(vs))
        means.append(m)
    counts = np.asarray(counts, dtype=np.float64)
    return _Speakers(counts, np.stack(means), _sym(scatter), int(counts.sum()))


def _log_likelihood(stats: _Speakers, mu, B, W) -> float:
    """Exact marginal log-likelihood of all data under (mu, B, W).

    Per speaker with n utterances the data factor into the speaker mean,
    distributed N(mu, B + W/n), and within-speaker residuals that depend on W
    only.
    """
    d = mu.shape[0]
    W_inv = np.linalg.inv(W)
    ll = 0.0
    logdet_W = _logdet(W)
    for n, m in zip(stats.counts, stats.means):
        C = B + W / n
        diff = m - mu
        ll += -0.5 * (d * _LOG2PI + _logdet(C) + diff @ np.linalg.solve(C, diff))
        ll += -0.5 * ((n - 1) * (d * _LOG2PI + logdet_W) + d * np.log(n))
    ll += -0.5 * float(np.sum(W_inv * stats.scatter))
    return float(ll)


@dataclass
class EmTrace:
    log_likelihoods: list[float] = field(default_factory=list)
    converged: bool = False


def plda_train_em(data, max_iters: int = 50, tol: float = 1e-6,
                  regularize: bool = True, trace: EmTrace | None = None) -> PldaModel:
    """Fit (mu, B, W) by EM from ``(speaker_label, embedding)`` pairs.

    Initialisation is moment-based: global mean, covariance of speaker means,
    pooled within-speaker covariance plus a ridge of 1e-6 * trace / dim. The
    W update is the eigenvalue-floored covariance (the constrained maximiser),
    which keeps every iteration a proper EM step.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    stats = _group(data)
    d = stats.means.shape[1]
    n_spk = len(stats.counts)
    within_dof = stats.total - n_spk

    mu = (stats.counts @ stats.means) / stats.total
    S_w = stats.scatter / max(within_dof, 1)
    if not regularize and (within_dof < d or np.linalg.eigvalsh(S_w)[0] <= 1e-10):
        raise PldaError(
            f"within-class scatter is singular ({stats.total} utterances, "
            f"{n_spk} speakers, dim {d}); enable ridge regularization")
    centered = stats.means - mu
    B = _sym(centered.T @ centered / n_spk)
    scale = np.trace(S_w) / d
    if scale <= 0:
        total_cov = B + S_w
        scale = np.trace(total_cov) / d
    floor = max(1e-6 * scale, 1e-10) if regularize else 1e-10
    W = _sym(S_w + floor * np.eye(d)) if regularize else _sym(S_w)

    trace = trace if trace is not None else EmTrace()
    ll = _log_likelihood(stats, mu, B, W)
    trace.log_likelihoods.append(ll)
    for it in range(max_iters):
        # E-step: posterior of each speaker variable
        Ey = np.empty_like(stats.means)
        sum_cov = np.zeros((d, d))
        weighted_cov = np.zeros((d, d))
        for s, (n, m) in enumerate(zip(stats.counts, stats.means)):
            C = B + W / n
            G = np.linalg.solve(C, B).T          # B C^-1
            Ey[s] = G @ (m - mu)
            post = _sym(B - G @ B)
            sum_cov += post
            weighted_cov += n * post
        # M-step
        mu = (stats.counts @ (stats.means - Ey)) / stats.total
        B = _sym((Ey.T @ Ey + sum_cov) / n_spk)
        R = stats.means - mu - Ey
        W_scatter = stats.scatter + (R.T * stats.counts) @ R + weighted_cov
        W = _clip_eigenvalues(W_scatter / stats.total, floor)
        new_ll = _log_likelihood(stats, mu, B, W)
        trace.log_likelihoods.append(new_ll)
        gain = new_ll - ll
        log.debug("plda em iter %d: ll=%.6f gain=%.3g", it + 1, new_ll, gain)
        ll = new_ll
        if gain < tol:
            trace.converged = True
            break
    return PldaModel(mu, B, W)


def write_plda(model: PldaModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", model.dim))
        for arr in (model.mean, model.between_cov, model.within_cov):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_plda(path) -> PldaModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise PldaError("bad PLDA model magic")
    if len(buf) < 8:
        raise PldaError("truncated PLDA model header")
    (d,) = struct.unpack_from("<I", buf, 4)
    expected = 8 + 8 * (d + 2 * d * d)
    if len(buf) != expected:
        raise PldaError(f"PLDA model file has {len(buf)} bytes, expected {expected}")
    vals = np.frombuffer(buf, dtype="<f8", offset=8).astype(np.float64)
    mu = vals[:d]
    B = vals[d:d + d * d].reshape(d, d)
    W = vals[d + d * d:].reshape(d, d)
    return PldaModel(mu, B, W)
