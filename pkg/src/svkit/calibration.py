"""Affine score-to-LLR calibration by prior-weighted logistic regression."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .trialset import Condition, Label

log = logging.getLogger(__name__)

DEFAULT_PRIOR = 0.01


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class AffineCalibration:
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.scale) and math.isfinite(self.offset)):
            raise CalibrationError("calibration parameters must be finite")

    def __call__(self, score):
        return self.scale * score + self.offset


def apply(cal: AffineCalibration, score):
    return cal.scale * score + cal.offset


@dataclass(frozen=True)
class CalibrationSet:
    fallback: AffineCalibration
    per_condition: dict[Condition, AffineCalibration] = field(default_factory=dict)

    def get(self, condition: Condition) -> AffineCalibration:
        return self.per_condition.get(condition, self.fallback)

    def apply(self, score: float, condition: Condition) -> float:
        return apply(self.get(condition), score)


def logit(p: float) -> float:
    return math.log(p) - math.log1p(-p)


def _split(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    if len(s) != len(labels):
        raise CalibrationError("scores and labels differ in length")
    if not np.all(np.isfinite(s)):
        raise CalibrationError("non-finite score")
    is_tgt = np.array([lab is Label.TARGET for lab in labels], dtype=bool)
    tgt, non = s[is_tgt], s[~is_tgt]
    if tgt.size == 0 or non.size == 0:
        raise CalibrationError("need at least one target and one nontarget score")
    return tgt, non


def weighted_loss(a: float, b: float, tgt, non, prior: float, ridge: float = 0.0) -> float:
    tau = logit(prior)
    lt = np.logaddexp(0.0, -(a * tgt + b + tau)).mean()
    ln = np.logaddexp(0.0, a * non + b + tau).mean()
    return float(prior * lt + (1 - prior) * ln + ridge * a * a)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def _grad_hess(a, b, tgt, non, prior, ridge):
    tau = logit(prior)
    wt = prior / tgt.size
    wn = (1 - prior) / non.size
    # d/dz log(1+e^-z) = -(1 - sigma(z)); d/dz log(1+e^z) = sigma(z)
    zt = a * tgt + b + tau
    zn = a * non + b + tau
    gt = -wt * _sigmoid(-zt)
    gn = wn * _sigmoid(zn)
    ht = wt * _sigmoid(zt) * _sigmoid(-zt)
    hn = wn * _sigmoid(zn) * _sigmoid(-zn)
    grad = np.array([gt @ tgt + gn @ non + 2 * ridge * a, gt.sum() + gn.sum()])
    haa = ht @ (tgt * tgt) + hn @ (non * non) + 2 * ridge
    hab = ht @ tgt + hn @ non
    hbb = ht.sum() + hn.sum()
    return grad, np.array([[haa, hab], [hab, hbb]])


@dataclass
class NewtonTrace:
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    converged: bool = False


def train_affine(scores, labels, prior: float = DEFAULT_PRIOR, ridge: float = 0.0,
                 max_iters: int = 100, tol: float = 1e-9,
                 init: tuple[float, float] = (1.0, 0.0),
                 trace: NewtonTrace | None = None) -> AffineCalibration:
    """Fit ``llr = a * score + b`` minimising the prior-weighted cross-entropy.

    Damped Newton: the full step is halved until the objective does not go up.
    Stops when the gradient max-norm drops below ``tol``.
    """
    if not 0 < prior < 1:
        raise CalibrationError("prior must be in (0, 1)")
    if ridge < 0:
        raise CalibrationError("ridge must be non-negative")
    tgt, non = _split(scores, labels)
    trace = trace if trace is not None else NewtonTrace()
    x = np.array(init, dtype=np.float64)
    loss = weighted_loss(x[0], x[1], tgt, non, prior, ridge)
    trace.losses.append(loss)
    for _ in range(max_iters):
        g, H = _grad_hess(x[0], x[1], tgt, non, prior, ridge)
        gnorm = float(np.max(np.abs(g)))
        trace.grad_norms.append(gnorm)
        if gnorm < tol:
            trace.converged = True
            break
        # tiny Levenberg term guards a singular Hessian (e.g. constant scores)
        lm = 1e-12 * (np.trace(H) + 1e-300)
        try:
            step = np.linalg.solve(H + lm * np.eye(2), g)
        except np.linalg.LinAlgError:
            step = g
        t = 1.0
        for _ in range(60):
            cand = x - t * step
            cand_loss = weighted_loss(cand[0], cand[1], tgt, non, prior, ridge)
            if cand_loss <= loss:
                break
            t *= 0.5
        else:
            # no descent possible at float resolution
            trace.converged = True
            break
        x, loss = cand, cand_loss
        trace.losses.append(loss)
    else:
        g, _ = _grad_hess(x[0], x[1], tgt, non, prior, ridge)
        trace.grad_norms.append(float(np.max(np.abs(g))))
        trace.converged = trace.grad_norms[-1] < tol
    if not trace.converged:
        log.warning("calibration did not converge in %d iterations (|g|=%.3g)",
                    max_iters, trace.grad_norms[-1])
    return AffineCalibration(float(x[0]), float(x[1]))


def train_per_condition(partitioned, prior: float = DEFAULT_PRIOR, ridge: float = 0.0,
                        max_iters: int = 100, tol: float = 1e-9,
                        min_trials_per_class: int = 10) -> CalibrationSet:
    """``partitioned`` maps condition -> (scores, labels).

    The fallback is always trained on all partitions pooled; conditions with
    too few targets or nontargets use it.
    """
    kw = dict(prior=prior, ridge=ridge, max_iters=max_iters, tol=tol)
    all_scores, all_labels = [], []
    per_condition = {}
    trainable = []
    for cond, (scores, labels) in partitioned.items():
        all_scores.extend(scores)
        all_labels.extend(labels)
        n_t = sum(1 for lab in labels if lab is Label.TARGET)
        n_n = len(labels) - n_t
        if n_t >= min_trials_per_class and n_n >= min_trials_per_class:
            trainable.append(cond)
        else:
            log.info("condition %s: %d targets / %d nontargets, using fallback",
                     cond.value, n_t, n_n)
    if not trainable:
        raise CalibrationError("no condition has enough targets and nontargets to train")
    fallback = train_affine(all_scores, all_labels, **kw)
    for cond in trainable:
        scores, labels = partitioned[cond]
        per_condition[cond] = train_affine(scores, labels, **kw)
    return CalibrationSet(fallback, per_condition)


def format_calibration(cal_set: CalibrationSet) -> str:
    rows = [("FALLBACK", cal_set.fallback)]
    rows += [(c.value, cal_set.per_condition[c])
             for c in sorted(cal_set.per_condition, key=lambda c: list(Condition).index(c))]
    return "".join(f"{name}\t{cal.scale:.9f}\t{cal.offset:.9f}\n" for name, cal in rows)


def parse_calibration(text: str) -> CalibrationSet:
    fallback = None
    per = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise CalibrationError(f"line {lineno}: expected condition, a, b")
        try:
            cal = AffineCalibration(float(fields[1]), float(fields[2]))
        except ValueError as exc:
            raise CalibrationError(f"line {lineno}: {exc}") from None
        if fields[0].strip().upper() == "FALLBACK":
            fallback = cal
        else:
            try:
                per[Condition.parse(fields[0])] = cal
            except ValueError as exc:
                raise CalibrationError(f"line {lineno}: {exc}") from None
    if fallback is None:
        raise CalibrationError("calibration file has no FALLBACK row")
    return CalibrationSet(fallback, per)
