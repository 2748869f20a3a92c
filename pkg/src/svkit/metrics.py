"""DET curve, EER, normalised minimum and actual detection cost.

Decision rule everywhere: accept iff score >= threshold.
"""
from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .trialset import Condition, Label


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class OperatingPoint:
    p_target: float = 0.01
    c_miss: float = 1.0
    c_fa: float = 1.0

    def __post_init__(self):
        if not 0 < self.p_target < 1:
            raise ValueError("p_target must be in (0, 1)")
        if not (self.c_miss > 0 and self.c_fa > 0):
            raise ValueError("costs must be positive")

    @property
    def bayes_threshold(self) -> float:
        return math.log(self.c_fa * (1 - self.p_target)) - math.log(self.c_miss * self.p_target)

    @property
    def normalizer(self) -> float:
        return min(self.c_miss * self.p_target, self.c_fa * (1 - self.p_target))

    def cost(self, p_miss, p_fa):
        return (self.c_miss * self.p_target * p_miss
                + self.c_fa * (1 - self.p_target) * p_fa) / self.normalizer


DEFAULT_OP = OperatingPoint()


@dataclass(frozen=True)
class DetCurve:
    thresholds: np.ndarray
    p_miss: np.ndarray
    p_fa: np.ndarray
    n_target: int
    n_nontarget: int

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.thresholds.tolist(), self.p_miss.tolist(), self.p_fa.tolist()))


@dataclass(frozen=True)
class MetricsReport:
    eer: float
    min_dcf: float
    act_dcf: float
    operating_points: tuple[OperatingPoint, ...]
    n_target: int
    n_nontarget: int


def split_labels(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    if s.shape[0] != len(labels):
        raise MetricsError("scores and labels differ in length")
    is_tgt = np.fromiter((lab is Label.TARGET for lab in labels), dtype=bool, count=len(labels))
    tgt, non = s[is_tgt], s[~is_tgt]
    if tgt.size == 0 or non.size == 0:
        raise MetricsError("need at least one target and one nontarget")
    return tgt, non


def det_curve(scores, labels) -> DetCurve:
    """One point per distinct score plus the reject-all point at +inf.

    The lowest threshold is always the accept-all corner (0, 1).
    """
    tgt, non = split_labels(scores, labels)
    thr = np.unique(np.concatenate([tgt, non]))
    tgt.sort()
    non.sort()
    n_miss = np.searchsorted(tgt, thr, side="left")
    n_fa = non.size - np.searchsorted(non, thr, side="left")
    thresholds = np.append(thr, np.inf)
    p_miss = np.append(n_miss / tgt.size, 1.0)
    p_fa = np.append(n_fa / non.size, 0.0)
    return DetCurve(thresholds, p_miss, p_fa, int(tgt.size), int(non.size))


def eer(curve: DetCurve) -> float:
    """Miss/false-alarm crossing, linearly interpolated between the two
    straddling curve points."""
    pm, pf = curve.p_miss, curve.p_fa
    k = int(np.argmax(pm >= pf))  # exists: last point is (1, 0)
    if pm[k] == pf[k]:
        return float(pm[k])
    d0 = pm[k - 1] - pf[k - 1]
    d1 = pm[k] - pf[k]
    u = d0 / (d0 - d1)
    return float(pm[k - 1] + u * (pm[k] - pm[k - 1]))


def _as_ops(op) -> tuple[OperatingPoint, ...]:
    if isinstance(op, OperatingPoint):
        return (op,)
    ops = tuple(op)
    if not ops:
        raise ValueError("need at least one operating point")
    return ops


def min_dcf(curve: DetCurve, op: OperatingPoint | Sequence[OperatingPoint] = DEFAULT_OP) -> float:
    """Normalised minimum cost; a sequence of points gives their average."""
    ops = _as_ops(op)
    return float(sum(np.min(o.cost(curve.p_miss, curve.p_fa)) for o in ops) / len(ops))


def act_dcf(llrs, labels, op: OperatingPoint | Sequence[OperatingPoint] = DEFAULT_OP) -> float:
    tgt, non = split_labels(llrs, labels)
    ops = _as_ops(op)
    total = 0.0
    for o in ops:
        beta = o.bayes_threshold
        p_miss = np.count_nonzero(tgt < beta) / tgt.size
        p_fa = np.count_nonzero(non >= beta) / non.size
        total += float(o.cost(p_miss, p_fa))
    return total / len(ops)


def report(scores, labels, op=DEFAULT_OP) -> MetricsReport:
    curve = det_curve(scores, labels)
    return MetricsReport(eer(curve), min_dcf(curve, op), act_dcf(scores, labels, op),
                         _as_ops(op), curve.n_target, curve.n_nontarget)


@dataclass
class PooledReport:
    pooled: MetricsReport
    per_condition: dict[Condition, MetricsReport]
    skipped: dict[Condition, str]


def pooled_report(records, op=DEFAULT_OP, strict: bool = False) -> PooledReport:
    """Metrics over all labelled records plus one report per condition.

    Unlabelled records are dropped (an error in strict mode); conditions with a
    single class are listed in ``skipped``.
    """
    labelled = []
    for r in records:
        if r.label is None:
            if strict:
                raise MetricsError(f"trial ({r.model}, {r.segment}) has no key")
            continue
        labelled.append(r)
    pooled = report([r.score for r in labelled], [r.label for r in labelled], op)
    groups: dict[Condition, list] = {}
    for r in labelled:
        groups.setdefault(r.condition, []).append(r)
    per, skipped = {}, {}
    for cond in sorted(groups, key=lambda c: list(Condition).index(c)):
        rs = groups[cond]
        try:
            per[cond] = report([r.score for r in rs], [r.label for r in rs], op)
        except MetricsError as exc:
            skipped[cond] = str(exc)
    return PooledReport(pooled, per, skipped)


REPORT_HEADER = "system\tcondition\tn_tgt\tn_non\teer_pct\tmin_c\tact_c"


def format_report_row(system: str, condition: str, rep: MetricsReport) -> str:
    return (f"{system}\t{condition}\t{rep.n_target}\t{rep.n_nontarget}\t"
            f"{100 * rep.eer:.2f}\t{rep.min_dcf:.3f}\t{rep.act_dcf:.3f}")


def format_report(system: str, pr: PooledReport) -> str:
    lines = [REPORT_HEADER, format_report_row(system, "POOLED", pr.pooled)]
    lines += [format_report_row(system, c.value, r) for c, r in pr.per_condition.items()]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> list[dict]:
    rows = []
    header = None
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if header is None:
            header = fields
            continue
        row = dict(zip(header, fields))
        for k in ("n_tgt", "n_non"):
            row[k] = int(row[k])
        for k in ("eer_pct", "min_c", "act_c"):
            row[k] = float(row[k])
        rows.append(row)
    return rows


def format_det(curve: DetCurve) -> str:
    lines = ["threshold\tp_miss\tp_fa"]
    lines += [f"{t:.9g}\t{m:.9g}\t{f:.9g}" for t, m, f in curve.points()]
    return "\n".join(lines) + "\n"
