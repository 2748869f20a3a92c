"""Trial lists, trial keys and enrollment maps.

All three files are UTF-8 TSV. Lines starting with ``#`` and blank lines are
ignored. Each trial carries a condition tag derived from the source types of
the enrollment and test audio (sph / flac), which later drives per-condition
calibration.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class SourceType(enum.Enum):
    SPH = "sph"
    FLAC = "flac"
    VIDEO = "video"
    UNKNOWN = "unknown"


class Condition(enum.Enum):
    SPH_SPH = "SPH_SPH"
    SPH_FLAC = "SPH_FLAC"
    FLAC_SPH = "FLAC_SPH"
    FLAC_FLAC = "FLAC_FLAC"
    OTHER = "OTHER"

    @classmethod
    def parse(cls, token: str) -> "Condition":
        norm = token.strip().upper().replace("-", "_")
        try:
            return cls(norm)
        except ValueError:
            raise ValueError(f"unknown condition tag {token!r}") from None


class Policy(enum.Enum):
    ORDERED = "ordered"
    UNORDERED = "unordered"


class Label(enum.Enum):
    TARGET = "target"
    NONTARGET = "nontarget"

    @classmethod
    def parse(cls, token: str) -> "Label":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise ValueError(f"unknown label {token!r}") from None


_EXTENSIONS = {
    ".sph": SourceType.SPH,
    ".flac": SourceType.FLAC,
    ".mp4": SourceType.VIDEO,
    ".avi": SourceType.VIDEO,
    ".mkv": SourceType.VIDEO,
    ".webm": SourceType.VIDEO,
}


def source_type_of(name: str) -> SourceType:
    ext = os.path.splitext(name)[1].lower()
    return _EXTENSIONS.get(ext, SourceType.UNKNOWN)


@dataclass(frozen=True)
class SegmentId:
    id: str
    source_type: SourceType = SourceType.UNKNOWN

    @classmethod
    def from_name(cls, name: str, explicit: SourceType | None = None) -> "SegmentId":
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid segment id {name!r}")
        return cls(name, explicit if explicit is not None else source_type_of(name))

    def __str__(self) -> str:
        return self.id


@dataclass(frozen=True)
class TrialRecord:
    model: str
    segment: SegmentId
    condition: Condition = Condition.OTHER


@dataclass(frozen=True)
class EnrollmentMap:
    """Model id -> ordered enrollment segments (at least one each)."""

    entries: dict[str, tuple[SegmentId, ...]] = field(default_factory=dict)

    def __getitem__(self, model: str) -> tuple[SegmentId, ...]:
        return self.entries[model]

    def __contains__(self, model: object) -> bool:
        return model in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def items(self):
        return self.entries.items()


_PAIR_TO_CONDITION = {
    (SourceType.SPH, SourceType.SPH): Condition.SPH_SPH,
    (SourceType.SPH, SourceType.FLAC): Condition.SPH_FLAC,
    (SourceType.FLAC, SourceType.SPH): Condition.FLAC_SPH,
    (SourceType.FLAC, SourceType.FLAC): Condition.FLAC_FLAC,
}


def tag_condition(enroll: SegmentId, test: SegmentId,
                  policy: Policy = Policy.UNORDERED) -> Condition:
    cond = _PAIR_TO_CONDITION.get((enroll.source_type, test.source_type), Condition.OTHER)
    if policy is Policy.UNORDERED and cond is Condition.FLAC_SPH:
        return Condition.SPH_FLAC
    return cond


def canonical_condition(cond: Condition, policy: Policy) -> Condition:
    if policy is Policy.UNORDERED and cond is Condition.FLAC_SPH:
        return Condition.SPH_FLAC
    return cond


def _rows(text: str, min_fields: int, max_fields: int):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) < min_fields or len(fields) > max_fields or not all(fields):
            raise ParseError(
                f"expected {min_fields}..{max_fields} non-empty tab-separated fields, got {line!r}",
                lineno)
        yield lineno, fields


def parse_enrollment_map(text: str) -> EnrollmentMap:
    entries: dict[str, list[SegmentId]] = {}
    seen = set()
    for lineno, (model, seg) in _rows(text, 2, 2):
        if (model, seg) in seen:
            raise ParseError(f"duplicate enrollment pair ({model}, {seg})", lineno)
        seen.add((model, seg))
        try:
            segment = SegmentId.from_name(seg)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        entries.setdefault(model, []).append(segment)
    return EnrollmentMap({m: tuple(s) for m, s in entries.items()})


def parse_trial_list(text: str, enroll_map: EnrollmentMap | None = None,
                     policy: Policy = Policy.UNORDERED,
                     duplicates: str = "reject") -> list[TrialRecord]:
    """Parse ``model<TAB>segment[<TAB>condition]`` lines.

    Without an override column the condition is tagged from the first
    enrollment segment of the model and the test segment. Models missing from
    ``enroll_map`` get OTHER. ``duplicates`` is ``"reject"`` or ``"keep-first"``.
    """
    if duplicates not in ("reject", "keep-first"):
        raise ValueError(f"bad duplicates mode {duplicates!r}")
    trials = []
    seen = set()
    for lineno, fields in _rows(text, 2, 3):
        model, seg = fields[0], fields[1]
        if (model, seg) in seen:
            if duplicates == "reject":
                raise ParseError(f"duplicate trial ({model}, {seg})", lineno)
            continue
        seen.add((model, seg))
        try:
            segment = SegmentId.from_name(seg)
            if len(fields) == 3:
                cond = canonical_condition(Condition.parse(fields[2]), policy)
            else:
                enrolled = enroll_map.entries.get(model) if enroll_map is not None else None
                if enrolled:
                    cond = tag_condition(enrolled[0], segment, policy)
                else:
                    cond = Condition.OTHER
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        trials.append(TrialRecord(model, segment, cond))
    return trials


def parse_trial_key(text: str) -> dict[tuple[str, str], Label]:
    key = {}
    for lineno, (model, seg, tok) in _rows(text, 3, 3):
        try:
            key[(model, seg)] = Label.parse(tok)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    return key


def format_trial_list(trials, with_condition: bool = True) -> str:
    lines = []
    for t in trials:
        row = [t.model, t.segment.id]
        if with_condition:
            row.append(t.condition.value)
        lines.append("\t".join(row))
    return "".join(line + "\n" for line in lines)


def format_trial_key(key: dict[tuple[str, str], Label]) -> str:
    return "".join(f"{m}\t{s}\t{lab.value}\n" for (m, s), lab in key.items())


def format_enrollment_map(emap: EnrollmentMap) -> str:
    return "".join(f"{m}\t{s.id}\n" for m, segs in emap.items() for s in segs)


def partition_trials(trials) -> dict[Condition, list[TrialRecord]]:
    """Group trials by condition, keeping input order inside each group."""
    parts: dict[Condition, list[TrialRecord]] = {}
    for t in trials:
        parts.setdefault(t.condition, []).append(t)
    return parts


def read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()
