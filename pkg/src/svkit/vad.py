"""Energy-based voice activity detection and diarization masks.

The energy VAD follows the usual Kaldi ``compute-vad`` convention: a frame is
speech when its log-energy exceeds
``energy_threshold + mean_scale * mean(log_energy)``, optionally smoothed by
a proportion vote over a symmetric context window.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

ENERGY_FLOOR = 1e-10


class WavError(ValueError):
    pass


class NonPcmError(WavError):
    pass


class MultiChannelError(WavError):
    pass


class MalformedWavError(WavError):
    pass


@dataclass(frozen=True)
class AudioClip:
    sample_rate: int
    samples: np.ndarray

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FrameSpec:
    frame_len_ms: float = 25.0
    shift_ms: float = 10.0

    def __post_init__(self):
        if not 0 < self.shift_ms <= self.frame_len_ms:
            raise ValueError("need 0 < shift_ms <= frame_len_ms")

    def frame_len(self, sample_rate: int) -> int:
        return int(round(self.frame_len_ms * sample_rate / 1000.0))

    def shift(self, sample_rate: int) -> int:
        return int(round(self.shift_ms * sample_rate / 1000.0))

    def num_frames(self, n_samples: int, sample_rate: int) -> int:
        flen = self.frame_len(sample_rate)
        if n_samples < flen:
            return 0
        return 1 + (n_samples - flen) // self.shift(sample_rate)


@dataclass(frozen=True)
class VadParams:
    energy_threshold: float = 5.0
    mean_scale: float = 0.5
    proportion_threshold: float = 0.6
    context_frames: int = 0

    def __post_init__(self):
        if not 0 < self.proportion_threshold <= 1:
            raise ValueError("proportion_threshold must be in (0, 1]")
        if self.context_frames < 0:
            raise ValueError("context_frames must be non-negative")


@dataclass(frozen=True)
class DiarSegment:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(f"invalid segment [{self.start_s}, {self.end_s}]")


def frame_log_energy(clip: AudioClip, spec: FrameSpec = FrameSpec()) -> np.ndarray:
    flen = spec.frame_len(clip.sample_rate)
    shift = spec.shift(clip.sample_rate)
    n = spec.num_frames(len(clip.samples), clip.sample_rate)
    if n == 0:
        raise ValueError(f"clip of {len(clip.samples)} samples is shorter than one frame ({flen})")
    x = np.asarray(clip.samples, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, flen)[::shift][:n]
    energy = np.einsum("ij,ij->i", frames, frames)
    return np.log(np.maximum(energy, ENERGY_FLOOR))


def energy_vad(energies, params: VadParams = VadParams()) -> np.ndarray:
    e = np.asarray(energies, dtype=np.float64)
    if e.size == 0:
        raise ValueError("no frames")
    threshold = params.energy_threshold + params.mean_scale * e.mean()
    above = e > threshold
    ctx = params.context_frames
    if ctx == 0:
        return above
    # windowed vote, window clipped at the signal edges
    csum = np.concatenate([[0], np.cumsum(above)])
    idx = np.arange(e.size)
    lo = np.maximum(idx - ctx, 0)
    hi = np.minimum(idx + ctx + 1, e.size)
    return (csum[hi] - csum[lo]) >= params.proportion_threshold * (hi - lo)


def apply_mask(clip: AudioClip, mask, spec: FrameSpec = FrameSpec()) -> AudioClip:
    """Keep the shift-sized hop of every voiced frame; the last voiced frame
    keeps its full frame length."""
    mask = np.asarray(mask, dtype=bool)
    n = spec.num_frames(len(clip.samples), clip.sample_rate)
    if mask.shape != (n,):
        raise ValueError(f"mask has {mask.size} frames, clip has {n}")
    voiced = np.flatnonzero(mask)
    if voiced.size == 0:
        return AudioClip(clip.sample_rate, np.zeros(0, dtype=np.float64))
    shift = spec.shift(clip.sample_rate)
    flen = spec.frame_len(clip.sample_rate)
    starts = voiced * shift
    ends = starts + shift
    ends[-1] = starts[-1] + flen
    samples = np.asarray(clip.samples)
    return AudioClip(clip.sample_rate,
                     np.concatenate([samples[s:e] for s, e in zip(starts, ends)]))


def merge_segments(segments) -> list[tuple[float, float]]:
    spans = sorted((s.start_s, s.end_s) for s in segments)
    merged: list[list[float]] = []
    for start, end in spans:
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(s, e) for s, e in merged]


def apply_diar_segments(clip: AudioClip, segments) -> AudioClip:
    samples = np.asarray(clip.samples)
    n = len(samples)
    pieces = []
    for start_s, end_s in merge_segments(segments):
        lo = min(max(int(round(start_s * clip.sample_rate)), 0), n)
        hi = min(max(int(round(end_s * clip.sample_rate)), 0), n)
        if hi > lo:
            pieces.append(samples[lo:hi])
    out = np.concatenate(pieces) if pieces else np.zeros(0, dtype=samples.dtype)
    return AudioClip(clip.sample_rate, out)


def speech_duration(mask, spec: FrameSpec = FrameSpec()) -> float:
    return int(np.count_nonzero(mask)) * spec.shift_ms / 1000.0


def read_wav(path) -> AudioClip:
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1:
                raise MultiChannelError(f"{path}: {w.getnchannels()} channels, need mono")
            if w.getsampwidth() != 2:
                raise NonPcmError(f"{path}: {8 * w.getsampwidth()}-bit samples, need 16-bit PCM")
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise NonPcmError(f"{path}: {exc}") from None
        raise MalformedWavError(f"{path}: {exc}") from None
    except EOFError as exc:
        raise MalformedWavError(f"{path}: truncated header") from exc
    if len(raw) % 2:
        raise MalformedWavError(f"{path}: odd data length")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(rate, samples)


def write_wav(path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate)
        w.writeframes(pcm.tobytes())


def parse_diar_file(text: str) -> dict[str, list[DiarSegment]]:
    """``segment_key<TAB>start_s<TAB>end_s`` rows, grouped by key."""
    out: dict[str, list[DiarSegment]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"line {lineno}: expected 3 fields")
        try:
            seg = DiarSegment(float(fields[1]), float(fields[2]))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        out.setdefault(fields[0].strip(), []).append(seg)
    return out
