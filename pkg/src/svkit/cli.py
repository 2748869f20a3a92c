"""``svkit`` command line: score, calibrate, apply-cal, evaluate, fuse, vad,
synth and train-plda.

Options can come from a flat ``key = value`` config file (``--config``);
command-line flags override it. Exit codes: 0 success, 2 usage or
configuration error, 3 data error (always for unreadable inputs, and for
recoverable problems such as missing embeddings when ``--strict`` is set).
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import os
import sys
import time
from dataclasses import replace

from . import __version__
from .calibration import (CalibrationError, format_calibration, parse_calibration,
                          train_per_condition)
from .embedstore import EmbeddingError, read_store, write_store
from .fusion import FusionError, FusionMode, FusionSpec, check_weights, fuse_embeddings, fuse_scores
from .metrics import (MetricsError, OperatingPoint, det_curve, format_det, format_report,
                      pooled_report)
from .plda import PldaError, plda_train_em, read_plda, write_plda
from .scoring import (MissingEmbeddingError, attach, compute_rtf, format_scores, parse_scores,
                      score_trials)
from .synthgen import InfeasibleWorldError, SpeakerWorldSpec, dump_world, generate_world
from .trialset import (Condition, EnrollmentMap, Label, ParseError, Policy, parse_enrollment_map,
                       parse_trial_key, parse_trial_list, read_text)
from .vad import (FrameSpec, VadParams, WavError, apply_diar_segments, apply_mask, energy_vad,
                  frame_log_energy, parse_diar_file, read_wav, speech_duration, write_wav)

log = logging.getLogger("svkit")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

# option dests that never change output content
_NOT_HASHED = {"config", "workers", "verbose", "command", "func"}


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def load_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment line."""
    cfg = {}
    try:
        text = read_text(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        cfg[key.replace("-", "_")] = value
    return cfg


def _is_path_option(dest: str) -> bool:
    return dest in ("out", "out_dir", "det_dir", "report", "diar", "wav", "wav_list",
                    "pairs", "calibration", "plda_model", "scores") or dest.endswith(
                        ("_store", "_map", "trials", "keys", "labels"))


def config_hash(args: argparse.Namespace) -> str:
    items = sorted((k, str(v)) for k, v in vars(args).items()
                   if k not in _NOT_HASHED and not _is_path_option(k))
    return hashlib.sha256(repr(items).encode()).hexdigest()[:16]


def header(args) -> str:
    return f"# svkit {__version__} {args.command} config={config_hash(args)}\n"


def write_output(path, args, body: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header(args))
        fh.write(body)


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {value!r}")


def _floats(value) -> list[float]:
    if isinstance(value, list):
        return value
    try:
        return [float(x) for x in str(value).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {value!r}") from None


def _paths(value) -> list[str]:
    if isinstance(value, list):
        return value
    return [x.strip() for x in str(value).split(",") if x.strip()]


def _need(args, *names):
    for name in names:
        val = getattr(args, name, None)
        if val in (None, "", []):
            raise ConfigError(f"missing required option --{name.replace('_', '-')}")


def _need_file(args, *names):
    _need(args, *names)
    for name in names:
        vals = getattr(args, name)
        for p in (vals if isinstance(vals, list) else [vals]):
            if not os.path.exists(p):
                raise ConfigError(f"--{name.replace('_', '-')}: no such file {p}")


def _read(path: str) -> str:
    try:
        return read_text(path)
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_trials(args, enroll_map: EnrollmentMap | None):
    try:
        return parse_trial_list(_read(args.trials), enroll_map, Policy(args.policy),
                                duplicates="reject" if args.strict else "keep-first")
    except ParseError as exc:
        raise DataError(f"{args.trials}: {exc}") from None


def _load_enroll_map(path) -> EnrollmentMap | None:
    if not path:
        return None
    try:
        return parse_enrollment_map(_read(path))
    except ParseError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_keys(path):
    try:
        return parse_trial_key(_read(path))
    except ParseError as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_store(path, fmt):
    try:
        return read_store(path, None if fmt == "auto" else fmt)
    except (EmbeddingError, OSError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_scores(path):
    try:
        return parse_scores(_read(path))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _labelled(args, records):
    missing = [r for r in records if r.label is None]
    if missing:
        msg = f"{len(missing)} scored trials have no key entry"
        if args.strict:
            raise DataError(msg)
        log.warning("%s; ignored", msg)
    return [r for r in records if r.label is not None]


# -- commands ----------------------------------------------------------------

def cmd_score(args) -> int:
    _need_file(args, "enroll_store", "test_store", "enroll_map", "trials")
    _need(args, "out")
    if args.backend == "plda":
        _need_file(args, "plda_model")
    enroll_map = _load_enroll_map(args.enroll_map)
    trials = _load_trials(args, enroll_map)
    enroll = _load_store(args.enroll_store, args.store_format)
    test = _load_store(args.test_store, args.store_format)
    backend = "cosine"
    if args.backend == "plda":
        try:
            backend = read_plda(args.plda_model)
        except (PldaError, OSError) as exc:
            raise DataError(f"{args.plda_model}: {exc}") from None
    t0 = time.perf_counter()
    try:
        result = score_trials(enroll, test, enroll_map, trials, backend,
                              strict=args.strict, workers=args.workers)
    except MissingEmbeddingError as exc:
        raise DataError(str(exc.args[0])) from None
    elapsed = time.perf_counter() - t0
    write_output(args.out, args, format_scores(result.records))
    for i, msg in result.errors[:20]:
        log.warning("trial %d skipped: %s", i, msg)
    rate = len(result.records) / elapsed if elapsed > 0 else float("inf")
    print(f"scored {len(result.records)} of {len(trials)} trials in {elapsed:.3f} s "
          f"({rate:.0f} trials/s, backend={args.backend}, workers={args.workers})")
    if result.errors:
        print(f"warning: {len(result.errors)} trials skipped for missing embeddings")
    return EXIT_OK


def _scored_records(args, with_keys: bool):
    enroll_map = _load_enroll_map(args.enroll_map)
    trials = _load_trials(args, enroll_map)
    rows = _load_scores(args.scores)
    keys = _load_keys(args.keys) if with_keys else None
    return attach(rows, trials, keys)


def cmd_calibrate(args) -> int:
    _need_file(args, "scores", "keys", "trials")
    _need(args, "out")
    if not 0 < args.prior < 1:
        raise ConfigError("--prior must be in (0, 1)")
    records = _labelled(args, _scored_records(args, with_keys=True))
    parts: dict[Condition, tuple[list, list]] = {}
    for r in records:
        s, lab = parts.setdefault(r.condition, ([], []))
        s.append(r.score)
        lab.append(r.label)
    try:
        cal_set = train_per_condition(parts, prior=args.prior, ridge=args.ridge,
                                      max_iters=args.max_iters, tol=args.tol,
                                      min_trials_per_class=args.min_trials)
    except CalibrationError as exc:
        raise DataError(str(exc)) from None
    write_output(args.out, args, format_calibration(cal_set))
    fb = [c.value for c in parts if c not in cal_set.per_condition]
    print(f"calibrated {len(cal_set.per_condition)} conditions"
          + (f"; fallback used for {', '.join(fb)}" if fb else ""))
    return EXIT_OK


def cmd_apply_cal(args) -> int:
    _need_file(args, "scores", "calibration", "trials")
    _need(args, "out")
    records = _scored_records(args, with_keys=False)
    try:
        cal_set = parse_calibration(_read(args.calibration))
    except CalibrationError as exc:
        raise DataError(f"{args.calibration}: {exc}") from None
    out = [replace(r, score=cal_set.apply(r.score, r.condition)) for r in records]
    write_output(args.out, args, format_scores(out))
    print(f"calibrated {len(out)} scores")
    return EXIT_OK


def _operating_points(args) -> list[OperatingPoint]:
    try:
        return [OperatingPoint(p, args.c_miss, args.c_fa) for p in args.p_target]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_evaluate(args) -> int:
    _need_file(args, "scores", "keys", "trials")
    _need(args, "out")
    ops = _operating_points(args)
    records = _labelled(args, _scored_records(args, with_keys=True))
    try:
        pr = pooled_report(records, ops)
    except MetricsError as exc:
        raise DataError(str(exc)) from None
    for cond, why in pr.skipped.items():
        msg = f"condition {cond.value} skipped: {why}"
        if args.strict:
            raise DataError(msg)
        print(f"warning: {msg}")
    text = format_report(args.system, pr)
    write_output(args.out, args, text)
    if args.det_dir:
        groups = {"POOLED": records}
        for r in records:
            if r.condition in pr.per_condition:
                groups.setdefault(r.condition.value, []).append(r)
        for name, rs in groups.items():
            curve = det_curve([r.score for r in rs], [r.label for r in rs])
            write_output(os.path.join(args.det_dir, f"det_{name}.tsv"), args, format_det(curve))
    print(f"{'system':<12}{'condition':<12}{'EER(%)':>8}{'min_C':>8}{'act_C':>8}")
    for line in text.splitlines()[1:]:
        f = line.split("\t")
        print(f"{f[0]:<12}{f[1]:<12}{f[4]:>8}{f[5]:>8}{f[6]:>8}")
    return EXIT_OK


def _read_pairs(path) -> dict[str, tuple[str, str]]:
    pairs = {}
    for lineno, line in enumerate(_read(path).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split("\t")
        if len(f) != 3:
            raise DataError(f"{path}:{lineno}: expected out_key, audio_key, face_key")
        pairs[f[0]] = (f[1], f[2])
    return pairs


def cmd_fuse(args) -> int:
    _need(args, "out")
    mode = FusionMode(args.mode)
    if mode is FusionMode.EMBED_CONCAT:
        if args.weights:
            raise ConfigError("--weights only applies to --mode score-sum")
        _need_file(args, "audio_store", "face_store")
        audio = _load_store(args.audio_store, args.store_format)
        face = _load_store(args.face_store, args.store_format)
        if args.pairs:
            pairs = _read_pairs(args.pairs)
        else:
            pairs = {k: (k, k) for k in audio.keys() if k in face}
        try:
            fused = fuse_embeddings(audio, face, pairs,
                                    FusionSpec(mode, normalize_halves=args.normalize_halves))
        except FusionError as exc:
            raise DataError(str(exc)) from None
        fmt = "binary" if args.store_format == "auto" else args.store_format
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        write_store(fused, args.out, fmt)
        print(f"fused {len(fused)} embeddings, dim {fused.dim}")
        return EXIT_OK

    _need_file(args, "scores")
    weights = args.weights or [1.0 / len(args.scores)] * len(args.scores)
    if len(weights) != len(args.scores):
        raise ConfigError(f"{len(weights)} weights for {len(args.scores)} score files")
    try:
        check_weights(weights)
    except FusionError as exc:
        raise ConfigError(str(exc)) from None
    lists = [attach(_load_scores(p)) for p in args.scores]
    try:
        fused = fuse_scores(list(zip(weights, lists)))
    except FusionError as exc:
        raise DataError(str(exc)) from None
    write_output(args.out, args, format_scores(fused))
    print(f"fused {len(fused)} trial scores from {len(lists)} systems")
    return EXIT_OK


def cmd_vad(args) -> int:
    _need(args, "report")
    wavs = list(args.wav or [])
    if args.wav_list:
        _need_file(args, "wav_list")
        wavs += [ln.strip() for ln in _read(args.wav_list).splitlines()
                 if ln.strip() and not ln.startswith("#")]
    if not wavs:
        raise ConfigError("no input audio (use --wav or --wav-list)")
    try:
        spec = FrameSpec(args.frame_len_ms, args.shift_ms)
        params = VadParams(args.energy_threshold, args.mean_scale,
                           args.proportion_threshold, args.context_frames)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    diar = {}
    if args.diar:
        _need_file(args, "diar")
        try:
            diar = parse_diar_file(_read(args.diar))
        except ValueError as exc:
            raise DataError(f"{args.diar}: {exc}") from None

    rows = ["file\tmethod\taudio_s\tspeech_s\tstatus"]
    total_audio = total_speech = 0.0
    n_err = 0
    t0 = time.perf_counter()
    for path in wavs:
        key = os.path.splitext(os.path.basename(path))[0]
        try:
            clip = read_wav(path)
            if key in diar:
                method = "diar"
                out = apply_diar_segments(clip, diar[key])
                speech = len(out.samples) / clip.sample_rate
            else:
                method = "energy"
                mask = energy_vad(frame_log_energy(clip, spec), params)
                out = apply_mask(clip, mask, spec)
                speech = speech_duration(mask, spec)
        except (WavError, ValueError, OSError) as exc:
            n_err += 1
            rows.append(f"{path}\t-\t-\t-\terror: {exc}")
            continue
        if args.out_dir:
            os.makedirs(args.out_dir, exist_ok=True)
            write_wav(os.path.join(args.out_dir, key + ".wav"), out)
        total_audio += clip.duration
        total_speech += speech
        rows.append(f"{path}\t{method}\t{clip.duration:.3f}\t{speech:.3f}\tok")
    elapsed = time.perf_counter() - t0
    rows.append(f"TOTAL\t-\t{total_audio:.3f}\t{total_speech:.3f}\t{len(wavs) - n_err} ok, {n_err} errors")
    write_output(args.report, args, "\n".join(rows) + "\n")
    print(f"vad: {len(wavs) - n_err} files, {total_audio:.1f} s audio, {total_speech:.1f} s speech retained")
    if total_audio > 0:
        print(f"vad processing RTF: {compute_rtf(elapsed, total_audio).rtf:.5f}")
    if n_err:
        print(f"warning: {n_err} files failed")
        if args.strict:
            return EXIT_DATA
    return EXIT_OK


def _condition_mix(text: str) -> dict[Condition, float]:
    mix = {}
    for item in text.split(","):
        if not item.strip():
            continue
        name, _, frac = item.partition("=")
        try:
            mix[Condition.parse(name)] = float(frac)
        except ValueError as exc:
            raise ConfigError(f"--condition-mix: {exc}") from None
    return mix


def cmd_synth(args) -> int:
    _need(args, "out_dir")
    try:
        spec = SpeakerWorldSpec(args.n_speakers, args.utts_per_speaker, args.dim,
                                args.between_std, args.within_std, args.seed)
        m2 = tuple(args.modality2_std) if args.modality2_std else None
        if m2 is not None and len(m2) != 2:
            raise ValueError("--modality2-std needs between,within")
        world = generate_world(spec, args.target_ratio, args.n_trials,
                               _condition_mix(args.condition_mix), m2)
    except (ValueError, InfeasibleWorldError) as exc:
        raise ConfigError(str(exc)) from None
    fmt = "binary" if args.store_format == "auto" else args.store_format
    paths = dump_world(world, args.out_dir, fmt)
    n_tgt = sum(1 for v in world.keys.values() if v is Label.TARGET)
    print(f"synth: {len(world.trials)} trials ({n_tgt} target) written to {args.out_dir} "
          f"[{', '.join(sorted(os.path.basename(p) for p in paths.values()))}]")
    return EXIT_OK


def cmd_train_plda(args) -> int:
    _need_file(args, "train_store", "train_labels")
    _need(args, "out")
    store = _load_store(args.train_store, args.store_format)
    data = []
    for lineno, line in enumerate(_read(args.train_labels).splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split("\t")
        if len(f) != 2:
            raise DataError(f"{args.train_labels}:{lineno}: expected key, speaker")
        if f[0] not in store:
            if args.strict:
                raise DataError(f"{args.train_labels}:{lineno}: no embedding for {f[0]}")
            continue
        data.append((f[1], store[f[0]]))
    try:
        model = plda_train_em(data, args.max_iters, args.tol)
    except PldaError as exc:
        raise DataError(str(exc)) from None
    write_plda(model, args.out)
    print(f"trained PLDA on {len(data)} embeddings, dim {model.dim}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file; flags override it")
    common.add_argument("--strict", type=_bool, nargs="?", const=True, default=False)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--policy", choices=[p.value for p in Policy], default="unordered")
    common.add_argument("--store-format", choices=["auto", "binary", "text"], default="auto")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="svkit", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"svkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        sp.set_defaults(func=func)
        return sp

    def trial_inputs(sp, keys=True):
        sp.add_argument("--scores")
        sp.add_argument("--trials")
        sp.add_argument("--enroll-map")
        if keys:
            sp.add_argument("--keys")

    sp = add("score", cmd_score, "score trials from embedding stores")
    sp.add_argument("--enroll-store")
    sp.add_argument("--test-store")
    sp.add_argument("--enroll-map")
    sp.add_argument("--trials")
    sp.add_argument("--backend", choices=["cosine", "plda"], default="cosine")
    sp.add_argument("--plda-model")
    sp.add_argument("--out")

    sp = add("calibrate", cmd_calibrate, "train per-condition affine calibration")
    trial_inputs(sp)
    sp.add_argument("--prior", type=float, default=0.01)
    sp.add_argument("--ridge", type=float, default=0.0)
    sp.add_argument("--max-iters", type=int, default=100)
    sp.add_argument("--tol", type=float, default=1e-9)
    sp.add_argument("--min-trials", type=int, default=10)
    sp.add_argument("--out")

    sp = add("apply-cal", cmd_apply_cal, "map scores to LLRs with a calibration file")
    trial_inputs(sp, keys=False)
    sp.add_argument("--calibration")
    sp.add_argument("--out")

    sp = add("evaluate", cmd_evaluate, "EER / min_C / act_C report and DET curves")
    trial_inputs(sp)
    sp.add_argument("--p-target", type=_floats, default=[0.01],
                    help="comma list; costs are averaged over the points")
    sp.add_argument("--c-miss", type=float, default=1.0)
    sp.add_argument("--c-fa", type=float, default=1.0)
    sp.add_argument("--system", default="system")
    sp.add_argument("--det-dir")
    sp.add_argument("--out")

    sp = add("fuse", cmd_fuse, "audio-visual fusion of embeddings or scores")
    sp.add_argument("--mode", choices=[m.value for m in FusionMode], default="embed-concat")
    sp.add_argument("--audio-store")
    sp.add_argument("--face-store")
    sp.add_argument("--pairs", help="TSV out_key, audio_key, face_key")
    sp.add_argument("--normalize-halves", type=_bool, nargs="?", const=True, default=True)
    sp.add_argument("--scores", type=_paths, help="comma list of calibrated score files")
    sp.add_argument("--weights", type=_floats)
    sp.add_argument("--out")

    sp = add("vad", cmd_vad, "energy VAD / diarization trimming of WAV files")
    sp.add_argument("--wav", action="append")
    sp.add_argument("--wav-list")
    sp.add_argument("--diar", help="TSV key, start_s, end_s; overrides energy VAD per file")
    sp.add_argument("--out-dir")
    sp.add_argument("--report")
    sp.add_argument("--frame-len-ms", type=float, default=25.0)
    sp.add_argument("--shift-ms", type=float, default=10.0)
    sp.add_argument("--energy-threshold", type=float, default=5.0)
    sp.add_argument("--mean-scale", type=float, default=0.5)
    sp.add_argument("--proportion-threshold", type=float, default=0.6)
    sp.add_argument("--context-frames", type=int, default=0)

    sp = add("synth", cmd_synth, "generate a synthetic speaker world")
    sp.add_argument("--out-dir")
    sp.add_argument("--n-speakers", type=int, default=100)
    sp.add_argument("--utts-per-speaker", type=int, default=5)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--between-std", type=float, default=1.0)
    sp.add_argument("--within-std", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--target-ratio", type=float, default=0.1)
    sp.add_argument("--n-trials", type=int, default=1000)
    sp.add_argument("--condition-mix", default="SPH_SPH=1.0")
    sp.add_argument("--modality2-std", type=_floats)

    sp = add("train-plda", cmd_train_plda, "train a two-covariance PLDA model")
    sp.add_argument("--train-store")
    sp.add_argument("--train-labels", help="TSV key, speaker")
    sp.add_argument("--max-iters", type=int, default=50)
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.add_argument("--out")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for k, v in cfg.items():
            if k not in known or k in ("config", "help"):
                raise ConfigError(f"{args.config}: unknown key {k!r} for '{args.command}'")
            action = known[k]
            if isinstance(action, argparse._AppendAction):
                v = [x.strip() for x in v.split(",") if x.strip()]
            elif action.type is not None:
                try:
                    v = action.type(v)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise ConfigError(f"{args.config}: {k}: {exc}") from None
            if action.choices is not None and v not in action.choices:
                raise ConfigError(f"{args.config}: {k}: {v!r} not in {sorted(action.choices)}")
            defaults[k] = v
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"svkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"svkit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"svkit: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
