"""Command-line interface: ``jointcbf {enhance,simulate,bench,selftest}``.

Exit codes: 0 success, 1 input error, 2 numerical failure.

Precedence for every option is config file > command-line flag > default.
The thread count additionally falls back to ``$JOINTCBF_THREADS`` when
neither the config file nor ``--threads`` sets it.

Run logs are JSON lines. Keys ending in ``_s`` hold wall-clock timings; all
other fields are deterministic for a given invocation.
"""

import argparse
import configparser
import json
import math
import os
import statistics
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .maskio import MaskFormatError, read_masks, write_masks
from .numerics import NumericalError
from .optimizer import DEFAULT_BAND_TAPS, METHODS, RunConfig, enhance
from .sim import Scene, generate, load_scene, match_sources, oracle_masks, save_scene, sdr
from .stft import Spectrogram, analyze, read_wav, synthesize, write_wav

THREADS_ENV = "JOINTCBF_THREADS"
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2

_ALIASES = {
    "cascade_mpdr_separate": "cascade_mpdr",
    "cascade_mvdr_separate": "cascade_mvdr",
}


class InputError(Exception):
    pass


def parse_method(name):
    key = name.strip().lower().replace("-", "_")
    key = _ALIASES.get(key, key)
    if key not in METHODS:
        choices = ", ".join(m.replace("_", "-") for m in METHODS)
        raise argparse.ArgumentTypeError(f"unknown method {name!r} (choose from {choices})")
    return key


def parse_band_taps(text):
    """``"800:20,1500:16,inf:8"`` -> ``((800.0, 20), (1500.0, 16), (inf, 8))``."""
    bands = []
    try:
        for item in text.split(","):
            edge, L = item.split(":")
            bands.append((float(edge), int(L)))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad band table {text!r}; expected EDGE:L,...") from None
    if not bands or any(b[0] <= a[0] for a, b in zip(bands, bands[1:])):
        raise argparse.ArgumentTypeError("band edges must increase")
    return tuple(bands)


def _format_band_taps(bands):
    return ",".join(f"{'inf' if math.isinf(e) else f'{e:g}'}:{L}" for e, L in bands)


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


# ---------------------------------------------------------------------------
# run log
# ---------------------------------------------------------------------------


class RunLog:
    def __init__(self, path=None):
        self._fh = open(path, "w") if path else None

    def write(self, event, **fields):
        if self._fh is None:
            return
        record = {"event": event, **fields}
        self._fh.write(json.dumps(record, sort_keys=True, default=_jsonable) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, (tuple, np.ndarray)):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def strip_timing(record):
    """Drop the wall-clock fields of a log record."""
    return {k: v for k, v in record.items() if not k.endswith("_s")}


def _log_traces(log, traces, per_source):
    for idx, trace in enumerate(traces):
        source = idx if per_source else "all"
        for k in range(trace.iterations):
            log.write("iteration", source=source, iteration=k + 1, objective=trace.objective[k],
                      residual=trace.residual[k], elapsed_s=trace.elapsed[k])


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_run_options(p):
    p.add_argument("--method", type=parse_method, default="source_wise",
                   help="source-wise, miso-direct, source-packed-fast, source-packed-brute, "
                        "cascade-mpdr-separate, cascade-mvdr-separate, "
                        "cascade-wmpdr-separate, cascade-mpdr-integrated")
    p.add_argument("--iters", type=_positive_int, default=10, help="iterations (default 10)")
    p.add_argument("--delta", type=_positive_int, default=4, help="prediction delay in frames")
    p.add_argument("--taps", type=_positive_int, default=None,
                   help="one filter length L for all bins (overrides --band-taps)")
    p.add_argument("--band-taps", type=parse_band_taps, default=DEFAULT_BAND_TAPS,
                   help="per-band filter lengths as EDGE_HZ:L,... (default 800:20,1500:16,inf:8)")
    p.add_argument("--floor", type=float, default=1e-6, help="relative variance floor")
    p.add_argument("--loading", type=float, default=1e-8, help="relative diagonal loading")
    p.add_argument("--no-complement", action="store_true",
                   help="disable the orthogonal-complement terms (source-packed only)")
    p.add_argument("--ref", type=int, default=0, help="reference microphone")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker threads (default ${THREADS_ENV} or 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="jointcbf", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance a multichannel recording given masks")
    p.add_argument("input", nargs="?", help="multichannel WAV")
    p.add_argument("masks", nargs="?", help="mask file")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--oracle", metavar="SCENE",
                   help="generate the scene in the STFT domain and use oracle masks")
    p.add_argument("--frame-len", type=_positive_int, default=None)
    p.add_argument("--frame-shift", type=_positive_int, default=None)
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    p.add_argument("--log", help="run log path (default OUTPUT/run.jsonl)")
    p.add_argument("--config", help="INI file whose [enhance] section overrides flags")
    _add_run_options(p)

    p = sub.add_parser("simulate", help="write a synthetic scene, its references and oracle masks")
    p.add_argument("scene", nargs="?", help="scene description file (INI)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--frames", type=_positive_int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32")
    p.add_argument("--log")
    p.add_argument("--config")

    p = sub.add_parser("bench", help="time the joint optimizers on a fixed synthetic scene")
    p.add_argument("--mics", type=_positive_int, default=8)
    p.add_argument("--sources", type=_positive_int, default=2)
    p.add_argument("--bins", type=_positive_int, default=5)
    p.add_argument("--frames", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=_positive_int, default=1)
    p.add_argument("--methods", default="source-wise,source-packed-fast,source-packed-brute")
    p.add_argument("--assert-order", action="store_true",
                   help="require source-wise < source-packed-fast < 0.5 x source-packed-brute")
    p.add_argument("--log")
    p.add_argument("--config")
    _add_run_options(p)
    p.set_defaults(iters=3, taps=6, delta=2)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log")
    p.add_argument("--config")
    p.add_argument("--threads", type=_positive_int, default=None)
    return parser


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def apply_config(parser, args):
    """Override parsed flags with ``[<command>]`` (and ``[jointcbf]``) keys from ``args.config``."""
    if not getattr(args, "config", None):
        return args
    cfg = configparser.ConfigParser()
    try:
        if not cfg.read(args.config):
            raise InputError(f"config file not found: {args.config}")
    except configparser.Error as exc:
        raise InputError(f"{args.config}: {exc}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    for section in ("jointcbf", args.command):
        if section not in cfg:
            continue
        for key, raw in cfg[section].items():
            dest = key.replace("-", "_")
            if dest not in actions:
                raise InputError(f"{args.config}: unknown key {key!r} in [{section}]")
            action = actions[dest]
            try:
                if isinstance(action, argparse._StoreTrueAction):
                    value = _bool(raw)
                elif action.type is not None:
                    value = action.type(raw)
                else:
                    value = raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise InputError(f"{args.config}: {key}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise InputError(f"{args.config}: {key} must be one of {list(action.choices)}")
            setattr(args, dest, value)
    return args


def resolve_threads(value):
    if value is not None:
        return value
    env = os.environ.get(THREADS_ENV)
    if not env:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise InputError(f"${THREADS_ENV} must be a positive integer, got {env!r}") from None
    if n < 1:
        raise InputError(f"${THREADS_ENV} must be a positive integer, got {env!r}")
    return n


def run_config(args, method=None):
    try:
        return RunConfig(method=method or args.method, iterations=args.iters, delta=args.delta,
                         taps=args.taps, band_taps=args.band_taps, variance_floor=args.floor,
                         loading=args.loading, complement=not args.no_complement, ref=args.ref,
                         threads=resolve_threads(args.threads))
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _config_record(cfg):
    record = asdict(cfg)
    record["band_taps"] = _format_band_taps(cfg.band_taps)
    return record


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _load_scene(path):
    try:
        return load_scene(path)
    except (OSError, ValueError, configparser.Error) as exc:
        raise InputError(f"cannot read scene {path}: {exc}") from None


def cmd_enhance(args, log):
    out_dir = Path(args.output)
    references = None
    if args.oracle:
        if args.input or args.masks:
            raise InputError("--oracle replaces the input and mask arguments")
        scene, frames, seed = _load_scene(args.oracle)
        spec, gt = generate(scene, frames, seed)
        masks = oracle_masks(gt)
        references = gt.reference
        inputs = {"oracle": args.oracle, "frames": frames, "seed": seed}
    else:
        if not (args.input and args.masks):
            raise InputError("enhance needs INPUT.wav and MASKS (or --oracle SCENE)")
        try:
            signal, rate = read_wav(args.input)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot read {args.input}: {exc}") from None
        try:
            masks, header = read_masks(args.masks, with_header=True)
        except (OSError, MaskFormatError) as exc:
            raise InputError(f"cannot read masks: {exc}") from None
        frame_len = args.frame_len or header.get("frame_len", 512)
        frame_shift = args.frame_shift or header.get("frame_shift", 128)
        try:
            spec = analyze(signal, frame_len, frame_shift, sample_rate=rate)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        if masks.shape[1:] != (spec.n_frames, spec.n_bins):
            raise InputError(f"masks cover (frames, bins) = {masks.shape[1:]} but the input "
                             f"analyzes to {(spec.n_frames, spec.n_bins)}")
        inputs = {"input": args.input, "masks": args.masks}
    if masks.shape[0] > spec.n_channels:
        raise InputError(f"{masks.shape[0]} masks for {spec.n_channels} microphones")

    cfg = run_config(args)
    log.write("start", command="enhance", config=_config_record(cfg), inputs=inputs,
              channels=spec.n_channels, frames=spec.n_frames, bins=spec.n_bins,
              sources=masks.shape[0])
    t0 = time.perf_counter()
    Y, traces = enhance(spec, masks, cfg)
    _log_traces(log, traces, per_source=len(traces) > 1)

    out_dir.mkdir(parents=True, exist_ok=True)
    perm = match_sources(Y, references) if references is not None else None
    for i in range(Y.shape[0]):
        est = Spectrogram(Y[i][None], spec.frame_len, spec.frame_shift, spec.sample_rate,
                          spec.n_samples)
        path = out_dir / f"src{i}.wav"
        write_wav(path, synthesize(est)[0], spec.sample_rate, args.format)
        fields = {"source": i, "path": str(path)}
        if perm is not None:
            fields["sdr_db"] = sdr(Y[perm[i]], references[i])
        log.write("output", **fields)
    log.write("end", status=EXIT_OK, elapsed_s=time.perf_counter() - t0)
    return EXIT_OK


def _project(spec, components):
    """Time-domain round trip of STFT-domain components, as the WAV path sees them."""
    out = []
    for comp in components:
        frame = Spectrogram(comp, spec.frame_len, spec.frame_shift, spec.sample_rate)
        wav = synthesize(frame)
        out.append(analyze(wav, spec.frame_len, spec.frame_shift, sample_rate=spec.sample_rate).data)
    return out


def simulate_scene(scene, frames, seed, out_dir, sample_format="float32"):
    """Write mix.wav, ref{i}.wav, masks.bin, scene.ini and truth.npz into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec, gt = generate(scene, frames, seed)
    mix = synthesize(spec)
    scale = 1.0
    if sample_format == "pcm16":
        scale = 0.9 / max(np.max(np.abs(mix)), 1e-12)
    write_wav(out_dir / "mix.wav", scale * mix, spec.sample_rate, sample_format)
    refs = []
    for i in range(scene.n_sources):
        ref_spec = Spectrogram(gt.desired[i, :1], spec.frame_len, spec.frame_shift, spec.sample_rate)
        refs.append(synthesize(ref_spec)[0])
        write_wav(out_dir / f"ref{i}.wav", scale * refs[-1], spec.sample_rate, sample_format)

    # masks are computed on the re-analyzed components so they line up with analyze(mix.wav)
    desired = _project(spec, [gt.desired[i] for i in range(scene.n_sources)])
    late = _project(spec, [gt.late[i] for i in range(scene.n_sources)])
    (noise,) = _project(spec, [gt.noise])
    power = np.array([np.abs(d[0]) ** 2 for d in desired])
    total = power.sum(0) + sum(np.abs(r[0]) ** 2 for r in late) + np.abs(noise[0]) ** 2
    masks = np.clip(np.divide(power, total, out=np.zeros_like(power), where=total > 0), 0, 1)
    write_masks(out_dir / "masks.bin", masks, spec.frame_len, spec.frame_shift)
    save_scene(out_dir / "scene.ini", scene, frames, seed)
    np.savez(out_dir / "truth.npz", observation=spec.data, dry=gt.dry, steering=gt.steering,
             late_filters=gt.late_filters, desired=gt.desired, late=gt.late, noise=gt.noise,
             scale=scale)
    return spec, gt, masks


def cmd_simulate(args, log):
    if args.scene:
        scene, frames, seed = _load_scene(args.scene)
    else:
        scene, frames, seed = Scene(), 500, 0
    frames = args.frames or frames
    seed = seed if args.seed is None else args.seed
    log.write("start", command="simulate", scene=asdict(scene), frames=frames, seed=seed)
    spec, _, masks = simulate_scene(scene, frames, seed, args.output, args.format)
    log.write("output", path=str(args.output), channels=spec.n_channels, frames=spec.n_frames,
              bins=spec.n_bins, sources=masks.shape[0])
    log.write("end", status=EXIT_OK)
    return EXIT_OK


def cmd_bench(args, log):
    try:
        methods = [parse_method(m) for m in args.methods.split(",") if m.strip()]
        scene = Scene(n_sources=args.sources, n_mics=args.mics, n_bins=args.bins,
                      late_taps=max(args.taps or 8, args.delta + 1), delta=args.delta,
                      noise_level=0.05)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise InputError(str(exc)) from None
    spec, gt = generate(scene, args.frames, args.seed)
    masks = oracle_masks(gt)
    log.write("start", command="bench", scene=asdict(scene), frames=args.frames,
              seed=args.seed, repeat=args.repeat, methods=methods)
    timings = {}
    for method in methods:
        cfg = run_config(args, method)
        runs = []
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            enhance(spec, masks, cfg)
            runs.append(time.perf_counter() - t0)
        timings[method] = runs
        log.write("timing", method=method, min_s=min(runs), median_s=statistics.median(runs))

    print(f"{'method':<26}{'min [s]':>10}{'median [s]':>12}")
    for method, runs in timings.items():
        print(f"{method.replace('_', '-'):<26}{min(runs):>10.3f}{statistics.median(runs):>12.3f}")

    status = EXIT_OK
    if args.assert_order:
        needed = ("source_wise", "source_packed_fast", "source_packed_brute")
        if any(m not in timings for m in needed):
            raise InputError("--assert-order needs source-wise, source-packed-fast and "
                             "source-packed-brute in --methods")
        sw, fast, brute = (min(timings[m]) for m in needed)
        ok = sw < fast < 0.5 * brute
        print(f"order source-wise < source-packed-fast < 0.5 x brute: {'PASS' if ok else 'FAIL'}")
        log.write("order", passed=ok)
        status = EXIT_OK if ok else EXIT_INPUT
    log.write("end", status=status)
    return status


def cmd_selftest(args, log):
    from .selftest import run_checks

    log.write("start", command="selftest", seed=args.seed)
    failed = 0
    for name, ok, detail in run_checks(args.seed, resolve_threads(args.threads)):
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        log.write("check", name=name, passed=ok, detail=detail)
        failed += not ok
    status = EXIT_OK if failed == 0 else EXIT_NUMERICAL
    log.write("end", status=status, failed=failed)
    return status


COMMANDS = {"enhance": cmd_enhance, "simulate": cmd_simulate, "bench": cmd_bench,
            "selftest": cmd_selftest}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    log = None
    try:
        args = apply_config(parser, args)
        log_path = args.log
        if log_path is None and args.command == "enhance":
            Path(args.output).mkdir(parents=True, exist_ok=True)
            log_path = str(Path(args.output) / "run.jsonl")
        log = RunLog(log_path)
        return COMMANDS[args.command](args, log)
    except InputError as exc:
        print(f"jointcbf: error: {exc}", file=sys.stderr)
        if log:
            log.write("error", kind="input", message=str(exc))
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"jointcbf: numerical failure: {exc}", file=sys.stderr)
        if log:
            log.write("error", kind="numerical", message=str(exc))
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        # invalid data that slipped past the front-end checks
        print(f"jointcbf: error: {exc}", file=sys.stderr)
        if log:
            log.write("error", kind="input", message=str(exc))
        return EXIT_INPUT
    finally:
        if log:
            log.close()


if __name__ == "__main__":
    sys.exit(main())
