"""Command-line driver: ``sdrecog <size-window|simulate|session|sweep|fit|coverage>``.

Settings come from built-in defaults, then an optional flat ``key = value``
config file (``--config``), then command-line flags, later sources winning.
Config keys are the long flag names with ``-`` or ``_`` (``k_sigma = 3``).
Any failure prints one ``ERROR: ...`` line on stderr and exits nonzero.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from . import countermeasure as cm
from . import montecarlo as mc
from .keystream import (PRNG_NAME, Bernoulli, DetectorBank, DetectorId, DetectorModel, ErrorSchedule,
                        KeyStream, StreamConfig, read_stream, write_stream)
from .plot import write_trace
from .recognizer import Recognizer, RecognizerConfig, expected_recognition_fraction
from .stats import binary_entropy, min_entropy_per_bit, skr_cap, window_means, window_size


class CLIError(Exception):
    pass


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise ValueError(f"{v} is not a 64-bit unsigned integer")
    return v


def _int_list(text: str) -> list:
    vals = [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    if not vals:
        raise ValueError("empty list")
    return vals


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _mode(text: str) -> str:
    t = text.strip().lower()
    if t not in ("bernoulli", "detector"):
        raise ValueError("mode must be 'bernoulli' or 'detector'")
    return t


def _detector(text: str) -> DetectorId:
    return DetectorId.parse(text)


# key -> (type, help); every key is also a flag --key-with-dashes
OPTIONS = {
    "delta": (float, "precision delta_mu of the mean estimate"),
    "epsilon": (float, "failure probability epsilon of the estimate"),
    "threshold": (float, "recognition threshold t (default: delta)"),
    "mu_nominal": (float, "nominal raw-key mean"),
    "window": (int, "sliding window width in bits (default: Chernoff-Hoeffding minimum)"),
    "mode": (_mode, "stream model: bernoulli or detector"),
    "mean": (float, "pre-fault mean for bernoulli streams"),
    "post_mean": (float, "post-fault mean for bernoulli streams"),
    "onset": (int, "raw-key index at which the fault starts"),
    "eff_z0": (float, "efficiency of the |0> detector"),
    "eff_z1": (float, "efficiency of the |1> detector"),
    "eff_x0": (float, "efficiency of the |+> detector"),
    "eff_x1": (float, "efficiency of the |-> detector"),
    "fault_detector": (_detector, "detector hit by the fault (Z0, Z1, X0, X1)"),
    "fault_efficiency": (float, "efficiency of the faulty detector after onset"),
    "k_sigma": (float, "discard margin in standard deviations"),
    "length": (int, "raw-key bits to generate"),
    "stride": (int, "time-series downsampling stride"),
    "plot": (_bool, "also write an SVG trace"),
    "dump_stream": (_bool, "also write the generated stream"),
    "replay": (str, "read the stream from a dump file instead of generating it"),
    "post_bits": (int, "raw-key bits generated after the protocol switch"),
    "sizes": (_int_list, "comma-separated window sizes"),
    "trials": (int, "trials per window size"),
    "workers": (int, "worker processes for Monte Carlo trials"),
    "horizon": (int, "give up on a trial after this many windows past onset"),
    "models": (str, "fit file (from 'fit') overriding the published regression models"),
}

COMMON = {"seed": (_u64, "64-bit seed"), "out": (str, "output directory")}

COMMANDS = {
    "size-window": ("print the minimal window size", ["delta", "epsilon"]),
    "simulate": ("simulate a stream and trace the sliding mean",
                 ["delta", "epsilon", "threshold", "mu_nominal", "window", "mode", "mean", "post_mean", "onset",
                  "eff_z0", "eff_z1", "eff_x0", "eff_x1", "fault_detector", "fault_efficiency", "length",
                  "stride", "plot", "dump_stream", "replay"]),
    "session": ("run recognition, discard and the switch to 3-state BB84",
                ["delta", "epsilon", "threshold", "mu_nominal", "window", "onset", "eff_z0", "eff_z1",
                 "eff_x0", "eff_x1", "fault_detector", "fault_efficiency", "k_sigma", "length", "post_bits",
                 "models"]),
    "sweep": ("Monte Carlo recognition-delay sweep over window sizes",
              ["delta", "epsilon", "threshold", "mu_nominal", "mean", "post_mean", "sizes", "trials", "workers",
               "horizon"]),
    "fit": ("fit the linear and square-root models to a sweep CSV", []),
    "coverage": ("fraction of simulated faults covered by the discard",
                 ["delta", "epsilon", "threshold", "mu_nominal", "mean", "post_mean", "window", "k_sigma",
                  "trials", "workers", "models"]),
}

DEFAULTS = {
    "delta": 0.05, "epsilon": 0.001, "threshold": None, "mu_nominal": 0.5, "window": None,
    "mode": "bernoulli", "mean": 0.5, "post_mean": 1.0 / 3.0, "onset": None,
    "eff_z0": 1.0, "eff_z1": 1.0, "eff_x0": 1.0, "eff_x1": 1.0,
    "fault_detector": DetectorId.X1, "fault_efficiency": 0.0, "k_sigma": 3.0, "length": None,
    "stride": None, "plot": False, "dump_stream": False, "replay": None, "post_bits": 100_000,
    "sizes": list(mc.DEFAULT_SIZES), "trials": 2500, "workers": 1, "horizon": 10, "models": None,
    "seed": 0, "out": ".",
}
COMMAND_DEFAULTS = {
    "session": {"onset": 100_000, "window": 50_000},
    "coverage": {"window": 50_000},
}


@dataclass
class RunConfig:
    values: dict
    origin: dict

    def __getitem__(self, key):
        return self.values[key] if key in self.values else DEFAULTS[key]

    def where(self, *keys) -> str:
        return ", ".join(self.origin.get(k, k) for k in keys)

    def build(self, keys, fn, *args, **kwargs):
        """Call ``fn``; re-raise domain errors attributed to the settings in ``keys``."""
        try:
            return fn(*args, **kwargs)
        except ValueError as exc:
            raise CLIError(f"{self.where(*keys)}: {exc}") from None


def read_config_file(path: str) -> list:
    """``(key, raw value, lineno)`` triples from a flat ``key = value`` file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CLIError(f"cannot read config {path}: {exc.strerror}") from None
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CLIError(f"{path}:{lineno}: expected 'key = value'")
        entries.append((key.strip().replace("-", "_"), value.strip(), lineno))
    return entries


def resolve(command: str, ns: argparse.Namespace) -> RunConfig:
    allowed = set(COMMANDS[command][1]) | set(COMMON)
    values = {k: DEFAULTS[k] for k in allowed}
    values.update({k: v for k, v in COMMAND_DEFAULTS.get(command, {}).items() if k in allowed})
    origin = {k: f"{k} (default)" for k in allowed}
    kinds = {**OPTIONS, **COMMON}
    if getattr(ns, "config", None):
        for key, raw, lineno in read_config_file(ns.config):
            where = f"{ns.config}:{lineno}: {key}"
            if key not in allowed:
                raise CLIError(f"{where}: unknown setting for '{command}'")
            try:
                values[key] = kinds[key][0](raw)
            except ValueError as exc:
                raise CLIError(f"{where}: {exc}") from None
            origin[key] = where
    for key in allowed:
        v = getattr(ns, key, None)
        if v is not None:
            values[key] = v
            origin[key] = "--" + key.replace("_", "-")
    return RunConfig(values, origin)


# ---------------------------------------------------------------- builders

def recognizer_config(rc: RunConfig) -> RecognizerConfig:
    return rc.build(("delta", "epsilon", "threshold", "mu_nominal", "window"), RecognizerConfig.from_precision,
                    rc["delta"], rc["epsilon"], mu_nominal=rc["mu_nominal"], threshold_t=rc["threshold"],
                    window_n=rc["window"])


def detector_bank(rc: RunConfig) -> DetectorBank:
    return rc.build(("eff_z0", "eff_z1", "eff_x0", "eff_x1"), DetectorBank,
                    rc["eff_z0"], rc["eff_z1"], rc["eff_x0"], rc["eff_x1"])


def stream_config(rc: RunConfig, mode: str) -> StreamConfig:
    onset = rc["onset"]
    if mode == "bernoulli":
        m = rc.build(("mean",), Bernoulli, rc["mean"])
        sched = None if onset is None else rc.build(("onset", "post_mean"), ErrorSchedule, onset,
                                                    post_mean=rc["post_mean"])
    else:
        m = rc.build(("eff_z0", "eff_z1", "eff_x0", "eff_x1"), DetectorModel, detector_bank(rc))
        sched = None if onset is None else rc.build(
            ("onset", "fault_detector", "fault_efficiency"), ErrorSchedule, onset,
            detector=rc["fault_detector"], new_efficiency=rc["fault_efficiency"])
    return rc.build(("seed", "onset", "fault_detector", "fault_efficiency"), StreamConfig, m, rc["seed"], sched)


def regression_models(rc: RunConfig):
    path = rc["models"]
    if path is None:
        return cm.PUBLISHED_LINEAR, cm.PUBLISHED_SQRT
    found = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CLIError(f"{rc.where('models')}: cannot read {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            model = cm.RegressionModel.from_line(line, source=f"fitted:{path}")
        except ValueError as exc:
            raise CLIError(f"{path}:{lineno}: {exc}") from None
        found[model.kind] = model
    if set(found) != {"linear", "sqrt"}:
        raise CLIError(f"{path}: needs one 'linear,...' and one 'sqrt,...' line")
    return found["linear"], found["sqrt"]


def provenance(models) -> str:
    return "published" if all(m.source == "published" for m in models) else "fitted"


def out_dir(rc: RunConfig) -> Path:
    path = Path(rc["out"])
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CLIError(f"{rc.where('out')}: cannot create {path}: {exc.strerror}") from None
    if not os.access(path, os.W_OK):
        raise CLIError(f"{rc.where('out')}: {path} is not writable")
    return path


def _num(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "na"
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def _entropies(bits: np.ndarray) -> tuple:
    if bits.size == 0:
        return None, None, None
    m = float(bits.mean())
    return m, binary_entropy(m), skr_cap(m)


# ---------------------------------------------------------------- commands

def cmd_size_window(rc: RunConfig, out=sys.stdout) -> int:
    n = rc.build(("delta", "epsilon"), window_size, rc["delta"], rc["epsilon"])
    bound = math.log(2.0 / rc["epsilon"]) / (2.0 * rc["delta"] ** 2)
    print(f"# delta={rc['delta']!r} epsilon={rc['epsilon']!r} bound={bound:.6f}", file=out)
    print(n, file=out)
    return 0


def cmd_simulate(rc: RunConfig, out=sys.stdout) -> int:
    cfg = recognizer_config(rc)
    n = cfg.window_n
    if rc["replay"]:
        meta, bits = rc.build(("replay",), read_stream, rc["replay"])
        seed_text, onset = meta["seed"], (None if meta["onset"] == "none" else int(meta["onset"]))
        prng = meta.get("prng", "unknown")
        header = None
    else:
        sc = stream_config(rc, rc["mode"])
        onset = sc.schedule.onset_index if sc.schedule else None
        length = rc["length"]
        if length is None:
            length = max(10 * n, (onset or 0) + 2 * n)
        if length < 0:
            raise CLIError(f"{rc.where('length')}: must be >= 0")
        bits = KeyStream(sc).take(length)
        seed_text, prng, header = str(sc.seed), PRNG_NAME, sc.header()

    stride = rc["stride"] or max(1, bits.size // 10_000)
    if stride < 1:
        raise CLIError(f"{rc.where('stride')}: must be >= 1")
    event = Recognizer(cfg).feed(bits)
    means = window_means(bits, n)
    sample = np.arange(stride - 1, bits.size, stride)

    dest = out_dir(rc)
    with open(dest / "timeseries.csv", "w", newline="\n") as fh:
        fh.write("index,mu_hat\n")
        for i in sample:
            m = means[i]
            fh.write(f"{i},{'' if math.isnan(m) else repr(float(m))}\n")
    with open(dest / "events.txt", "w", newline="\n") as fh:
        if onset is not None:
            fh.write(f"onset {onset}\n")
        if event is not None:
            fh.write(f"recognition {event.trigger_index} {event.direction.value} {event.estimate_at_trigger!r}\n")
    if header is not None and rc["dump_stream"]:
        write_stream(dest / "stream.txt", bits, header)
    if rc["plot"]:
        write_trace(dest / "trace.svg", sample.tolist(), means[sample].tolist(), cfg.mu_nominal,
                    cfg.threshold_t, onset, None if event is None else event.trigger_index)

    split = bits.size if onset is None else min(onset, bits.size)
    before, after = _entropies(bits[:split]), _entropies(bits[split:])
    fields = [f"seed={seed_text}", f"prng={prng}", f"window={n}", f"threshold={cfg.threshold_t!r}",
              f"bits={bits.size}", f"onset={_num(onset)}",
              f"recognition={_num(None if event is None else event.trigger_index)}"]
    if event is not None and onset is not None:
        delay = event.trigger_index - onset
        fields += [f"delay={delay}", f"delay_fraction={delay / n:.6f}"]
        if after[0] is not None and after[0] != before[0]:
            try:
                pred = expected_recognition_fraction(cfg.mu_nominal, cfg.threshold_t, before[0], after[0])
                fields.append(f"predicted_fraction={pred:.6f}")
            except ValueError:
                pass
    fields += [f"mean_before={_num(before[0])}", f"entropy_before={_num(before[1])}",
               f"skr_cap_before={_num(before[2])}", f"mean_after={_num(after[0])}",
               f"entropy_after={_num(after[1])}", f"skr_cap_after={_num(after[2])}"]
    line = "summary " + " ".join(fields)
    (dest / "summary.txt").write_text(line + "\n")
    print(line, file=out)
    return 0


def cmd_session(rc: RunConfig, out=sys.stdout) -> int:
    cfg = recognizer_config(rc)
    n = cfg.window_n
    sc = stream_config(rc, "detector")
    bank = sc.mode.bank
    models = regression_models(rc)
    length = rc["length"] or ((sc.schedule.onset_index if sc.schedule else 0) + 10 * n)
    stream, rec = KeyStream(sc), Recognizer(cfg)
    session = cm.SessionState()
    log = [f"session seed={sc.seed} prng={PRNG_NAME} window={n} threshold={cfg.threshold_t!r} "
           f"k_sigma={rc['k_sigma']!r} models={provenance(models)} protocol={session.protocol.value}"]

    bits_parts, det_parts = [], []
    event = None
    block = 4096
    while stream.position < length and event is None:
        chunk = stream.take(min(block, length - stream.position))
        dets = stream.last_detectors
        event = rec.feed(chunk)
        kept = chunk.size if event is None else event.trigger_index + 1 - (stream.position - chunk.size)
        bits_parts.append(chunk[:kept])
        det_parts.append(dets[:kept])
        session = session.grow(kept)
    raw = np.concatenate(bits_parts) if bits_parts else np.empty(0, np.uint8)
    dets = np.concatenate(det_parts) if det_parts else np.empty(0, np.int8)
    onset = sc.schedule.onset_index if sc.schedule else None

    pre = _entropies(raw[:onset] if onset is not None else raw)
    log.append(f"bb84 raw_key_length={session.raw_key_length} mean={_num(pre[0])} entropy={_num(pre[1])} "
               f"min_entropy={_num(None if pre[0] is None else min_entropy_per_bit(pre[0]))}")
    if event is None:
        log.append(f"no_recognition protocol={session.protocol.value} discarded=0")
    else:
        in_flight = stream.position - (event.trigger_index + 1)
        fault = _entropies(raw[onset:]) if onset is not None else (None, None, None)
        missing = cm.identify_missing(dets[-n:], event.direction)
        plan = rc.build(("window", "k_sigma", "models"), cm.plan_countermeasure, session, missing, n,
                        rc["k_sigma"], *models)
        before = session.raw_key_length
        session, msg, dropped = cm.apply_countermeasure(session, event, missing, plan)
        log.append(f"recognition index={event.trigger_index} direction={event.direction.value} "
                   f"mu_hat={event.estimate_at_trigger:.6f} delay={_num(None if onset is None else event.trigger_index - onset)} "
                   f"fault_mean={_num(fault[0])} fault_entropy={_num(fault[1])}")
        log.append(f"discard start={dropped.start} stop={dropped.stop} count={len(dropped)} "
                   f"raw_key_length_before={before} raw_key_length_after={session.raw_key_length} "
                   f"in_flight_dropped={in_flight} adjusted_rate_factor={plan.adjusted_rate_factor:.6f} "
                   f"provenance={plan.provenance}")
        log.append(msg.to_line())
        stream.switch_to_three_state(missing)
        rec.rearm()
        post = stream.take(rc["post_bits"])
        again = rec.feed(post)
        session = session.grow(post.size)
        pm = _entropies(post)
        log.append(f"switch protocol={session.protocol.value} missing={missing.name} "
                   f"key_basis={session.key_basis.value} estimation_state={session.estimation_state.name} "
                   f"effective={msg.effective_index}")
        log.append(f"post_switch bits={post.size} mean={_num(pm[0])} entropy={_num(pm[1])} "
                   f"skr_cap={_num(pm[2])} expected_mean={cm.post_transition_mean(sc.degraded_bank(), session):.6f} "
                   f"rerecognition={_num(None if again is None else again.trigger_index)}")
    log.append(f"end protocol={session.protocol.value} raw_key_length={session.raw_key_length} "
               f"discarded={session.discarded}")
    text = "\n".join(log) + "\n"
    (out_dir(rc) / "session.log").write_text(text)
    out.write(text)
    return 0


def _sweep_config(rc: RunConfig, sizes) -> mc.SweepConfig:
    cfg = recognizer_config(rc)
    return rc.build(("sizes", "trials", "delta", "epsilon", "seed", "workers"), mc.SweepConfig, tuple(sizes),
                    rc["trials"], cfg, (rc["mean"], rc["post_mean"]), rc["seed"], rc["horizon"], rc["workers"])


def cmd_sweep(rc: RunConfig, out=sys.stdout) -> int:
    sc = _sweep_config(rc, rc["sizes"])
    result = mc.run_sweep(sc)
    path = out_dir(rc) / "sweep.csv"
    result.to_csv(path)
    print(f"sweep seed={sc.master_seed} prng={PRNG_NAME} sizes={len(sc.window_sizes)} "
          f"trials={sc.trials_per_size} csv={path}", file=out)
    for r in result.rows:
        print(f"  n={r.window_n} mean_nr={r.mean_nr_bits:.3f} std={r.std_bits:.3f} "
              f"ratio={r.mean_nr_bits / r.window_n:.5f} failures={r.failures}", file=out)
    return 0


def cmd_fit(rc: RunConfig, csv_path: str, out=sys.stdout) -> int:
    try:
        result = mc.SweepResult.from_csv(csv_path)
    except OSError as exc:
        raise CLIError(f"cannot read {csv_path}: {exc.strerror}") from None
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    rows = [r for r in result.rows if math.isfinite(r.std_bits)]
    try:
        lin = mc.fit_linear(result.points("mean_nr_bits"))
        sq = mc.fit_sqrt([(r.window_n, r.std_bits) for r in rows])
    except ValueError as exc:
        raise CLIError(f"{csv_path}: {exc}") from None
    text = lin.to_line() + "\n" + sq.to_line() + "\n"
    if not rc.origin["out"].endswith("(default)"):
        (out_dir(rc) / "fit.txt").write_text(text)
    out.write(text)
    return 0


def cmd_coverage(rc: RunConfig, out=sys.stdout) -> int:
    cfg = recognizer_config(rc)
    n = cfg.window_n
    models = regression_models(rc)
    if rc["trials"] < 100:
        raise CLIError(f"{rc.where('trials')}: coverage needs at least 100 trials")
    n_d = rc.build(("window", "k_sigma", "models"), cm.discard_count, n, rc["k_sigma"], *models)
    delays = mc.trial_delays(cfg, rc["trials"], (rc["mean"], rc["post_mean"]), rc["seed"],
                             workers=rc["workers"])
    frac = mc.coverage_fraction(delays, n_d)
    line = (f"coverage n={n} k_sigma={rc['k_sigma']!r} trials={rc['trials']} discard={n_d} "
            f"fraction={frac:.6f} failures={int((delays < 0).sum())} models={provenance(models)} "
            f"seed={rc['seed']} prng={PRNG_NAME}")
    (out_dir(rc) / "coverage.txt").write_text(line + "\n")
    print(line, file=out)
    return 0


HANDLERS = {"size-window": cmd_size_window, "simulate": cmd_simulate, "session": cmd_session,
            "sweep": cmd_sweep, "coverage": cmd_coverage}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sdrecog", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (helptext, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        if name == "fit":
            p.add_argument("csv", help="sweep CSV written by 'sdrecog sweep'")
        p.add_argument("--config", help="flat 'key = value' settings file")
        for key in list(keys) + list(COMMON):
            kind, h = {**OPTIONS, **COMMON}[key]
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None, help=h)
    return parser


def main(argv=None) -> int:
    try:
        ns = build_parser().parse_args(argv)
        rc = resolve(ns.command, ns)
        if ns.command == "fit":
            return cmd_fit(rc, ns.csv, sys.stdout)
        return HANDLERS[ns.command](rc, sys.stdout)
    except CLIError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
