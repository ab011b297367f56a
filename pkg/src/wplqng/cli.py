"""Command-line harness: ``wplqng {tomo,vqe,drift,ablate,rerun}``.

Settings come from built-in defaults, then a flat ``key = value`` file
(``--config``), then ``--set key=value`` overrides, then the dedicated
flags (``--seed``, ``--exact``, ``--convention``). Every run writes its
artifacts atomically and finishes with ``manifest.json``; ``rerun`` replays
a manifest.

Exit codes: 0 success, 2 configuration error (nothing written),
3 numeric abort (partial traces are still written).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .errors import ConfigError, DomainError, NumericError, WplError
from .geometry import Convention, WplParams
from .quantum import make_channel
from .tomography import (
    PipelineConfig,
    bootstrap_wpl,
    estimate_wpl,
    idle_channel,
    run_tomography,
)
from .vqe import (
    ABLATIONS,
    KINDS,
    DriftModel,
    OptimizerConfig,
    default_problem,
    drift_experiment,
    run_ablation,
    run_vqe,
)

log = logging.getLogger("wplqng")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

COMMANDS = ("tomo", "vqe", "drift", "ablate")
CHANNEL_KINDS = ("dephasing", "depolarizing", "amplitude_damping", "identity")


# --------------------------------------------------------------------------
# settings
# --------------------------------------------------------------------------


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not np.isfinite(v):
        raise ValueError("must be finite")
    return v


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true/false")


def _shots(s: str) -> int | None:
    if s.strip().lower() in ("exact", "none", "inf"):
        return None
    v = int(s)
    if v < 1:
        raise ValueError("must be >= 1 or 'exact'")
    return v


def _channel(s: str) -> str:
    if s not in CHANNEL_KINDS:
        raise ValueError(f"expected one of {', '.join(CHANNEL_KINDS)}")
    return s


def _noise(s: str) -> str:
    if s != "none" and s not in CHANNEL_KINDS:
        raise ValueError(f"expected 'none' or one of {', '.join(CHANNEL_KINDS)}")
    return s


def _convention(s: str) -> str:
    return Convention.parse(s).value


def _int_list(s: str) -> tuple[int, ...]:
    out = tuple(int(x) for x in s.split(",") if x.strip())
    if not out:
        raise ValueError("empty list")
    return out


def _delta(s: str) -> float | str:
    if s.strip().lower() == "auto":
        return "auto"
    v = float(s)
    if not v > 0:
        raise ValueError("must be positive or 'auto'")
    return v


def _kinds(s: str) -> tuple[str, ...]:
    out = tuple(x.strip() for x in s.split(",") if x.strip())
    bad = [k for k in out if k not in ABLATIONS]
    if bad or not out:
        raise ValueError(f"ablation kinds must be drawn from {', '.join(ABLATIONS)}")
    return out


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s

    return parse


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: str


_COMMON = {
    "seed": Key(_int, "1337"),
    "convention": Key(_convention, "sec5"),
}
_CHANNEL = {
    "channel": Key(_channel, "dephasing"),
    "param": Key(_float, "0.05"),
    "shots": Key(_shots, "4096"),
    "epsilon": Key(_float, "1e-4"),
    "delta": Key(_delta, "auto"),
}
_OPTIMIZER = {
    "eta": Key(_float, "0.05"),
    "tau": Key(_float, "1e-3"),
    "shots": Key(_shots, "4096"),
    "T_max": Key(_int, "80"),
    "gradient": Key(_choice("parameter_shift", "central_difference"), "parameter_shift"),
    "noise": Key(_noise, "dephasing"),
    "noise_param": Key(_float, "0.05"),
    "full_qfim": Key(_bool, "false"),
    "correction_rank": Key(_int, "0"),
    "ab_0": Key(_float, "0.71"),
    "b_0": Key(_float, "1.0"),
    "ab_1": Key(_float, "0.68"),
    "b_1": Key(_float, "0.9"),
}

SCHEMAS: dict[str, dict[str, Key]] = {
    "tomo": {**_COMMON, **_CHANNEL, "depths": Key(_int_list, "1,5,10,20,50"),
             "fit": Key(_choice("affine", "linear"), "affine"),
             "bootstrap_B": Key(_int, "500"), "level": Key(_float, "0.95")},
    "vqe": {**_COMMON, **_OPTIMIZER, "drift": Key(_bool, "false"),
            "drift_amplitude": Key(_float, "0.03"), "drift_period": Key(_int, "10"),
            "drift_alpha": Key(_float, "0.2")},
    "drift": {**_COMMON, **_CHANNEL, "depth": Key(_int, "5"), "K": Key(_int, "10"),
              "alpha": Key(_float, "0.2")},
    "ablate": {**_COMMON, **_OPTIMIZER, "kinds": Key(_kinds, ",".join(ABLATIONS))},
}


def _raw_to_text(value: Any) -> str:
    """Inverse of the key parsers, used when a manifest is loaded back."""
    if value is None:
        return "exact"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_config_file(path: str | Path) -> tuple[str | None, dict[str, str]]:
    """Parse a flat ``key = value`` file or a ``manifest.json``.

    Returns the command recorded in a manifest (``None`` for plain files)
    and the raw string settings.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    text = path.read_text()
    if path.suffix == ".json":
        try:
            doc = json.loads(text)
            return doc["command"], {k: _raw_to_text(v) for k, v in doc["settings"].items()}
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path} is not a valid manifest: {exc}") from None
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        if not k or not v:
            raise ConfigError(f"{path}:{lineno}: missing key or value")
        out[k] = v
    return None, out


def _split_assignment(item: str) -> tuple[str, str]:
    if "=" not in item:
        raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
    k, v = (x.strip() for x in item.split("=", 1))
    if not k or not v:
        raise ConfigError(f"--set {item!r}: missing key or value")
    return k, v


def resolve_settings(command: str, raw: dict[str, str]) -> dict[str, Any]:
    """Merge ``raw`` over the command defaults and parse every value."""
    schema = SCHEMAS[command]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    out = {}
    for name, key in schema.items():
        text = raw.get(name, key.default)
        try:
            out[name] = key.parse(text)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{name} = {text!r}: {exc}") from None
    return out


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


class Outputs:
    """Collects artifacts in memory and writes them atomically."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def add_json(self, name: str, doc: Any) -> None:
        self.add(name, json.dumps(doc, sort_keys=True, indent=2) + "\n")

    def add_rows(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(x) for x in row])
        self.add(name, buf.getvalue())

    def flush(self, manifest: dict) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name in sorted(self.files):
            _atomic_write(self.out_dir / name, self.files[name])
        manifest = dict(manifest)
        manifest["outputs"] = {name: hashlib.sha256(self.files[name].encode()).hexdigest()
                               for name in sorted(self.files)}
        _atomic_write(self.out_dir / "manifest.json", json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _cell(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "%.17g" % x
    return str(x)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(settings: dict[str, Any]) -> dict[str, Any]:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in settings.items()}


def build_manifest(command: str, settings: dict[str, Any], extra: dict | None = None) -> dict:
    return {
        "command": command,
        "settings": _jsonable(settings),
        "seed": settings["seed"],
        "convention": settings["convention"],
        "versions": {"wplqng": __version__, "numpy": np.__version__, "python": platform.python_version()},
        **(extra or {}),
    }


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _noise_channel(s: dict):
    try:
        return make_channel(s["channel"], s["param"] if s["channel"] != "identity" else 0.0)
    except DomainError as exc:
        raise ConfigError(f"invalid channel: {exc}") from None


def _pipeline(s: dict) -> PipelineConfig:
    """``delta = auto`` means the shot-scaled tolerance with the tighter-pair tie-break."""
    kw = dict(fit=s.get("fit", "affine"), epsilon=s["epsilon"])
    try:
        if s["delta"] == "auto":
            return PipelineConfig.for_shots(s["shots"], s["convention"], **kw)
        return PipelineConfig(s["convention"], delta=s["delta"], **kw)
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def cmd_tomo(s: dict, out: Outputs) -> tuple[int, dict]:
    noise = _noise_channel(s)
    pipe = _pipeline(s)
    if any(d < 0 for d in s["depths"]):
        raise ConfigError("idle depths must be non-negative")
    if s["bootstrap_B"] < 2 or not 0 < s["level"] < 1:
        raise ConfigError("bootstrap_B must be >= 2 and level in (0, 1)")
    reports, boots = [], []
    for d in s["depths"]:
        record = run_tomography(idle_channel(noise, d), shots=s["shots"], seed=s["seed"], repetition=d)
        result = estimate_wpl(record, pipe)
        reports.append({"depth": d, **result.report()})
        boot = bootstrap_wpl(record, s["bootstrap_B"], pipe, seed=s["seed"], level=s["level"])
        doc = boot.to_dict()
        doc["depth"] = d
        boots.append(doc)
    out.add_json("wpl_report.json", {"channel": noise.label, "rows": reports})
    out.add_json("bootstrap.json", {"rows": boots})
    header = ("depth", "lambda_perp", "lambda_par", "phase_covariant", "branch", "a_over_b", "b", "R")
    out.add_rows("wpl_report.csv", header, [[r[k] for k in header] for r in reports])
    return EXIT_OK, {"channel": noise.label, "delta_used": pipe.delta}


def _optimizer_config(s: dict, kind: str) -> OptimizerConfig:
    return OptimizerConfig(kind=kind, eta=s["eta"], tau=s["tau"], shots=s["shots"], T_max=s["T_max"],
                           seed=s["seed"], gradient=s["gradient"], convention=s["convention"],
                           noise_kind=s["noise"], noise_param=s["noise_param"],
                           full_qfim=s["full_qfim"], correction_rank=s["correction_rank"])


def _wpl_params(s: dict) -> tuple[WplParams, WplParams]:
    try:
        return (WplParams.from_ratio(s["ab_0"], s["b_0"], s["convention"]),
                WplParams.from_ratio(s["ab_1"], s["b_1"], s["convention"]))
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


def _map(jobs: int, fn, items):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _at(values, i: int) -> float:
    """``values[i]``, or NaN for a trace that aborted before its first row."""
    return float(values[i]) if len(values) else float("nan")


def _vqe_job(args):
    cfg, wpl, drift = args
    return run_vqe(default_problem(), cfg, wpl, drift)


def cmd_vqe(s: dict, out: Outputs, jobs: int = 1) -> tuple[int, dict]:
    try:
        configs = [_optimizer_config(s, k) for k in KINDS]
        drift = DriftModel(s["drift_amplitude"], s["drift_period"], s["drift_alpha"]) if s["drift"] else None
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    wpl = _wpl_params(s)
    traces = _map(jobs, _vqe_job, [(c, wpl, drift) for c in configs])
    for tr in traces:
        out.add(f"trace_{tr.label}.csv", tr.to_csv())
    n = max(len(tr) for tr in traces)
    rows = [[t] + [tr.abs_error[t] if t < len(tr) else float("nan") for tr in traces] for t in range(n)]
    out.add_rows("comparison.csv", ["iter"] + [tr.label for tr in traces], rows)
    summary = {tr.label: {"initial_abs_error": _at(tr.abs_error, 0), "final_abs_error": _at(tr.abs_error, -1),
                          "status": tr.status} for tr in traces}
    out.add_json("summary.json", summary)
    problem = default_problem()
    extra = {"E0": problem.E0, "noise_model": traces[0].manifest()["noise_model"],
             "runs": [tr.manifest() for tr in traces]}
    code = EXIT_NUMERIC if any(tr.aborted for tr in traces) else EXIT_OK
    return code, extra


def cmd_drift(s: dict, out: Outputs) -> tuple[int, dict]:
    noise = _noise_channel(s)
    pipe = _pipeline(s)
    if s["depth"] < 0:
        raise ConfigError("depth must be non-negative")
    if s["K"] < 2:
        raise ConfigError("K must be >= 2")
    if not 0 < s["alpha"] <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    res = drift_experiment(idle_channel(noise, s["depth"]), K=s["K"], shots=s["shots"], seed=s["seed"],
                           config=pipe, alpha=s["alpha"])
    out.add_rows("drift.csv", ("run", "a_over_b", "b", "R"),
                 [[k, res.a_over_b[k], res.b[k], res.R[k]] for k in range(s["K"])])
    out.add_rows("ewma.csv", ("run", "ewma_b", "ewma_R"),
                 [[k, res.ewma_b[k], res.ewma_R[k]] for k in range(s["K"])])
    return EXIT_OK, {"channel": noise.label, "std_b": res.std_b, "std_R": res.std_R, "delta_used": pipe.delta}


def _ablation_job(args):
    kind, cfg, wpl = args
    return kind, run_ablation(kind, cfg, default_problem(), wpl)


def cmd_ablate(s: dict, out: Outputs, jobs: int = 1) -> tuple[int, dict]:
    try:
        base = _optimizer_config(s, "wpl_qng")
    except DomainError as exc:
        raise ConfigError(str(exc)) from None
    wpl = _wpl_params(s)
    results = _map(jobs, _ablation_job, [(k, base, wpl) for k in s["kinds"]])
    aborted = False
    extra: dict[str, Any] = {"ablations": {}}
    for kind, traces in results:
        rows = []
        header: list[str] = []
        for tr in traces:
            body = list(csv.reader(io.StringIO(tr.to_csv())))
            # an empty aborted trace has no theta columns
            header = max(header, ["label"] + body[0], key=len)
            rows.extend([tr.label] + r for r in body[1:])
            aborted |= tr.aborted
        out.add_rows(f"ablation_{kind}.csv", header, rows)
        extra["ablations"][kind] = [
            {"label": tr.label, "final_abs_error": _at(tr.abs_error, -1),
             "max_step_norm": max(tr.step_norm, default=float("nan")),
             "status": tr.status} for tr in traces]
    return (EXIT_NUMERIC if aborted else EXIT_OK), extra


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="flat key = value file or a manifest.json")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override one setting (repeatable)")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--exact", action="store_true", help="infinite-shot mode")
    p.add_argument("--convention", choices=("sec5", "prop33", "hw"), type=str.lower,
                   help="channel-to-WPL convention")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wplqng", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"tomo": "tomography -> WPL parameters per idle depth, with bootstrap CIs",
             "vqe": "run the three optimizers on the two-qubit benchmark",
             "drift": "repeated tomography of a static channel with EWMA smoothing",
             "ablate": "naive-inverse, tau, shot-budget and isotropic ablations"}
    for name in COMMANDS:
        _add_common(sub.add_parser(name, help=helps[name]))
    rerun = sub.add_parser("rerun", help="replay a manifest.json")
    rerun.add_argument("manifest")
    rerun.add_argument("--out", metavar="DIR", default="out")
    rerun.add_argument("--jobs", type=int, default=1)
    return parser


def _collect_raw(args: argparse.Namespace) -> tuple[str, dict[str, str]]:
    command = args.command
    raw: dict[str, str] = {}
    if command == "rerun":
        recorded, raw = read_config_file(args.manifest)
        if recorded not in COMMANDS:
            raise ConfigError(f"manifest records unknown command {recorded!r}")
        return recorded, raw
    if args.config:
        recorded, raw = read_config_file(args.config)
        if recorded is not None and recorded != command:
            raise ConfigError(f"manifest is for {recorded!r}, not {command!r}")
    for item in args.overrides:
        k, v = _split_assignment(item)
        raw[k] = v
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.exact:
        raw["shots"] = "exact"
    if args.convention:
        raw["convention"] = args.convention
    return command, raw


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs(Path(args.out))
    try:
        command, raw = _collect_raw(args)
        settings = resolve_settings(command, raw)
        if command == "tomo":
            code, extra = cmd_tomo(settings, out)
        elif command == "vqe":
            code, extra = cmd_vqe(settings, out, args.jobs)
        elif command == "drift":
            code, extra = cmd_drift(settings, out)
        else:
            code, extra = cmd_ablate(settings, out, args.jobs)
    except ConfigError as exc:
        print(f"wplqng: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"wplqng: numeric abort: {exc}", file=sys.stderr)
        if out.files:
            out.flush(build_manifest(command, settings, {"status": "aborted", "message": str(exc)}))
        return EXIT_NUMERIC
    except WplError as exc:
        print(f"wplqng: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.flush(build_manifest(command, settings, extra))
    if code == EXIT_NUMERIC:
        print("wplqng: numeric abort: at least one run produced non-finite values", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
