"""Command-line front end: ``thinlab genstands|simulate|optimize|compare|report``.

Every run directory is self-contained: the stand, kernel and market files
are copied into it next to ``manifest.json``, so ``report`` needs nothing
but the directory.

Exit codes: 0 success, 2 input error, 3 infeasible schedule or search,
4 missing upstream run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .economics import EconomicTrace, build_trace, expected_return_rate
from .errors import ConfigError, EconomicsError, MissingRunError, ScheduleError
from .genstands import DEFAULT_SEQUENCE, TEMPLATES, generate_stands, stand_name
from .kernel import default_kernel, kernel_from_dict, load_kernel
from .optimizer import OptimResult, SearchConfig, compare_regimes, exhaustive, optimize
from .report import Run, build_report, snapshots_csv, trajectory_csv, write_dataset
from .stand import format_stand, parse_stand, read_stand
from .thinning import ManagementSchedule, Regime, load_schedule, schedule_from_dict
from .valuation import default_market, load_market, market_from_dict

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_MISSING = 0, 2, 3, 4
MANIFEST = "manifest.json"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class RunManifest:
    command: str
    inputs: dict[str, dict] = field(default_factory=dict)  # role -> {"path", "sha256"}
    regimes: list[str] = field(default_factory=list)
    search: dict | None = None
    version: str = __version__
    output_dir: str = "."  # manifests live in the run directory; paths are relative to it

    def add_input(self, role: str, path: str, content: bytes) -> None:
        self.inputs[role] = {"path": path, "sha256": _sha256(content)}

    def to_dict(self) -> dict:
        return {"command": self.command, "inputs": self.inputs, "regimes": self.regimes, "search": self.search,
                "version": self.version, "output_dir": self.output_dir}

    @property
    def hash(self) -> str:
        return _sha256(json.dumps(self.to_dict(), sort_keys=True).encode())[:16]

    def write(self, out: Path) -> None:
        _write(out / MANIFEST, json.dumps({**self.to_dict(), "manifest_hash": self.hash}, indent=2, sort_keys=True)
               + "\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _read_bytes(path: str, what: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from None


def _json(data: bytes, what: str) -> dict:
    try:
        return json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{what}: invalid JSON ({exc})") from None


@dataclass
class Inputs:
    stand_text: str
    kernel_text: str
    market_text: str
    manifest: RunManifest

    @property
    def stand(self):
        return parse_stand(self.stand_text, source="stand")

    @property
    def kernel(self):
        return kernel_from_dict(_json(self.kernel_text.encode(), "kernel"))

    @property
    def market(self):
        return market_from_dict(_json(self.market_text.encode(), "market"))


def _load_inputs(args, command: str) -> Inputs:
    man = RunManifest(command)
    if not args.stand:
        raise ConfigError("--stand is required")
    stand_bytes = _read_bytes(args.stand, "stand file")
    man.add_input("stand", args.stand, stand_bytes)
    texts = {}
    for role, path in (("kernel", args.kernel), ("market", args.market)):
        if path:
            data = _read_bytes(path, f"{role} config")
            _json(data, f"{role} config {path}")
            man.add_input(role, path, data)
            texts[role] = data.decode()
        else:
            obj = default_kernel().to_dict() if role == "kernel" else default_market().to_dict()
            texts[role] = json.dumps(obj, indent=2, sort_keys=True) + "\n"
            man.add_input(role, f"<default {role}>", texts[role].encode())
    inputs = Inputs(stand_bytes.decode(), texts["kernel"], texts["market"], man)
    # parse now so that malformed files fail before any work is done
    stand = parse_stand(inputs.stand_text, source=args.stand)
    kernel, market = inputs.kernel, inputs.market
    for sp in stand.species:
        kernel.get(sp)
        market.get(sp)
    return inputs


def _save_inputs(out: Path, inputs: Inputs) -> None:
    _write(out / "stand.csv", inputs.stand_text)
    _write(out / "kernel.json", inputs.kernel_text)
    _write(out / "market.json", inputs.market_text)


def _search_config(args, mode: Regime) -> SearchConfig:
    kw = dict(mode=mode, max_rotation_steps=args.max_rotation_steps, max_thinnings=args.max_thinnings,
              retention_step=args.retention_step)
    if args.min_rotation_steps is not None:
        kw["min_rotation_steps"] = args.min_rotation_steps
    if args.thinning_steps is not None:
        kw["thinning_steps"] = tuple(args.thinning_steps)
    search = SearchConfig(**kw)
    try:
        search.validate()
    except ConfigError as exc:
        if "rotation range" in str(exc):
            raise ScheduleError(str(exc)) from None
        raise
    return search


def _commented(text: str, manifest_hash: str) -> str:
    return f"# manifest={manifest_hash}\n" + text


def _write_trace(out: Path, trace: EconomicTrace, market, manifest_hash: str) -> None:
    _write(out / "trace.csv", _commented(trace.to_csv(), manifest_hash))
    _write(out / "trajectory.csv", _commented(trajectory_csv(trace, market), manifest_hash))
    _write(out / "stands.csv", _commented(snapshots_csv(trace), manifest_hash))


def _write_result(out: Path, result: OptimResult, inputs: Inputs, manifest_hash: str) -> None:
    d = out / result.regime.value
    _write(d / "result.json", json.dumps({**result.to_dict(), "manifest_hash": manifest_hash}, indent=2,
                                          sort_keys=True) + "\n")
    _write(d / "schedule.json", json.dumps({**result.best_schedule.to_dict(), "manifest_hash": manifest_hash},
                                            indent=2) + "\n")
    _write(d / "log.csv", _commented(result.log_csv(), manifest_hash))
    trace = build_trace(inputs.stand, result.best_schedule, inputs.kernel, inputs.market, result.regime)
    _write_trace(d, trace, inputs.market, manifest_hash)


# ---------------------------------------------------------------------------
# commands


def cmd_genstands(args) -> int:
    out = Path(args.out)
    templates = tuple(args.template) if args.template else DEFAULT_SEQUENCE
    stands = generate_stands(args.seed, args.count, templates)
    man = RunManifest("genstands", search={"seed": args.seed, "count": args.count, "templates": list(templates)})
    for i, stand in enumerate(stands):
        _write(out / f"{stand_name(i)}.csv", format_stand(stand))
    man.write(out)
    print(f"wrote {len(stands)} stands to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    inputs = _load_inputs(args, "simulate")
    if not args.schedule:
        raise ConfigError("--schedule is required")
    sched_bytes = _read_bytes(args.schedule, "schedule")
    inputs.manifest.add_input("schedule", args.schedule, sched_bytes)
    mode = Regime.parse(args.mode)
    inputs.manifest.regimes = [mode.value]
    stand = inputs.stand
    schedule = schedule_from_dict(_json(sched_bytes, f"schedule {args.schedule}"), stand.species, stand.grid)
    trace = build_trace(stand, schedule, inputs.kernel, inputs.market, mode)
    out = Path(args.out)
    h = inputs.manifest.hash
    _save_inputs(out, inputs)
    _write(out / "schedule.json", json.dumps(schedule.to_dict(), indent=2) + "\n")
    _write_trace(out, trace, inputs.market, h)
    inputs.manifest.write(out)
    try:
        r = expected_return_rate(trace)
        print(f"{mode.value}: rotation {schedule.rotation_steps} steps, <r> = {r:.6f} 1/yr")
    except EconomicsError as exc:
        print(f"{mode.value}: rotation {schedule.rotation_steps} steps, <r> undefined ({exc})")
    return EXIT_OK


def cmd_optimize(args) -> int:
    inputs = _load_inputs(args, "optimize")
    mode = Regime.parse(args.mode)
    search = _search_config(args, mode)
    inputs.manifest.regimes = [mode.value]
    inputs.manifest.search = {**search.to_dict(), "exhaustive": bool(args.exhaustive)}
    runner = exhaustive if args.exhaustive else optimize
    result = runner(inputs.stand, inputs.kernel, inputs.market, search)
    out = Path(args.out)
    h = inputs.manifest.hash
    _save_inputs(out, inputs)
    _write_result(out, result, inputs, h)
    inputs.manifest.write(out)
    print(f"{mode.value}: <r> = {result.best_r:.6f} 1/yr, rotation {result.best_schedule.rotation_steps} steps, "
          f"{len(result.best_schedule.thinnings)} thinning(s), {result.evaluations} evaluations")
    return EXIT_OK


def cmd_compare(args) -> int:
    inputs = _load_inputs(args, "compare")
    search = _search_config(args, Regime.NONE)
    inputs.manifest.regimes = [m.value for m in Regime]
    inputs.manifest.search = search.to_dict()
    comp = compare_regimes(inputs.stand, inputs.kernel, inputs.market, search)
    out = Path(args.out)
    h = inputs.manifest.hash
    _save_inputs(out, inputs)
    for result in comp.results.values():
        _write_result(out, result, inputs, h)
    _write(out / "comparison.json", json.dumps({**comp.to_dict(), "manifest_hash": h}, indent=2, sort_keys=True)
           + "\n")
    inputs.manifest.write(out)
    for m, res in comp.results.items():
        extra = "" if m is Regime.NONE else f"  delta {comp.delta(m):+.6f} (digit {comp.first_differing_digit(m)})"
        print(f"{m.value:>15}: <r> = {res.best_r:.6f} 1/yr, rotation {res.best_schedule.rotation_steps}{extra}")
    return EXIT_OK


def _load_runs(run_dir: Path) -> tuple[list[Run], dict, object, object]:
    man_path = run_dir / MANIFEST
    if not man_path.is_file():
        raise MissingRunError(f"no run in {run_dir} (missing {MANIFEST})")
    manifest = _json(man_path.read_bytes(), str(man_path))
    for name in ("stand.csv", "kernel.json", "market.json"):
        if not (run_dir / name).is_file():
            raise MissingRunError(f"run {run_dir} is incomplete (missing {name})")
    stand = read_stand(run_dir / "stand.csv")
    kernel = load_kernel(run_dir / "kernel.json")
    market = load_market(run_dir / "market.json")
    stand_id = Path(manifest.get("inputs", {}).get("stand", {}).get("path", run_dir.name)).stem
    runs = []
    for mode in Regime:
        sched = run_dir / mode.value / "schedule.json"
        if sched.is_file():
            runs.append(Run(stand_id, stand, mode, load_schedule(sched, stand.species, stand.grid)))
    if not runs and (run_dir / "schedule.json").is_file() and manifest.get("regimes"):
        mode = Regime.parse(manifest["regimes"][0])
        runs.append(Run(stand_id, stand, mode, load_schedule(run_dir / "schedule.json", stand.species, stand.grid)))
    if not runs:
        raise MissingRunError(f"run {run_dir} holds no schedule results")
    return runs, manifest, kernel, market


def cmd_report(args) -> int:
    out = Path(args.out)
    run_dirs = [Path(p) for p in (args.runs or [args.out])]
    runs, hashes = [], []
    kernel = market = None
    for d in run_dirs:
        r, manifest, kernel_d, market_d = _load_runs(d)
        if kernel is None:
            kernel, market = kernel_d, market_d
        elif kernel_d.to_dict() != kernel.to_dict() or market_d.to_dict() != market.to_dict():
            raise ConfigError(f"run {d} uses a different kernel or market than {run_dirs[0]}")
        runs += r
        hashes.append(manifest.get("manifest_hash", ""))
    man = RunManifest("report", regimes=sorted({r.regime.value for r in runs}),
                      search={"runs": hashes, "max_rotation_steps": args.max_rotation_steps})
    data = build_report(runs, kernel, market, args.max_rotation_steps)
    out.mkdir(parents=True, exist_ok=True)
    for name, rows in data.items():
        write_dataset(out / f"{name}.csv", name, rows, man.hash)
    _write(out / "report_manifest.json",
           json.dumps({**man.to_dict(), "manifest_hash": man.hash}, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(data)} datasets for {len(runs)} run(s) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thinlab", description="Quality thinning and return on capital in boreal stands.")
    p.add_argument("--version", action="version", version=f"thinlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, stand=True):
        if stand:
            sp.add_argument("--stand", help="stand CSV")
            sp.add_argument("--kernel", help="growth kernel JSON (default: shipped calibration)")
            sp.add_argument("--market", help="market JSON (default: shipped prices and costs)")
        sp.add_argument("--out", required=True, help="output directory")

    def search_flags(sp):
        sp.add_argument("--max-rotation-steps", type=int, default=24)
        sp.add_argument("--min-rotation-steps", type=int, default=None)
        sp.add_argument("--max-thinnings", type=int, default=2)
        sp.add_argument("--retention-step", type=float, default=0.1)
        sp.add_argument("--thinning-steps", type=int, nargs="+", default=None, metavar="STEP")

    g = sub.add_parser("genstands", help="generate synthetic fixture stands")
    common(g, stand=False)
    g.add_argument("--seed", type=int, default=2024)
    g.add_argument("--count", type=int, default=7)
    g.add_argument("--template", action="append", choices=sorted(TEMPLATES))
    g.set_defaults(func=cmd_genstands)

    s = sub.add_parser("simulate", help="simulate one schedule")
    common(s)
    s.add_argument("--schedule", help="schedule JSON")
    s.add_argument("--mode", default="none", choices=[m.value for m in Regime])
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("optimize", help="optimize thinnings and rotation for one regime")
    common(o)
    o.add_argument("--mode", default="none", choices=[m.value for m in Regime])
    search_flags(o)
    o.add_argument("--exhaustive", action="store_true", help=argparse.SUPPRESS)
    o.set_defaults(func=cmd_optimize)

    c = sub.add_parser("compare", help="optimize all three regimes and report the differences")
    common(c)
    search_flags(c)
    c.set_defaults(func=cmd_compare)

    r = sub.add_parser("report", help="write figure datasets for completed runs")
    common(r, stand=False)
    r.add_argument("runs", nargs="*", help="run directories (default: --out)")
    r.add_argument("--max-rotation-steps", type=int, default=24)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MissingRunError as exc:
        print(f"thinlab: error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except ScheduleError as exc:
        print(f"thinlab: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, EconomicsError) as exc:
        print(f"thinlab: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
