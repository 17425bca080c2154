"""``enkf-lab`` command line.

Exit codes: 0 success, 1 a check or ``--assert`` band failed, 2 bad usage or
configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import rng as rngmod
from .config import config_hash, family_from_config, load_config, sweep_eps_config, sweep_j_config
from .errors import ConfigurationError, EnkfLabError, InsufficientDataError
from .experiments import run_sweep_epsilon, run_sweep_j
from .filters import FILTER_NAMES, posterior_moments, run_named_filter
from .measures import GridDensity
from .models import Trajectory, realize_perturbed, simulate_trajectory
from .reporting import emit_report, read_results, render_svg
from .verification import epsilon_law_result, run_checks, stability_ratio_result

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict | None, artifacts: list[Path], seeds: dict) -> Path:
    """``manifest.json``: config hash, seeds and artifact checksums (no timestamps, so reruns match)."""
    doc = {
        "command": command,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "seeds": seeds,
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_every(text: str) -> int:
    value = text.split("=", 1)[1] if text.startswith("every=") else text
    try:
        k = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected every=<k>, got {text!r}") from None
    if k < 1:
        raise argparse.ArgumentTypeError("dump interval must be positive")
    return k


# --------------------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.seed)
    state, obs = realize_perturbed(family_from_config(cfg))
    traj = simulate_trajectory(state, obs, cfg["init_mean"], cfg["init_cov"], cfg["n_steps"],
                               rngmod.make_rng(cfg["seed"], rngmod.STREAM_DATA))
    out = _out_dir(args)
    path = out / "trajectory.csv"
    path.write_text(traj.to_csv(), encoding="utf-8")
    write_manifest(out, "simulate", cfg, [path], {"base_seed": cfg["seed"], "data_stream": [rngmod.STREAM_DATA]})
    print(f"wrote {path}")
    return EXIT_OK


def _posteriors_csv(laws) -> str:
    first = posterior_moments(laws[0])
    d = first.dim
    header = ["n"] + [f"mean{i}" for i in range(d)] + [f"cov{i}{j}" for i in range(d) for j in range(d)]
    lines = [",".join(header)]
    for n, law in enumerate(laws):
        m = posterior_moments(law)
        lines.append(",".join([str(n)] + [repr(float(x)) for x in m.mean] + [repr(float(x)) for x in m.cov.ravel()]))
    return "\n".join(lines) + "\n"


def cmd_filter(args) -> int:
    cfg = load_config(args.config, args.seed)
    family = family_from_config(cfg)
    name = args.name or cfg["filter"]["name"]
    if args.trajectory:
        try:
            traj = Trajectory.from_csv(Path(args.trajectory).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"trajectory file not found: {args.trajectory}") from None
    else:
        state, obs = realize_perturbed(family)
        traj = simulate_trajectory(state, obs, cfg["init_mean"], cfg["init_cov"], cfg["n_steps"],
                                   rngmod.make_rng(cfg["seed"], rngmod.STREAM_DATA))
    J = args.particles or cfg["filter"]["particles"]
    rng = rngmod.make_rng(cfg["seed"], rngmod.STREAM_FILTER)
    laws = run_named_filter(name, family, cfg["init_mean"], cfg["init_cov"], traj.observations, J=J, rng=rng,
                            n_cells=cfg["grid"]["n_cells"],
                            mean_field_particles=cfg["filter"]["mean_field_particles"])
    out = _out_dir(args)
    artifacts = [out / "posteriors.csv"]
    artifacts[0].write_text(_posteriors_csv(laws), encoding="utf-8")
    if args.dump_density:
        if isinstance(laws[0], GridDensity):
            for n in range(0, len(laws), args.dump_density):
                p = out / f"density_{n:04d}.csv"
                p.write_text(laws[n].to_csv(), encoding="utf-8")
                artifacts.append(p)
        else:
            print(f"note: filter {name!r} has no grid density; --dump-density ignored", file=sys.stderr)
    write_manifest(out, f"filter {name}", cfg, artifacts,
                   {"base_seed": cfg["seed"], "data_stream": [rngmod.STREAM_DATA],
                    "filter_stream": [rngmod.STREAM_FILTER]})
    print(f"wrote {artifacts[0]} ({len(laws)} steps, filter {name})")
    return EXIT_OK


def _finish_sweep(args, cfg, report, checks: list[tuple[bool, str]]) -> int:
    out = _out_dir(args)
    paths = emit_report(report, out, cfg, extra={"config_hash": config_hash(cfg)})
    write_manifest(out, f"sweep-{report.kind}", cfg, paths,
                   {"base_seed": cfg["seed"], "data_stream": [rngmod.STREAM_DATA],
                    "replicate_stream": [rngmod.STREAM_REPLICATE]})
    for f in report.fits:
        where = "" if f.epsilon is None else f" eps={f.epsilon:g}"
        status = "in band" if f.in_band else "OUT OF BAND"
        print(f"{f.metric}{where}: slope {f.slope:.4f} +/- {f.stderr:.4f} {list(f.band)} {status}")
    for ok, detail in checks:
        print(("PASS " if ok else "FAIL ") + detail)
    print(f"wrote {', '.join(str(p) for p in paths)}")
    if args.assert_bands and not all(ok for ok, _ in checks):
        return EXIT_FAIL
    return EXIT_OK


def cmd_sweep_j(args) -> int:
    cfg = load_config(args.config, args.seed)
    report = run_sweep_j(sweep_j_config(cfg), threads=args.threads)
    checks = [(f.in_band, f"slope band for {f.metric} at eps={f.epsilon:g}") for f in report.fits]
    if not report.fits:
        # a band that cannot be fitted counts as not met
        checks.append((False, "fewer than 3 J values; slope band cannot be checked"))
    return _finish_sweep(args, cfg, report, checks)


def cmd_sweep_eps(args) -> int:
    cfg = load_config(args.config, args.seed)
    report = run_sweep_epsilon(sweep_eps_config(cfg))
    checks = [epsilon_law_result(report), stability_ratio_result(report)]
    return _finish_sweep(args, cfg, report, checks)


def cmd_verify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_checks(full=args.full, seed=seed, threads=args.threads)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.seconds:6.1f}s  {r.detail}")
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def cmd_plot(args) -> int:
    src = Path(args.results)
    if src.is_dir():
        src = src / "results.csv"
    if not src.exists():
        raise ConfigurationError(f"results file not found: {src}")
    kind, rows = read_results(src)
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    path = out / "rates.svg"
    path.write_text(render_svg(kind, rows), encoding="utf-8")
    print(f"wrote {path}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="enkf-lab", description="Ensemble Kalman filter accuracy experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default="out"):
        p.add_argument("--config", help="JSON config file (defaults are used when omitted)")
        p.add_argument("--seed", type=int, help="override the config's base seed")
        p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("simulate", help="simulate a trajectory and write trajectory.csv")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="run one filter and write per-step posterior moments")
    common(p)
    p.add_argument("--name", choices=FILTER_NAMES, help="filter to run (default from config)")
    p.add_argument("--trajectory", help="trajectory CSV from 'simulate' (simulated from config if omitted)")
    p.add_argument("--particles", type=int, help="ensemble size for enkf/pf")
    p.add_argument("--dump-density", type=_parse_every, metavar="every=K",
                   help="also write grid densities every K steps (grid and mean-field only)")
    p.set_defaults(func=cmd_filter)

    for name, func, text in (("sweep-j", cmd_sweep_j, "EnKF error vs ensemble size"),
                             ("sweep-eps", cmd_sweep_eps, "mean-field error vs model nonlinearity")):
        p = sub.add_parser(name, help=text)
        common(p)
        p.add_argument("--assert", dest="assert_bands", action="store_true",
                       help="exit 1 if any acceptance band fails")
        p.add_argument("--threads", type=int, help="worker threads (env ENKF_LAB_THREADS, default all cores)")
        p.set_defaults(func=func)

    p = sub.add_parser("verify", help="run the built-in checks and print a pass/fail table")
    p.add_argument("--full", action="store_true", help="include the J and epsilon sweeps (about a minute)")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="regenerate rates.svg from a results.csv")
    p.add_argument("results", help="results.csv or the directory holding it")
    p.add_argument("--out", help="output directory (default: next to results.csv)")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "threads", None) is None and os.environ.get("ENKF_LAB_THREADS"):
        try:
            args.threads = int(os.environ["ENKF_LAB_THREADS"])
        except ValueError:
            parser.print_usage(sys.stderr)
            print("enkf-lab: error: ENKF_LAB_THREADS must be an integer", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigurationError, InsufficientDataError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"enkf-lab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EnkfLabError as exc:
        print(f"enkf-lab: error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
