"""Command-line driver: ``cemrm {optimize,compare,evaluate,retarget,bench-list}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import shutil
import sys
from pathlib import Path

import numpy as np

from .benchmarks import REGISTRY, get_benchmark
from .config import MODES, CampaignConfig, ConfigError, dump_config, load_config
from .design_space import DesignVector
from .orchestrator import (
    Campaign, CampaignError, disturbance_report, evaluations_to_threshold, progress_series,
    progress_threshold, write_log_csv,
)
from .retargeting import RetargetError, compile_records, read_calibration, read_stream
from .surrogate.bundle import BundleError, MANIFEST, default_bundle_path, load_bundle, load_default_bundle

EXIT_FAILURE = 1
EXIT_USAGE = 2


def _err(msg: str) -> None:
    print(f"cemrm: {msg}", file=sys.stderr)


def _load(path: str, seed: int | None, mode: str | None, iterations: int | None) -> CampaignConfig:
    cfg = load_config(path)
    cfg = cfg.with_overrides(seed=seed, mode=mode, J=iterations)
    return CampaignConfig.from_dict(cfg.to_dict())  # re-validate overrides


def _final_elite_mean(result) -> float | None:
    series = progress_series(result)
    return float(series[-1]) if len(series) and math.isfinite(series[-1]) else None


# --------------------------------------------------------------------------
# optimize


def cmd_optimize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    if args.resume:
        campaign = Campaign.resume(args.resume)
        if args.iterations is not None:
            cfg = campaign.config.with_overrides(J=args.iterations)
            campaign.config = CampaignConfig.from_dict(cfg.to_dict())
    else:
        campaign = Campaign(_load(args.config, args.seed, args.mode, args.iterations))
    (out / "config.json").write_text(dump_config(campaign.config))
    result = campaign.run(checkpoint_path=ckpt)
    write_log_csv(result.log, out / "log.csv")
    final = {
        "final": result.final_design,
        "best": result.best_design,
        "best_reward": result.best_reward,
        "env_interactions": result.env_interactions,
        "iterations": len(result.log),
    }
    (out / "final_design.json").write_text(json.dumps(final, indent=2, sort_keys=True) + "\n")
    mean = _final_elite_mean(result)
    print(f"final elite mean: {'n/a' if mean is None else f'{mean:.6g}'}")
    print(f"env_interactions: {result.env_interactions}")
    return 0


# --------------------------------------------------------------------------
# compare


def compare(config: CampaignConfig, seeds, modes=MODES, fraction: float = 0.95):
    """Run every mode for every seed.

    The threshold for a seed is ``fraction`` of the way from pure CEM's first
    to its final elite mean; each mode reports the ground-truth interactions
    it needed to reach it.
    """
    runs: dict[tuple[str, int], object] = {}
    failures: dict[tuple[str, int], str] = {}
    for seed in seeds:
        for mode in modes:
            try:
                runs[mode, seed] = Campaign(config.with_overrides(mode=mode, seed=seed)).run()
            except (CampaignError, ValueError, FloatingPointError) as exc:
                failures[mode, seed] = str(exc)
    rows = []
    for seed in seeds:
        ref = runs.get(("pure-cem", seed))
        thr = progress_threshold(progress_series(ref), fraction) if ref is not None else None
        for mode in modes:
            if (mode, seed) in failures:
                rows.append({"mode": mode, "seed": seed, "status": "FAILED: " + failures[mode, seed]})
                continue
            res = runs[mode, seed]
            series = progress_series(res)
            env = [e.env_interactions for e in res.log]
            rows.append({
                "mode": mode, "seed": seed, "status": "ok",
                "final_elite_mean": float(series[-1]),
                "env_interactions": res.env_interactions,
                "evals_to_threshold": None if thr is None else evaluations_to_threshold(env, series, thr),
            })
    summary = []
    for mode in modes:
        ok = [r for r in rows if r["mode"] == mode and r["status"] == "ok"]
        finals = np.array([r["final_elite_mean"] for r in ok])
        hits = [r["evals_to_threshold"] for r in ok if r["evals_to_threshold"] is not None]
        summary.append({
            "mode": mode, "runs": len(ok), "failed": sum(1 for r in rows if r["mode"] == mode) - len(ok),
            "final_mean": float(finals.mean()) if len(ok) else None,
            "final_std": float(finals.std()) if len(ok) else None,
            "median_evals_to_threshold": float(np.median(hits)) if hits else None,
        })
    return rows, summary


def _compare_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mode", "seed", "final_elite_mean", "env_interactions", "evals_to_threshold", "status"])
    for r in rows:
        w.writerow([r["mode"], r["seed"], repr(r.get("final_elite_mean", "")) if "final_elite_mean" in r else "",
                    r.get("env_interactions", ""), "" if r.get("evals_to_threshold") is None else repr(r["evals_to_threshold"]),
                    r["status"]])
    return buf.getvalue()


def _summary_text(summary, fraction) -> str:
    lines = [f"{'mode':10s} {'runs':>4s} {'final elite mean':>24s} {f'evals to {fraction:.0%}':>16s}"]
    for s in summary:
        if s["runs"]:
            final = f"{s['final_mean']:.6g} ± {s['final_std']:.3g}"
        else:
            final = "FAILED"
        hit = "n/a" if s["median_evals_to_threshold"] is None else f"{s['median_evals_to_threshold']:g}"
        mark = f" ({s['failed']} failed)" if s["failed"] else ""
        lines.append(f"{s['mode']:10s} {s['runs']:4d} {final:>24s} {hit:>16s}{mark}")
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    if len(args.seeds) < 3:
        _err("compare needs at least three seeds")
        return EXIT_USAGE
    cfg = _load(args.config, None, None, args.iterations)
    rows, summary = compare(cfg, args.seeds, args.modes, args.fraction)
    text = _summary_text(summary, args.fraction)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(_compare_csv(rows))
        (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_FAILURE if any(r["status"] != "ok" for r in rows) else 0


# --------------------------------------------------------------------------
# evaluate


def read_design(path: str | Path) -> DesignVector:
    """Accept a bare design document or an ``optimize`` result file."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValueError(f"design file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc.msg})") from None
    if isinstance(data, dict) and "final" in data:
        data = data["final"]
    if isinstance(data, dict) and "design" in data:
        data = data["design"]
    try:
        return DesignVector.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: not a hand design ({exc})") from None


def _report_text(report) -> str:
    lines = [f"{'object':20s} {'class':6s} {'success':>8s}"]
    for r in report["objects"]:
        lines.append(f"{r['object_id']:20s} {r['density_class']:6s} {r['successes']:>3d}/{r['trials']:<3d}"
                     f" {r['success_rate']:6.0%}")
    for c in report["classes"]:
        lines.append(f"{'[' + c['density_class'] + ']':20s} {'':6s} {c['successes']:>3d}/{c['trials']:<3d}"
                     f" {c['success_rate']:6.0%}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    design = read_design(args.design)
    bundle = load_bundle(args.bundle) if args.bundle else load_default_bundle()
    report = disturbance_report(design, bundle, args.trials, args.seed, zero_actuation=args.zero_actuation)
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(_report_text(report), end="")
    return 0


# --------------------------------------------------------------------------
# retarget


def cmd_retarget(args) -> int:
    frames = read_stream(args.stream)
    calibration = read_calibration(args.calibration)
    records = compile_records(frames, calibration) if len(frames) else []
    if not records:
        _err("warning: stream has no grasp marker; no records written")
        return 0
    out = Path(args.out)
    (out / "records").mkdir(parents=True, exist_ok=True)
    manifest_path = out / MANIFEST
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    else:
        manifest = {"version": 1, "objects": []}
    entry = next((e for e in manifest["objects"] if e["object_id"] == calibration.object_id), None)
    if entry is None:
        src = default_bundle_path() / "objects" / f"{calibration.object_id}.json"
        if not src.exists():
            raise BundleError(f"object {calibration.object_id!r} is not in {manifest_path} or the shipped bundle")
        (out / "objects").mkdir(exist_ok=True)
        shutil.copyfile(src, out / "objects" / src.name)
        entry = {"object_id": calibration.object_id, "file": f"objects/{src.name}", "records": []}
        manifest["objects"].append(entry)
    stem = Path(args.stream).stem
    for i, rec in enumerate(records):
        rel = f"records/{calibration.object_id}_{stem}_{i}.json"
        (out / rel).write_text(json.dumps(rec.to_dict(), indent=2) + "\n")
        if rel not in entry["records"]:
            entry["records"].append(rel)
        print(rel)
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return 0


# --------------------------------------------------------------------------
# bench-list


def cmd_bench_list(args) -> int:
    for name in sorted(REGISTRY):
        b = get_benchmark(name, args.dim)
        print(f"{name:16s} d={b.dim:<4d} optimum={b.optimum_value:<10.6g} {b.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cemrm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    o = sub.add_parser("optimize", help="run one campaign")
    src = o.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", help="campaign config JSON")
    src.add_argument("--resume", help="checkpoint to continue from")
    o.add_argument("--seed", type=int)
    o.add_argument("--mode", choices=MODES)
    o.add_argument("--iterations", type=int, help="override J")
    o.add_argument("--out", default="cemrm-run", help="output directory")
    o.set_defaults(func=cmd_optimize)

    c = sub.add_parser("compare", help="run all modes over several seeds")
    c.add_argument("--config", required=True)
    c.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    c.add_argument("--modes", nargs="+", choices=MODES, default=list(MODES))
    c.add_argument("--iterations", type=int)
    c.add_argument("--fraction", type=float, default=0.95)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("evaluate", help="disturbance-test success rates")
    e.add_argument("--design", required=True)
    e.add_argument("--bundle")
    e.add_argument("--trials", type=int, default=5)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--zero-actuation", action="store_true",
                   help="disable the tendon motors and the prismatic joint")
    e.add_argument("--out", help="write the report as JSON")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("retarget", help="compile hand streams into grasp records")
    r.add_argument("--stream", required=True)
    r.add_argument("--calibration", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_retarget)

    b = sub.add_parser("bench-list", help="list benchmark objectives")
    b.add_argument("--dim", type=int, default=36)
    b.set_defaults(func=cmd_bench_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_USAGE
    except (CampaignError, RetargetError, BundleError, ValueError) as exc:
        _err(str(exc))
        return EXIT_FAILURE


if __name__ == "__main__":
    raise SystemExit(main())
