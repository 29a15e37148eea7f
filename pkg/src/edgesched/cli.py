"""Command-line entry point: profiling, latency fitting, runs, optimizer bench and reports.

Exit codes: 0 success, 1 runtime failure, 2 invalid input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .core import RunConfig, config_hash, default_config, load_config, rng_stream, save_config, validate_config
from .internode import load_profiles, save_profiles
from .intranode import FAMILIES, FitError, LatencyModel, fit_latency, load_latency_store, save_latency_store
from .intranode.bench import bench_optimizer
from .intranode.latency import synth_latency_samples
from .identifier import save_checkpoint
from .workload import TraceError, load_trace
from .simengine import (
    INTRA_MODES,
    ROUTERS,
    fit_latency_models,
    init_state,
    profile_nodes,
    read_metrics_jsonl,
    run_experiment,
    write_metrics_jsonl,
    write_summary_csv,
)

log = logging.getLogger("edgesched")

OUT_ENV = "EDGESCHED_OUT_DIR"
EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    """Bad arguments or input files; maps to exit code 2."""


# ---------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    command: list[str]
    started: str
    finished: str = ""
    artifacts: dict[str, str] = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    def write(self, directory: Path) -> Path:
        """Atomic: write to a temp file in the same directory, then rename."""
        self.finished = _now()
        path = directory / "manifest.json"
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest-", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def read_manifest(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text())


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# ---------------------------------------------------------------- helpers


def _out_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get(OUT_ENV) or "runs")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(path: str | None, seed: int | None) -> RunConfig:
    if path:
        if not Path(path).exists():
            raise InputError(f"config file not found: {path}")
        try:
            cfg = load_config(path)
        except (TypeError, KeyError, ValueError) as exc:
            raise InputError(f"cannot parse config {path}: {exc}") from exc
    else:
        cfg = default_config(0)
    if seed is not None:
        cfg = cfg.with_overrides(seed=seed)
    problems = validate_config(cfg)
    if problems:
        raise InputError("invalid config:\n  " + "\n  ".join(problems))
    return cfg


def _init_dir(out: Path, seed: int) -> Path:
    return out / "init" / f"seed{seed}"


def _profile(cfg: RunConfig, directory: Path, command: list[str]) -> tuple[dict[int, LatencyModel], list]:
    directory.mkdir(parents=True, exist_ok=True)
    man = RunManifest(config_hash(cfg), cfg.seed, command, _now())
    fitted = fit_latency_models(cfg)
    capacities = profile_nodes(cfg, fitted)
    for c in capacities:
        if all(e == 0 for _, e in c.support):
            log.warning("node %d sustains no load at any profiled SLO", c.node)
    save_latency_store(directory / "latency_store.csv", [fitted[m] for m in sorted(fitted)])
    save_profiles(directory / "profiles.csv", capacities)
    save_config(cfg, directory / "config.yaml")
    man.artifacts = {"latency_store": "latency_store.csv", "profiles": "profiles.csv", "config": "config.yaml"}
    man.write(directory)
    return fitted, capacities


def _load_init(directory: Path) -> tuple[dict[int, LatencyModel], list]:
    fitted = {m.model_id: m for m in load_latency_store(directory / "latency_store.csv") if m.family == "quadratic"}
    return fitted, load_profiles(directory / "profiles.csv")


# ---------------------------------------------------------------- commands


def cmd_profile(args) -> int:
    cfg = _config(args.config, args.seed)
    out = _out_dir(args.out_dir)
    directory = _init_dir(out, cfg.seed)
    _, caps = _profile(cfg, directory, ["profile", *_argv(args)])
    for c in caps:
        print(f"node {c.node}: C(L) = {c.k_n:.3f} * L + {c.b_n:.3f}  (rmse {c.rmse:.2f}, {len(c.support)} points)")
    print(f"profiles written to {directory}")
    return EXIT_OK


def _run_one(cfg: RunConfig, router: str, inter_node: bool, deployment: str, out: Path, auto_init: bool,
             command: list[str]) -> dict:
    init = _init_dir(out, cfg.seed)
    if (init / "profiles.csv").exists() and (init / "latency_store.csv").exists():
        fitted, caps = _load_init(init)
    elif auto_init:
        fitted, caps = _profile(cfg, init, ["profile", "--seed", str(cfg.seed)])
    else:
        raise InputError(f"no capacity profiles in {init}; run `edgesched profile --seed {cfg.seed}` "
                         "with the same --out-dir first, or pass --auto-init")
    name = f"{router}-{'on' if inter_node else 'off'}-seed{cfg.seed}"
    if deployment != "adaptive":
        name = f"{deployment}-{name}"
    run_dir = out / name
    run_dir.mkdir(parents=True, exist_ok=True)
    man = RunManifest(config_hash(cfg), cfg.seed, command, _now(),
                      inputs={"latency_store": str(init / "latency_store.csv"),
                              "profiles": str(init / "profiles.csv")})
    st = init_state(cfg, router, inter_node, fitted=fitted, capacities=caps, deployment=deployment)
    res = run_experiment(cfg, router, inter_node, state=st)

    art = {}
    save_config(cfg, run_dir / "config.yaml")
    art["config"] = "config.yaml"
    write_metrics_jsonl(run_dir / "metrics.jsonl", cfg, router, inter_node, res.metrics, deployment)
    art["metrics"] = "metrics.jsonl"
    write_summary_csv(run_dir / "summary.csv", cfg, router, inter_node, res.summary, deployment)
    art["summary"] = "summary.csv"
    with open(run_dir / "plans.jsonl", "w") as fh:
        for rec in res.state.plans_log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    art["plans"] = "plans.jsonl"
    st.prototypes.save(run_dir / "prototypes.npz")
    art["prototypes"] = "prototypes.npz"
    with open(run_dir / "timing.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["slot", "sched_wall_s"])
        for m in res.metrics:
            w.writerow([m.slot, f"{m.sched_wall_s:.6f}"])
    art["timing"] = "timing.csv"
    if router == "ppo":
        save_checkpoint(run_dir / "policy.ckpt", res.state.policy, config_hash(cfg))
        art["checkpoint"] = "policy.ckpt"
        with open(run_dir / "train_log.csv", "w", newline="") as fh:
            cols = ["slot", "batch_size", "mean_f", "mean_fbar", "entropy", "surrogate", "clip_fraction", "aborted"]
            w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            w.writeheader()
            w.writerows(res.state.train_log)
        art["train_log"] = "train_log.csv"
    man.artifacts = art
    man.write(run_dir)
    return {"run_dir": str(run_dir), **res.summary}


def cmd_run(args) -> int:
    base = _config(args.config, None)
    if args.slots is not None:
        if args.slots < 0:
            raise InputError("--slots must be >= 0")
        base = base.with_overrides(slots=args.slots)
    if args.trace:
        if not Path(args.trace).exists():
            raise InputError(f"trace file not found: {args.trace}")
        try:
            counts = load_trace(args.trace)
        except TraceError as exc:
            raise InputError(f"{args.trace}: {exc}") from exc
        if not counts:
            raise InputError(f"{args.trace}: trace is empty")
        base = base.with_overrides(queries_per_slot=tuple(counts))
    seeds = args.seeds if args.seeds else [base.seed]
    out = _out_dir(args.out_dir)
    inter_node = args.inter_node == "on"
    jobs = []
    for s in seeds:
        cfg = base.with_overrides(seed=s)
        command = ["run", *_argv(args, seeds=[s])]
        jobs.append((cfg, args.router, inter_node, args.deployment, out, args.auto_init, command))
    # validate preconditions up front so a missing profile fails before any work
    if not args.auto_init:
        for cfg, *_ in jobs:
            init = _init_dir(out, cfg.seed)
            if not (init / "profiles.csv").exists():
                raise InputError(f"no capacity profiles in {init}; run `edgesched profile --seed {cfg.seed}` "
                                 "with the same --out-dir first, or pass --auto-init")
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_run_one_star, jobs))
    else:
        results = [_run_one(*j) for j in jobs]
    for r in results:
        print(f"{r['run_dir']}: last-decile quality {r['last_decile_quality']:.4f}, "
              f"mean drop rate {r['mean_drop_rate']:.4f}")
    return EXIT_OK


def _run_one_star(job):
    return _run_one(*job)


def _read_samples(path: str) -> dict[int, np.ndarray]:
    """Rows ``q,R,seconds`` or ``model_id,q,R,seconds``; a header line is optional."""
    p = Path(path)
    if not p.exists():
        raise InputError(f"samples file not found: {path}")
    rows: dict[int, list] = {}
    with open(p, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            try:
                vals = [float(x) for x in row]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise InputError(f"{path}:{lineno}: non-numeric field in {row}")
            if len(vals) == 3:
                mid, q, R, y = 0, *vals
            elif len(vals) == 4:
                mid, q, R, y = int(vals[0]), *vals[1:]
            else:
                raise InputError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(vals)}")
            if q < 0 or not 0 < R <= 1 or y < 0 or not np.isfinite([q, R, y]).all():
                raise InputError(f"{path}:{lineno}: need q >= 0, 0 < R <= 1, seconds >= 0")
            rows.setdefault(mid, []).append((q, R, y))
    if not rows:
        raise InputError(f"{path}: no samples")
    return {m: np.array(v) for m, v in sorted(rows.items())}


def cmd_fit_latency(args) -> int:
    fams = args.families or list(FAMILIES)
    bad = [f for f in fams if f not in FAMILIES]
    if bad:
        raise InputError(f"unknown families {bad}; choose from {list(FAMILIES)}")
    cfg = _config(args.config, args.seed)
    if args.synthetic:
        samples = {}
        for m in cfg.model_catalog:
            truth = LatencyModel.quadratic(*m.latency_params, model_id=m.id)
            samples[m.id] = synth_latency_samples(truth, rng_stream(cfg.seed, f"latency-samples/{m.id}"),
                                                  cfg.sim.latency_fit_samples, cfg.sim.latency_fit_noise,
                                                  r_min=m.min_mem_frac)
    elif args.samples:
        samples = _read_samples(args.samples)
    else:
        raise InputError("pass a samples file or --synthetic")
    out = _out_dir(args.out_dir)
    directory = out / "latency"
    directory.mkdir(parents=True, exist_ok=True)
    man = RunManifest(config_hash(cfg), cfg.seed, ["fit-latency", *_argv(args)], _now())
    delta = {m.id: m.delta_t_s for m in cfg.model_catalog}
    fits, table = [], []
    for mid, s in samples.items():
        ranked = []
        for fam in fams:
            try:
                lm = fit_latency(s, fam, delta.get(mid, 0.0), mid)
            except FitError as exc:
                log.warning("model %d, %s: %s", mid, fam, exc)
                continue
            fits.append(lm)
            ranked.append(lm)
        ranked.sort(key=lambda lm: lm.fit_rmse)
        for rank, lm in enumerate(ranked, 1):
            table.append([mid, lm.family, repr(lm.fit_rmse), repr(lm.fit_nrmse), rank])
    if not fits:
        raise InputError("no family could be fitted to the samples")
    save_latency_store(directory / "latency_store.csv", fits)
    with open(directory / "rmse_table.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_id", "family", "rmse", "nrmse", "rank"])
        w.writerows(table)
    man.artifacts = {"latency_store": "latency_store.csv", "rmse_table": "rmse_table.csv"}
    man.write(directory)
    for row in table:
        print(f"model {row[0]} {row[1]:<12s} rmse {float(row[2]):.4f}  rank {row[4]}")
    return EXIT_OK


def cmd_bench_optimizer(args) -> int:
    if args.instances < 0:
        raise InputError("--instances must be >= 0")
    rep = bench_optimizer(args.instances, args.seed)
    out = _out_dir(args.out_dir)
    directory = out / "bench"
    directory.mkdir(parents=True, exist_ok=True)
    man = RunManifest("", args.seed, ["bench-optimizer", *_argv(args)], _now())
    body = {**rep.to_dict(), "seed": args.seed}
    (directory / "bench_report.json").write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    with open(directory / "gaps.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance", "gap"])
        w.writerows([i, repr(g)] for i, g in enumerate(rep.gaps))
    man.artifacts = {"report": "bench_report.json", "gaps": "gaps.csv"}
    man.write(directory)
    print(json.dumps(body, indent=2, sort_keys=True))
    return EXIT_OK


REPORT_METRICS = ["mean_quality", "mean_drop_rate", "last_decile_quality", "mean_effective_quality",
                  "last_decile_effective_quality"]


def cmd_report(args) -> int:
    runs = []
    for d in args.run_dirs:
        d = Path(d)
        if not (d / "manifest.json").exists():
            log.warning("skipping %s: no manifest.json", d)
            continue
        man = read_manifest(d)
        if "summary" not in man.get("artifacts", {}):
            log.warning("skipping %s: manifest lists no summary", d)
            continue
        with open(d / man["artifacts"]["summary"], newline="") as fh:
            summ = next(csv.DictReader(fh))
        cfg = load_config(d / man["artifacts"]["config"]) if "config" in man["artifacts"] else None
        _, rows = read_metrics_jsonl(d / man["artifacts"]["metrics"])
        runs.append((d, man, summ, cfg, rows))
    if not runs:
        raise InputError("no completed run directories among the arguments")
    hashes = {summ["config_hash"] for _, _, summ, _, _ in runs}
    if len(hashes) > 1:
        log.warning("runs come from %d different configurations; see the config_hash column", len(hashes))

    out = _out_dir(args.out_dir)
    directory = out / "report"
    directory.mkdir(parents=True, exist_ok=True)
    labels = []
    with open(directory / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "config_hash", "seed", "router", "inter_node", "deployment", "dirichlet_alpha", "slo_s",
                    *REPORT_METRICS])
        for d, man, summ, cfg, _ in runs:
            label = d.name
            while label in labels:
                label += "'"
            labels.append(label)
            alpha = cfg.dirichlet_alpha if cfg else ""
            slo = cfg.slot_latency_slo_s if cfg and not isinstance(cfg.slot_latency_slo_s, tuple) else "varies"
            w.writerow([label, summ["config_hash"], summ["seed"], summ["router"], summ["inter_node"],
                        summ.get("deployment", "adaptive"), alpha, slo,
                        *[summ[k] for k in REPORT_METRICS]])
    with open(directory / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", *labels])
        for k in REPORT_METRICS:
            w.writerow([k, *[summ[k] for _, _, summ, _, _ in runs]])
    # served share per model size class, grouped by slot budget
    with open(directory / "model_share.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "slo_s", "size_class", "mean_share"])
        for label, (_, _, _, _, rows) in zip(labels, runs):
            groups: dict[float, list[dict]] = {}
            for r in rows:
                groups.setdefault(float(r["slo_s"]), []).append(r["model_share"])
            for slo, shares in sorted(groups.items()):
                classes = sorted({c for s in shares for c in s})
                for c in classes:
                    w.writerow([label, repr(slo), c, repr(float(np.mean([s.get(c, 0.0) for s in shares])))])
    man = RunManifest(",".join(sorted(hashes)), -1, ["report", *_argv(args)], _now(),
                      {"runs": "runs.csv", "comparison": "comparison.csv", "model_share": "model_share.csv"},
                      {label: str(d) for label, (d, *_rest) in zip(labels, runs)})
    man.write(directory)
    print((directory / "comparison.csv").read_text(), end="")
    return EXIT_OK


def cmd_init_config(args) -> int:
    cfg = default_config(args.seed)
    path = Path(args.path)
    if path.parent:
        path.parent.mkdir(parents=True, exist_ok=True)
    save_config(cfg, path)
    print(f"wrote {path} (config hash {config_hash(cfg)})")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _argv(args, **override) -> list[str]:
    """Rebuild a flag list from parsed args, for the manifest's command field."""
    out = []
    for k, v in sorted(vars(args).items()):
        if k in ("func", "cmd", "log_level"):
            continue
        v = override.get(k, v)
        if v is None or v is False:
            continue
        if k == "run_dirs":
            out.extend(str(x) for x in v)
            continue
        flag = "--" + k.replace("_", "-")
        if v is True:
            out.append(flag)
        elif isinstance(v, list):
            out.extend([flag, *map(str, v)])
        else:
            out.extend([flag, str(v)])
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgesched", description="Edge RAG scheduling simulator.")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML run config (default: the built-in planted setup)")
        sp.add_argument("--out-dir", help=f"output root (default: ${OUT_ENV} or ./runs)")
        if seed:
            sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("profile", help="profile node capacities and fit C(L) = k L + b")
    common(sp)
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("run", help="run a slot-level experiment")
    common(sp, seed=False)
    sp.add_argument("--router", choices=ROUTERS, default="ppo")
    sp.add_argument("--inter-node", choices=["on", "off"], default="on")
    sp.add_argument("--deployment", choices=INTRA_MODES, default="adaptive",
                    help="intra-node policy: the adaptive solver or a fixed baseline template")
    sp.add_argument("--slots", type=int, help="override the slot count")
    sp.add_argument("--trace", help="per-slot query counts, one integer per line")
    sp.add_argument("--seeds", type=int, nargs="+", help="one independent run per seed")
    sp.add_argument("--jobs", type=int, default=1, help="parallel processes across seeds")
    sp.add_argument("--auto-init", action="store_true", help="profile first if profiles are missing")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("fit-latency", help="fit latency surfaces and compare families")
    common(sp)
    src = sp.add_mutually_exclusive_group()
    src.add_argument("--samples", help="CSV rows q,R,seconds or model_id,q,R,seconds")
    src.add_argument("--synthetic", action="store_true", help="sample the planted catalog instead")
    sp.add_argument("--families", nargs="+", help=f"subset of {', '.join(FAMILIES)}")
    sp.set_defaults(func=cmd_fit_latency)

    sp = sub.add_parser("bench-optimizer", help="solver versus exhaustive search on small instances")
    sp.add_argument("--instances", type=int, default=200)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_bench_optimizer)

    sp = sub.add_parser("report", help="tabulate completed runs")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out-dir")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("init-config", help="write the built-in planted config as YAML")
    sp.add_argument("path")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_init_config)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - top-level guard
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
