"""Command-line experiment runner.

Subcommands: ``generate`` (datasets to disk), ``train`` (single run),
``compare`` (operator method vs gradient baseline over seeds), ``recover``
(hidden-width sweep with known and perturbed graphs), ``panel`` (lagged
panel classification), and ``theory-check`` (the verification battery).

Exit codes: 0 success, 1 usage or configuration error, 2 runtime numeric
failure, 3 theory-check failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import experiments as ex
from .checks import run_battery
from .config import ConfigError, ExperimentConfig, load_config, write_config
from .graphs import erdos_renyi
from .network import save_network
from .numerics import RngStream
from .trainer import (
    METHOD_SGD,
    METHOD_SVI,
    dynamics_rows,
    history_rows,
    train,
)

_BUILDERS = {
    "probit": ex.build_probit,
    "two-moon": ex.build_two_moon,
    "gcn-recover": ex.build_gcn_recovery,
}


def _write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, float):
                cells.append(repr(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _history_csv(path, history) -> None:
    _write_csv(path, ("epoch", "iter", "split", "metric", "value"), history_rows(history))


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _outdir(args, cfg) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.ini")
    return out


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed_list:
        cfg.seeds = tuple(int(s) for s in args.seed_list.replace(",", " ").split())
    return cfg


def _panel_matrix(cfg: ExperimentConfig):
    """Panel from the configured CSV, or a synthetic one when none is given."""
    path = cfg.data.get("panel_csv", "")
    spec = dt.PanelSpec(
        lag=cfg.data.get("lag", 5), knn=cfg.data.get("knn", 4)
    )
    if path:
        return dt.load_panel_csv(path, spec)
    graph = erdos_renyi(cfg.data.get("nodes", 15), 0.3, RngStream(9090))
    return dt.gen_synthetic_panel(
        graph,
        cfg.data.get("panel_days", 500),
        RngStream(4242),
        n_classes=cfg.data.get("panel_classes", 2),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    manifest = {"kind": cfg.kind, "seeds": list(cfg.seeds), "files": {}}
    for seed in cfg.seeds:
        rng = RngStream(seed)
        if cfg.kind == "probit":
            n = cfg.data.get("n_train", 2000) + cfg.data.get("n_test", 500)
            ds, _ = dt.gen_probit(n, cfg.data.get("dim", 50), rng.split(11))
        elif cfg.kind == "two-moon":
            ds = dt.gen_two_moons(
                cfg.data.get("n_train", 500), cfg.data.get("noise", 0.1), rng.split(11)
            )
        elif cfg.kind == "gcn-recover":
            setup = ex.build_gcn_recovery(seed, METHOD_SVI, **cfg.overrides())
            ds = setup.train_set
        elif cfg.kind == "panel":
            panel = _panel_matrix(cfg)
            path = out / f"panel_seed{seed}.csv"
            dt.save_panel_csv(panel, path)
            manifest["files"][path.name] = _sha256(path)
            continue
        else:
            print(f"generate does not apply to kind {cfg.kind!r}", file=sys.stderr)
            return 1
        ds_dir = out / f"seed{seed}"
        dt.save_dataset(ds, ds_dir)
        for f in sorted(ds_dir.iterdir()):
            manifest["files"][f"seed{seed}/{f.name}"] = _sha256(f)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return 0


def _build_setup(cfg: ExperimentConfig, seed: int, method: str):
    over = cfg.overrides()
    if cfg.kind == "panel":
        panel = _panel_matrix(cfg)
        over.pop("panel_csv", None)
        over.pop("panel_days", None)
        over.pop("panel_classes", None)
        over.pop("nodes", None)
        over.pop("edge_prob", None)
        return ex.build_panel(panel, seed, method, **over)
    builder = _BUILDERS[cfg.kind]
    if cfg.kind == "probit":
        for k in ("nodes", "edge_prob", "channels", "teacher_hidden", "perturb_frac",
                  "lag", "knn", "n_train_days", "panel_csv", "panel_days",
                  "panel_classes", "noise", "hidden"):
            over.pop(k, None)
    elif cfg.kind == "two-moon":
        for k in ("dim", "nodes", "edge_prob", "channels", "teacher_hidden",
                  "perturb_frac", "lag", "knn", "n_train_days", "panel_csv",
                  "panel_days", "panel_classes"):
            over.pop(k, None)
    elif cfg.kind == "gcn-recover":
        for k in ("dim", "noise", "lag", "knn", "n_train_days", "panel_csv",
                  "panel_days", "panel_classes"):
            over.pop(k, None)
    return builder(seed, method, **over)


def cmd_train(args) -> int:
    cfg = _load(args)
    if cfg.kind == "theory-check":
        print("use the theory-check subcommand", file=sys.stderr)
        return 1
    out = _outdir(args, cfg)
    method = cfg.train.get("method", METHOD_SVI)
    for seed in cfg.seeds:
        setup = _build_setup(cfg, seed, method)
        net, history = train(
            setup.net, setup.train_set, setup.config,
            test_set=setup.test_set, reference=setup.reference,
        )
        _history_csv(out / f"history_{method}_seed{seed}.csv", history)
        save_network(net, out / f"model_{method}_seed{seed}.json")
    print(f"trained {method} on {cfg.kind} for seeds {list(cfg.seeds)} -> {out}")
    return 0


def cmd_compare(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    result = ex.CompareResult(setting="")
    for method in (METHOD_SVI, METHOD_SGD):
        result.histories[method] = {}
        result.finals[method] = {}
        for seed in cfg.seeds:
            setup = _build_setup(cfg, seed, method)
            result.setting = setup.setting
            history = ex.run_setup(setup)
            result.histories[method][seed] = history
            result.finals[method][seed] = history.points[-1].metrics
            _history_csv(out / f"history_{method}_seed{seed}.csv", history)
    _write_csv(
        out / "summary.csv",
        ("setting", "method", "metric", "split", "mean", "stderr"),
        ex.summarize(result),
    )
    print(f"compare written to {out}")
    return 0


def cmd_recover(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    sweep = cfg.train.get("hidden_sweep") or (2, 4, 8, 16, 32)
    record_dynamics = cfg.train.get("record_dynamics", False)
    over = cfg.overrides()
    over.pop("hidden", None)
    for k in ("dim", "noise", "lag", "knn", "n_train_days", "panel_csv",
              "panel_days", "panel_classes"):
        over.pop(k, None)
    curve_rows = []
    summary_rows = []
    for hidden in sweep:
        for perturbed in (False, True):
            result = ex.compare_methods(
                ex.build_gcn_recovery, cfg.seeds, hidden=hidden,
                perturbed=perturbed, record_dynamics=record_dynamics, **over,
            )
            for method, by_seed in result.histories.items():
                for seed, history in by_seed.items():
                    for epoch, it, split, metric, value in history_rows(history):
                        curve_rows.append(
                            (result.setting, method, seed, epoch, it, split, metric, value)
                        )
                    if record_dynamics and seed == cfg.seeds[0]:
                        _write_csv(
                            out / f"dynamics_{method}_H{hidden}_{'pert' if perturbed else 'known'}.csv",
                            ("snapshot", "neuron", "signed_norm", "out_weight"),
                            dynamics_rows(history),
                        )
            summary_rows.extend(ex.summarize(result))
    _write_csv(
        out / "curves.csv",
        ("setting", "method", "seed", "epoch", "iter", "split", "metric", "value"),
        curve_rows,
    )
    _write_csv(
        out / "final.csv",
        ("setting", "method", "metric", "split", "mean", "stderr"),
        summary_rows,
    )
    print(f"recovery sweep written to {out}")
    return 0


def cmd_panel(args) -> int:
    cfg = _load(args)
    cfg.kind = "panel"
    out = _outdir(args, cfg)
    result = ex.CompareResult(setting="")
    for method in (METHOD_SVI, METHOD_SGD):
        result.histories[method] = {}
        result.finals[method] = {}
        for seed in cfg.seeds:
            setup = _build_setup(cfg, seed, method)
            result.setting = setup.setting
            history = ex.run_setup(setup)
            result.histories[method][seed] = history
            result.finals[method][seed] = history.points[-1].metrics
            _history_csv(out / f"history_{method}_seed{seed}.csv", history)
    _write_csv(
        out / "summary.csv",
        ("setting", "method", "metric", "split", "mean", "stderr"),
        ex.summarize(result),
    )
    print(f"panel comparison written to {out}")
    return 0


def cmd_theory_check(args) -> int:
    cfg = _load(args)
    out = _outdir(args, cfg)
    results = run_battery(seed=cfg.seeds[0] if cfg.seeds else 0)
    _write_csv(
        out / "theory_report.csv",
        ("check", "tolerance", "measured", "status", "runtime_s", "details"),
        [r.row() for r in results],
    )
    width = max(len(r.name) for r in results)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name:{width}s}  {status}  measured={r.measured!r}  ({r.tolerance})")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed", file=sys.stderr)
        return 3
    print(f"all {len(results)} checks passed; report in {out}")
    return 0


# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vitrain",
        description="Operator-iteration training experiments and theory checks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("generate", cmd_generate),
        ("train", cmd_train),
        ("compare", cmd_compare),
        ("recover", cmd_recover),
        ("panel", cmd_panel),
        ("theory-check", cmd_theory_check),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed-list", default=None, help="comma-separated seeds")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
