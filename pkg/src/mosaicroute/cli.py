"""Command-line entry point: ``mosaicroute {map,estimate,train,sweep,report}``.

Exit codes: 0 success, 1 network not mappable, 2 bad input (config,
file format, missing files, infeasible profile), 3 training diverged.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiment as ex
from . import plotting
from .config import TRAIN_MODES, load_config, parse_seeds
from .errors import ConfigError, DomainError, FormatError
from .io import read_csv, write_csv, write_json

log = logging.getLogger("mosaicroute")

EXIT_OK, EXIT_UNMAPPABLE, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3


def _out_dir(args, cfg) -> Path:
    out = Path(args.out or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    cfg.output = str(out)  # keeps the data cache under the chosen directory
    return out


def _seeds(args, cfg) -> list:
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    if getattr(args, "seeds", None):
        return parse_seeds(args.seeds)
    return list(cfg.seeds)


def cmd_map(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    rep = ex.check_mask_file(cfg, args.mask, args.inputs)
    write_json(out / "mappability.json", rep.to_dict())
    occ = rep.occupancy
    lat_w, lat_h = cfg.grid.lattice_shape
    rows = []
    for y in range(lat_h):
        for x in range(lat_w):
            kind = ("NT", "RT0", "RT1")[(x & 1) + (y & 1)]
            if kind == "NT":
                load = int(occ.nt_fanin[(y // 2) * cfg.grid.nt_cols + x // 2])
                cap = cfg.grid.nt_input_size
            else:
                load, cap = int(occ.rt_load[y, x]), cfg.grid.rt_size
            rows.append({"x": x, "y": y, "kind": kind, "load": load, "capacity": cap,
                         "ok": load <= cap})
    write_csv(out / "occupancy.csv", rows)
    plotting.plot_occupancy(rep, out / "occupancy.png")
    print(rep.summary())
    return EXIT_OK if rep.mappable else EXIT_UNMAPPABLE


def cmd_estimate(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(args, cfg)
    rows = ex.run_estimate(cfg, seed=args.seed if args.seed is not None else 0, workers=args.workers)
    write_csv(out / "estimate.csv", rows)
    plotting.plot_estimate(rows, out / "estimate.png")
    for r in rows:
        print(f"P{r['profile_index']} {r['tile_kind']:>3}: mean {r['mean']:.1f} std {r['std']:.2f} "
              f"max {r['max']} (capacity {r['capacity']})")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.snn.epochs = args.epochs
    mode = args.mode or cfg.rewire.mode
    if args.match_memory:
        cfg.rewire.memory_target = ex.mean_run_memory(args.match_memory)
        print(f"memory target from profile runs: {cfg.rewire.memory_target}")
    out = _out_dir(args, cfg)
    seeds = _seeds(args, cfg)
    results = ex.run_seeds(cfg, seeds, mode, out / mode, workers=args.workers)
    write_csv(out / mode / "summary.csv", [_summary_row(r) for r in results])
    logs = {r["seed"]: read_csv(Path(r["run_dir"]) / "train_log.csv") for r in results
            if (Path(r["run_dir"]) / "train_log.csv").exists()}
    if logs:
        plotting.plot_training(logs, out / mode / "training.png")
    status = EXIT_OK
    for r in results:
        if r["status"] != "ok":
            print(f"seed {r['seed']}: DIVERGED ({r.get('error', '')})")
            status = EXIT_DIVERGED
            continue
        verdict = "mappable" if r["mappable"] else "NOT mappable"
        print(f"seed {r['seed']}: test acc {100 * r['test_acc']:.1f}%, "
              f"memory {r['memory_elements']}, {verdict}")
    return status


def _summary_row(r):
    keys = ["seed", "mode", "status", "test_acc", "train_acc", "memory_elements", "mappable",
            "n_active", "global_sparsity", "run_dir"]
    return {k: r.get(k, "") for k in keys}


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.snn.epochs = args.epochs
    out = _out_dir(args, cfg)
    seeds = parse_seeds(args.seeds) if args.seeds else None
    rows = ex.run_sweep(cfg, out / "sweep", seeds=seeds, workers=args.workers)
    write_csv(out / "sweep.csv", rows)
    plotting.plot_sweep(rows, out / "sweep.png")
    plotting.plot_accuracy_vs_memory(
        [{**r, "mode": "profile"} for r in rows],
        out / "sweep_memory.png")
    for r in rows:
        print(f"p1={r['p1']:g} p3={r['p3']:g}: acc {100 * r['acc_mean']:.1f} "
              f"+- {100 * r['acc_std']:.1f} memory {r['memory_mean']:.0f} "
              f"({r['n_ok']}/{r['n_seeds']} ok)")
    return EXIT_OK if all(r["n_ok"] == r["n_seeds"] for r in rows) else EXIT_DIVERGED


def cmd_report(args) -> int:
    runs = ex.load_runs(args.runs)
    rows = ex.aggregate(runs)
    if not rows:
        raise FileNotFoundError("no completed runs among " + ", ".join(map(str, args.runs)))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "report.csv", rows)
    comp = ex.comparison(rows)
    write_json(out / "comparison.json", comp)
    plotting.plot_accuracy_vs_memory(rows, out / "report.png")
    print(ex.format_table(rows))
    for p in comp["pairs"]:
        print(f"at memory ~{p['baseline_memory']:.0f}: profile-aware {100 * p['profile_acc']:.1f}% "
              f"vs L1 only {100 * p['baseline_acc']:.1f}% ({100 * p['acc_gain']:+.1f} points)")
    iso = comp["iso_accuracy"]
    if iso is not None:
        if iso["memory_ratio"] is None:
            print(f"no profile-aware run reaches the baseline's {100 * iso['baseline_acc']:.1f}%")
        else:
            bound = "" if iso["n_profile_targets"] > 1 else " (lower bound: one profile target)"
            print(f"iso-accuracy ({100 * iso['baseline_acc']:.1f}%) memory ratio: "
                  f"{iso['memory_ratio']:.2f}x{bound}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mosaicroute",
                                description="Routing-aware sparse training for tiled spiking hardware.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seeds=True):
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--out", help="output directory (default: the config's output)")
        if seeds:
            g = sp.add_mutually_exclusive_group()
            g.add_argument("--seed", type=int)
            g.add_argument("--seeds", help="inclusive range N..M or a single N")
        sp.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    sp = sub.add_parser("map", help="route a mask file and check it fits the tiles")
    common(sp, seeds=False)
    sp.add_argument("--mask", required=True, help="recurrent mask, sparse triplet file")
    sp.add_argument("--inputs", help="input projection, sparse triplet file (channel, neuron)")
    sp.set_defaults(func=cmd_map)

    sp = sub.add_parser("estimate", help="Monte-Carlo minimum tile sizes for target profiles")
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("train", help="train one network per seed")
    common(sp)
    sp.add_argument("--mode", choices=TRAIN_MODES)
    sp.add_argument("--epochs", type=int, help="override snn.epochs")
    sp.add_argument("--match-memory", nargs="+", metavar="RUN_DIR",
                    help="l1-baseline: prune the final network down to the mean memory of "
                         "the profile runs found here (sets rewire.memory_target)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sweep", help="profile-mode training over a (p1, p3) grid")
    common(sp)
    sp.add_argument("--epochs", type=int, help="override snn.epochs")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("report", help="aggregate run directories into accuracy vs memory")
    sp.add_argument("runs", nargs="+", help="run directories (searched recursively)")
    sp.add_argument("--out", help="output directory (default: current directory)")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FormatError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
