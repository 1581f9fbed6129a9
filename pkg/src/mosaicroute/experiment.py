"""Experiment pipelines behind the command-line subcommands.

Each pipeline takes an :class:`ExperimentConfig`, writes its artifacts to a
directory and returns plain dicts, so the CLI stays a thin argument parser
and the same code paths can be driven from tests.
"""
from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_profile
from .data import bin_spikes, cached_bins, load_shd, pool_channels, synthetic_task
from .errors import ConfigError, TrainingDiverged
from .io import read_csv, write_container, write_csv, write_json, write_triplets
from .params import NetworkParams
from .profile import SparsityProfile, estimate_required_resources, sample_mask_with_profile
from .rewire import RewireState, init_weights, make_state, _sample_budgets
from .router import check_mappable, compute_occupancy
from .snn import TrainData, lif_config_dict, train
from .topology import build_lattice, default_placement, input_mask, input_placement

log = logging.getLogger(__name__)

SHD_CHANNELS = 700

TRAIN_LOG_FIELDS = [
    "epoch", "train_loss", "test_loss", "train_acc", "test_acc", "l1", "n_active",
    "hop_counts", "budget_ok", "pruned", "regrown", "mappable", "memory_elements",
]


@dataclass
class Setup:
    """Everything derived from a config that does not depend on the training seed."""

    cfg: ExperimentConfig
    lattice: object
    placement: np.ndarray
    channel_tiles: np.ndarray
    input_mask: np.ndarray

    @property
    def n_channels(self) -> int:
        return self.channel_tiles.shape[0]

    def inputs_per_nt(self) -> int:
        """Largest number of input rows any NT spends on the input layer."""
        return int(np.max(self.input_mask_rows())) if self.n_channels else 0

    def input_mask_rows(self) -> np.ndarray:
        occ = compute_occupancy(np.zeros((len(self.placement),) * 2, bool), self.placement,
                                self.lattice, input_mask=self.input_mask)
        return occ.nt_input


def n_input_channels(cfg: ExperimentConfig) -> int:
    if cfg.data.source == "synthetic":
        return cfg.data.synthetic.n_channels
    return -(-SHD_CHANNELS // cfg.data.pool)


def make_setup(cfg: ExperimentConfig) -> Setup:
    lattice = build_lattice(cfg.grid)
    placement = default_placement(cfg.grid)
    tiles = input_placement(n_input_channels(cfg), cfg.grid)
    im = input_mask(tiles, placement, dense=cfg.data.input_routing == "dense")
    return Setup(cfg, lattice, placement, tiles, im)


def load_data(cfg: ExperimentConfig, cache_dir=None) -> tuple[TrainData, int]:
    """Binned train/test tensors and the number of classes."""
    d = cfg.data
    if d.source == "synthetic":
        s = d.synthetic
        tr, te = synthetic_task(
            n_classes=s.n_classes, n_channels=s.n_channels, n_steps=d.n_steps, seed=s.seed,
            n_train=s.n_train, n_test=s.n_test, jitter=s.jitter, dropout=s.dropout,
            events_per_channel=s.events_per_channel, duration=d.duration, span=s.span,
        )
        xs = [bin_spikes(ds, d.n_steps, d.duration) for ds in (tr, te)]
    else:
        tr = pool_channels(load_shd(d.path, "train"), d.pool)
        te = pool_channels(load_shd(d.path, "test"), d.pool)
        if d.cache and cache_dir is not None:
            Path(cache_dir).mkdir(parents=True, exist_ok=True)
            xs = [cached_bins(ds, d.n_steps, Path(cache_dir) / f"shd_{ds.split}_{d.n_steps}_p{d.pool}",
                              d.duration) for ds in (tr, te)]
        else:
            xs = [bin_spikes(ds, d.n_steps, d.duration) for ds in (tr, te)]
    if xs[0].shape[2] != n_input_channels(cfg):
        raise ConfigError(f"data has {xs[0].shape[2]} channels, expected {n_input_channels(cfg)}")
    return TrainData(xs[0], tr.labels, xs[1], te.labels), tr.n_classes


# -- memory matching for the baseline -----------------------------------------


def expected_memory(setup: Setup, mask_fn, n_samples: int = 8, seed=0) -> float:
    vals = []
    for s in np.random.SeedSequence(seed).spawn(n_samples):
        m = mask_fn(s)
        occ = compute_occupancy(m, setup.placement, setup.lattice, input_mask=setup.input_mask)
        vals.append(occ.memory_elements())
    return float(np.mean(vals))


def profile_memory(setup: Setup, profile: SparsityProfile, n_samples: int = 8, seed=0) -> float:
    allow_self = setup.cfg.rewire.allow_self
    return expected_memory(
        setup, lambda s: sample_mask_with_profile(profile, setup.placement, setup.lattice, s, allow_self),
        n_samples, seed)


def global_memory(setup: Setup, n_connections: int, n_samples: int = 8, seed=0) -> float:
    n = len(setup.placement)
    buckets = np.full((n, n), 0)
    if not setup.cfg.rewire.allow_self:
        np.fill_diagonal(buckets, -1)
    targets = np.array([n_connections])
    return expected_memory(
        setup, lambda s: _sample_budgets(buckets, targets, np.random.default_rng(s)), n_samples, seed)


def match_global_sparsity(setup: Setup, profile: SparsityProfile, n_samples: int = 8, seed=0) -> float:
    """Global density whose random masks use as many memory elements as ``profile``'s.

    Bisection on the connection count; expected memory grows with it.
    """
    target = profile_memory(setup, profile, n_samples, seed)
    n = len(setup.placement)
    lo, hi = 0, n * n - (0 if setup.cfg.rewire.allow_self else n)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if global_memory(setup, mid, n_samples, seed) < target:
            lo = mid
        else:
            hi = mid
    # pick whichever neighbour lands closer
    k = lo if abs(global_memory(setup, lo, n_samples, seed) - target) <= abs(
        global_memory(setup, hi, n_samples, seed) - target) else hi
    log.info("matched global sparsity %.5f (%d connections) to profile memory %.1f",
             k / (n * n), k, target)
    return k / (n * n)


def resolve_global_sparsity(setup: Setup) -> float:
    gs = setup.cfg.rewire.global_sparsity
    if gs is None:
        raise ConfigError("global and l1-baseline modes need rewire.global_sparsity")
    if gs == "match":
        return match_global_sparsity(setup, setup.cfg.profile)
    return float(gs)


def make_rewire_state(setup: Setup, mode: str, global_sparsity: float | None = None,
                      profile: SparsityProfile | None = None) -> RewireState:
    rc = setup.cfg.rewire
    common = dict(prune_threshold=rc.prune_threshold, lambda_l1=rc.lambda_l1,
                  regrow_magnitude=rc.regrow_magnitude, allow_self=rc.allow_self)
    if mode == "profile":
        return make_state(setup.placement, setup.lattice, "profile",
                          profile=profile or setup.cfg.profile, **common)
    if global_sparsity is None:
        global_sparsity = resolve_global_sparsity(setup)
    return make_state(setup.placement, setup.lattice, "global", global_sparsity=global_sparsity,
                      **common)


# -- estimate -----------------------------------------------------------------


def estimate_profiles(cfg: ExperimentConfig) -> list[SparsityProfile]:
    from .topology import d_max

    dm = d_max(cfg.grid)
    if cfg.estimate.profiles:
        return [parse_profile(p, dm) for p in cfg.estimate.profiles]
    return [cfg.profile]


def run_estimate(cfg: ExperimentConfig, seed: int = 0, workers: int = 1) -> list[dict]:
    setup = make_setup(cfg)
    rows = []
    for idx, prof in enumerate(estimate_profiles(cfg)):
        est = estimate_required_resources(
            prof, setup.placement, setup.lattice, n_samples=cfg.estimate.n_samples, seed=seed,
            allow_self=cfg.rewire.allow_self, n_input_channels=setup.inputs_per_nt(),
            workers=workers,
        )
        pcols = {f"p_{d}": v for d, v in enumerate(prof.p)}
        for r in est.rows():
            cap = cfg.grid.nt_input_size if r["tile_kind"] == "NT" else cfg.grid.rt_size
            rows.append({"profile_index": idx, **r, "cv": est.cv(r["tile_kind"]),
                         "capacity": cap, "fits": r["max"] <= cap, **pcols})
    return rows


def capacity_warnings(cfg: ExperimentConfig, setup: Setup, profile: SparsityProfile,
                      seed: int = 0) -> list[str]:
    est = estimate_required_resources(
        profile, setup.placement, setup.lattice, n_samples=cfg.estimate.n_samples, seed=seed,
        allow_self=cfg.rewire.allow_self, n_input_channels=setup.inputs_per_nt(),
    )
    out = []
    if est.stats["NT"].max > cfg.grid.nt_input_size:
        out.append(f"estimated NT fan-in up to {est.stats['NT'].max} exceeds nt_input_size "
                   f"{cfg.grid.nt_input_size}")
    if est.stats["RT"].max > cfg.grid.rt_size:
        out.append(f"estimated RT load up to {est.stats['RT'].max} exceeds rt_size {cfg.grid.rt_size}")
    return out


# -- training -----------------------------------------------------------------


def run_training(cfg: ExperimentConfig, seed: int, mode: str, out_dir,
                 global_sparsity: float | None = None, profile: SparsityProfile | None = None,
                 data: TrainData | None = None, n_classes: int | None = None) -> dict:
    """Train one network and write its run directory; returns the run summary.

    Files: ``train_log.csv``, ``rewire_events.csv``, ``mask.tsv`` (recurrent
    weights as triplets), ``inputs.tsv`` (input weights), ``checkpoint.bin``
    / ``.json``, ``mappability.json`` and ``run.json``.  On divergence the
    partial log and last parameters are still written, ``run.json`` records
    ``status: diverged`` and :class:`TrainingDiverged` is re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    setup = make_setup(cfg)
    profile = profile or cfg.profile
    if data is None:
        data, n_classes = load_data(cfg, cache_dir=Path(cfg.output) / "cache")
    if mode in ("global", "l1-baseline") and global_sparsity is None:
        global_sparsity = resolve_global_sparsity(setup)
    state = make_rewire_state(setup, "profile" if mode == "profile" else "global",
                              global_sparsity, profile)
    warnings = capacity_warnings(cfg, setup, profile) if mode == "profile" else []
    for w in warnings:
        log.warning("seed %d: %s", seed, w)

    sc = cfg.snn
    params = init_weights(state, sc.init_scale, seed, n_in=setup.n_channels, n_out=n_classes,
                          in_scale=sc.in_scale, out_scale=sc.out_scale, input_mask=setup.input_mask)
    summary = {
        "seed": seed,
        "mode": mode,
        "profile": list(profile.p) if mode == "profile" else None,
        "global_sparsity": global_sparsity if mode != "profile" else None,
        "epochs": sc.epochs,
        "grid": cfg.grid.to_dict(),
        "capacity_warnings": warnings,
        "memory_target": cfg.rewire.memory_target if mode == "l1-baseline" else None,
    }
    try:
        result = train(params, state, data, sc.optimizer, sc.epochs, seed, sc.lif,
                       rewiring=mode != "l1-baseline", map_every=cfg.rewire.map_every,
                       input_mask=setup.input_mask,
                       memory_budget=cfg.rewire.memory_target if mode == "l1-baseline" else None)
    except TrainingDiverged as exc:
        _write_log(out, exc.log, [])
        if exc.params is not None:
            _write_params(out, exc.params, state, cfg, seed, mode)
        write_json(out / "run.json", {**summary, "status": "diverged", "error": str(exc)})
        raise

    _write_log(out, result.log, result.events)
    _write_params(out, result.params, state, cfg, seed, mode)
    rep = result.final_report
    write_json(out / "mappability.json", rep.to_dict())
    last = result.log[-1]
    summary.update({
        "status": "ok",
        "test_acc": last["test_acc"],
        "train_acc": last["train_acc"],
        "test_loss": last["test_loss"],
        "n_active": last["n_active"],
        "hop_counts": last["hop_counts"],
        "memory_elements": rep.occupancy.memory_elements(),
        "mappable": rep.mappable,
        "budget_ok_all_epochs": all(r["budget_ok"] for r in result.log),
    })
    write_json(out / "run.json", summary)
    return summary


def _write_log(out: Path, rows, events):
    write_csv(out / "train_log.csv", rows, TRAIN_LOG_FIELDS)
    write_csv(out / "rewire_events.csv", [r for ev in events for r in ev.rows()],
              ["epoch", "bucket", "pruned", "regrown"])


def _write_params(out: Path, params: NetworkParams, state: RewireState, cfg, seed, mode):
    write_triplets(out / "mask.tsv", params.w_rec, state.active)
    write_triplets(out / "inputs.tsv", params.w_in)
    arrays = dict(params.arrays())
    arrays["active"] = state.active
    write_container(out / "checkpoint", arrays, {
        "seed": seed, "mode": mode, "lif": lif_config_dict(cfg.snn.lif),
        "optimizer": vars(cfg.snn.optimizer), "rewire": vars(cfg.rewire),
        "targets": state.targets.tolist(),
    })


def _train_job(args):
    cfg, seed, mode, out_dir, gs, profile = args
    import torch

    torch.set_num_threads(1)
    try:
        return run_training(cfg, seed, mode, out_dir, gs, profile)
    except TrainingDiverged as exc:
        return {"seed": seed, "mode": mode, "status": "diverged", "error": str(exc),
                "run_dir": str(out_dir)}


def run_seeds(cfg: ExperimentConfig, seeds, mode: str, out_root, workers: int = 1,
              profile: SparsityProfile | None = None, global_sparsity: float | None = None) -> list[dict]:
    """Train every seed into ``out_root/seed_<n>``; results come back in seed order."""
    out_root = Path(out_root)
    if mode in ("global", "l1-baseline") and global_sparsity is None:
        global_sparsity = resolve_global_sparsity(make_setup(cfg))
    jobs = [(cfg, s, mode, out_root / f"seed_{s}", global_sparsity, profile) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = []
        for j in jobs:
            cfg_, s, m, d, gs, pr = j
            try:
                results.append(run_training(cfg_, s, m, d, gs, pr))
            except TrainingDiverged as exc:
                results.append({"seed": s, "mode": m, "status": "diverged", "error": str(exc)})
    for r, j in zip(results, jobs):
        r["run_dir"] = str(j[3])
    return results


# -- sweep --------------------------------------------------------------------


def sweep_cells(cfg: ExperimentConfig) -> list[dict]:
    from .topology import d_max

    dm = d_max(cfg.grid)
    sw = cfg.sweep
    cells = []
    base = {int(k): float(v) for k, v in sw.base.items()}
    for p1, p3 in itertools.product(sw.p1, sw.p3):
        prof = dict(base)
        prof[1], prof[3] = float(p1), float(p3)
        cells.append({"p1": float(p1), "p3": float(p3),
                      "profile": SparsityProfile.from_mapping(prof, dm)})
    for p in sw.profiles:
        prof = parse_profile(p, dm)
        cells.append({"p1": prof[1] if dm >= 1 else 0.0, "p3": prof[3] if dm >= 3 else 0.0,
                      "profile": prof})
    if not cells:
        cells.append({"p1": cfg.profile[1] if dm >= 1 else 0.0,
                      "p3": cfg.profile[3] if dm >= 3 else 0.0, "profile": cfg.profile})
    return cells


def run_sweep(cfg: ExperimentConfig, out_root, seeds=None, workers: int = 1) -> list[dict]:
    """Profile-mode training over a grid of target profiles; one summary row per cell."""
    out_root = Path(out_root)
    cells = sweep_cells(cfg)
    seeds = list(seeds) if seeds is not None else list(range(cfg.seeds_per_cell))
    jobs = []
    for ci, cell in enumerate(cells):
        for s in seeds:
            jobs.append((cfg, s, "profile", out_root / f"cell_{ci}" / f"seed_{s}", None, cell["profile"]))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(j) for j in jobs]
    rows = []
    for ci, cell in enumerate(cells):
        runs = [r for r, j in zip(results, jobs) if j[3].parent.name == f"cell_{ci}"]
        ok = [r for r in runs if r.get("status") == "ok"]
        acc = np.array([r["test_acc"] for r in ok], dtype=float)
        mem = np.array([r["memory_elements"] for r in ok], dtype=float)
        rows.append({
            "cell": ci,
            "p1": cell["p1"],
            "p3": cell["p3"],
            "profile": ";".join(repr(v) for v in cell["profile"].p),
            "n_seeds": len(runs),
            "n_ok": len(ok),
            "acc_mean": float(acc.mean()) if ok else math.nan,
            "acc_std": float(acc.std()) if ok else math.nan,
            "memory_mean": float(mem.mean()) if ok else math.nan,
            "memory_std": float(mem.std()) if ok else math.nan,
            "all_mappable": all(r.get("mappable") for r in ok) and len(ok) == len(runs),
        })
    return rows


# -- report -------------------------------------------------------------------

REQUIRED_RUN_FILES = ("run.json", "train_log.csv")


def find_runs(paths) -> list[Path]:
    """Run directories under ``paths`` (a run directory is one holding run.json)."""
    found = []
    for p in paths:
        p = Path(p)
        if (p / "run.json").exists():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(q.parent for q in p.rglob("run.json")))
    return found


def load_runs(paths) -> list[dict]:
    import json

    dirs = [Path(p) for p in paths]
    missing = []
    for d in dirs:
        if not d.is_dir():
            missing.append(str(d))
            continue
        runs = find_runs([d])
        if not runs:
            missing.append(str(d / "run.json"))
        for r in runs:
            missing.extend(str(r / f) for f in REQUIRED_RUN_FILES if not (r / f).exists())
    if missing:
        raise FileNotFoundError("missing run files: " + ", ".join(missing))
    out = []
    for r in find_runs(dirs):
        info = json.loads((r / "run.json").read_text())
        info["run_dir"] = str(r)
        log_rows = read_csv(r / "train_log.csv")
        if info.get("status") == "ok" and not log_rows:
            raise FileNotFoundError(f"empty training log in {r}")
        out.append(info)
    return out


def mean_run_memory(paths, mode: str = "profile") -> int:
    """Mean final memory of the completed ``mode`` runs under ``paths``, rounded."""
    mem = [r["memory_elements"] for r in load_runs(paths)
           if r.get("status") == "ok" and r["mode"] == mode]
    if not mem:
        raise FileNotFoundError(f"no completed {mode} runs among " + ", ".join(map(str, paths)))
    return int(round(float(np.mean(mem))))


def _group_key(run: dict):
    if run["mode"] == "profile":
        return run["mode"], ";".join(repr(v) for v in run["profile"])
    return run["mode"], repr(run["global_sparsity"])


def aggregate(runs: list[dict]) -> list[dict]:
    """One (memory, accuracy) row per training mode and target."""
    groups: dict = {}
    for r in runs:
        if r.get("status") != "ok":
            continue
        groups.setdefault(_group_key(r), []).append(r)
    rows = []
    for (mode, target), rs in sorted(groups.items()):
        acc = np.array([r["test_acc"] for r in rs], dtype=float)
        mem = np.array([r["memory_elements"] for r in rs], dtype=float)
        rows.append({
            "mode": mode,
            "target": target,
            "n_runs": len(rs),
            "memory_mean": float(mem.mean()),
            "memory_std": float(mem.std()),
            "acc_mean": float(acc.mean()),
            "acc_std": float(acc.std()),
            "all_mappable": all(r["mappable"] for r in rs),
        })
    return rows


def comparison(rows: list[dict]) -> dict:
    """Profile-aware versus L1-only rows: accuracy gap at the closest memory, iso-accuracy ratio."""
    prof = [r for r in rows if r["mode"] == "profile"]
    base = [r for r in rows if r["mode"] == "l1-baseline"]
    out = {"pairs": [], "iso_accuracy": None}
    if not prof or not base:
        return out
    for b in base:
        p = min(prof, key=lambda r: abs(r["memory_mean"] - b["memory_mean"]))
        out["pairs"].append({
            "baseline_target": b["target"],
            "profile_target": p["target"],
            "baseline_memory": b["memory_mean"],
            "profile_memory": p["memory_mean"],
            "baseline_acc": b["acc_mean"],
            "profile_acc": p["acc_mean"],
            "acc_gain": p["acc_mean"] - b["acc_mean"],
        })
    best = max(base, key=lambda r: (r["acc_mean"], -r["memory_mean"]))
    reaching = [r for r in prof if r["acc_mean"] >= best["acc_mean"]]
    iso = {"baseline_acc": best["acc_mean"], "baseline_memory": best["memory_mean"],
           "profile_memory": None, "memory_ratio": None, "n_profile_targets": len(prof)}
    if reaching:
        cheapest = min(reaching, key=lambda r: r["memory_mean"])
        iso["profile_memory"] = cheapest["memory_mean"]
        iso["memory_ratio"] = best["memory_mean"] / cheapest["memory_mean"]
    out["iso_accuracy"] = iso
    return out


def format_table(rows: list[dict]) -> str:
    head = f"{'mode':<12} {'n':>3} {'memory':>10} {'accuracy':>16}  target"
    lines = [head, "-" * len(head)]
    for r in rows:
        acc = f"{100 * r['acc_mean']:.1f} +- {100 * r['acc_std']:.1f}"
        lines.append(f"{r['mode']:<12} {r['n_runs']:>3} {r['memory_mean']:>10.1f} {acc:>16}  "
                     f"{r['target']}")
    return "\n".join(lines)


def check_mask_file(cfg: ExperimentConfig, mask_path, inputs_path=None):
    """Route a recurrent mask (and optional input projection) read from triplet files."""
    from .io import read_triplets

    setup = make_setup(cfg)
    n = cfg.grid.n_neurons
    mask, _ = read_triplets(mask_path, n)
    im = None
    if inputs_path is not None:
        im, _ = read_triplets(inputs_path, setup.n_channels, n)
    return check_mappable(mask, setup.placement, setup.lattice, input_mask=im)


__all__ = [
    "Setup", "aggregate", "check_mask_file", "comparison", "format_table", "load_data",
    "load_runs", "make_setup", "match_global_sparsity", "run_estimate", "run_seeds",
    "run_sweep", "run_training",
]
