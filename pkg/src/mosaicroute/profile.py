"""Hop-distance sparsity profiles.

A profile holds one connection density per hop distance.  Densities are
taken over the *eligible* ordered neuron pairs of each hop bucket; self
pairs live in bucket 0 and are ineligible unless ``allow_self`` is set.
Target counts are ``round(p_d * eligible_d)`` with ties to even.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError
from .router import compute_occupancy
from .topology import TileKind, TileLattice


@dataclass(frozen=True)
class SparsityProfile:
    p: tuple

    def __post_init__(self):
        p = tuple(float(v) for v in self.p)
        for d, v in enumerate(p):
            if not math.isfinite(v) or v < 0.0 or v > 1.0:
                raise DomainError(f"p_{d} = {v} is not a fraction in [0, 1]")
        object.__setattr__(self, "p", p)

    def __len__(self):
        return len(self.p)

    def __getitem__(self, d):
        return self.p[d]

    @classmethod
    def from_mapping(cls, values: dict, d_max: int) -> "SparsityProfile":
        """Build from ``{d: p_d}``; unspecified distances are 0."""
        p = [0.0] * (d_max + 1)
        for d, v in values.items():
            d = int(d)
            if not 0 <= d <= d_max:
                raise DomainError(f"hop distance {d} outside 0..{d_max}")
            p[d] = float(v)
        return cls(tuple(p))

    def fit(self, d_max: int) -> "SparsityProfile":
        """Pad with zeros (or check trailing zeros) to length d_max + 1."""
        if len(self.p) <= d_max + 1:
            return SparsityProfile(self.p + (0.0,) * (d_max + 1 - len(self.p)))
        if any(self.p[d_max + 1:]):
            raise DomainError(f"profile has non-zero entries beyond d_max={d_max}")
        return SparsityProfile(self.p[: d_max + 1])

    def to_json(self) -> str:
        return json.dumps(list(self.p))


def read_profile(path) -> SparsityProfile:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(data, list) or not all(isinstance(v, (int, float)) for v in data):
        raise FormatError(f"{path}: expected a JSON array of numbers")
    return SparsityProfile(tuple(data))


def write_profile(profile: SparsityProfile, path) -> None:
    Path(path).write_text(profile.to_json() + "\n")


def pair_buckets(placement, lattice: TileLattice, allow_self: bool = False) -> np.ndarray:
    """(N, N) hop bucket of every ordered pair; -1 marks ineligible pairs."""
    placement = np.asarray(placement, dtype=np.int64)
    buckets = lattice.hop_matrix[placement[:, None], placement[None, :]].copy()
    if not allow_self:
        np.fill_diagonal(buckets, -1)
    return buckets


def eligible_sizes(buckets: np.ndarray, d_max: int) -> np.ndarray:
    return np.bincount(buckets[buckets >= 0], minlength=d_max + 1)[: d_max + 1]


def target_counts(target: SparsityProfile, sizes: np.ndarray) -> np.ndarray:
    """Per-bucket active-connection budget ``n_d``."""
    if len(target) != len(sizes):
        raise DomainError(f"profile length {len(target)} != {len(sizes)} hop buckets")
    # np.round rounds half to even
    counts = np.round(np.asarray(target.p) * sizes).astype(np.int64)
    if np.any(counts > sizes):
        raise DomainError("profile asks for more connections than a bucket holds")
    return counts


def bucket_counts(mask, buckets: np.ndarray, d_max: int) -> np.ndarray:
    mask = np.asarray(mask) != 0
    sel = mask & (buckets >= 0)
    return np.bincount(buckets[sel], minlength=d_max + 1)[: d_max + 1]


def measure_profile(mask, placement, lattice: TileLattice, allow_self: bool = False) -> SparsityProfile:
    buckets = pair_buckets(placement, lattice, allow_self)
    mask = np.asarray(mask) != 0
    if mask.shape != buckets.shape:
        raise DomainError(f"mask shape {mask.shape} does not match placement")
    if not allow_self and np.any(np.diag(mask)):
        raise DomainError("mask has self connections but allow_self is off")
    dm = lattice.d_max
    sizes = eligible_sizes(buckets, dm)
    counts = bucket_counts(mask, buckets, dm)
    p = np.divide(counts, sizes, out=np.zeros(dm + 1), where=sizes > 0)
    return SparsityProfile(tuple(p))


def sample_mask_with_profile(
    target: SparsityProfile, placement, lattice: TileLattice, seed, allow_self: bool = False
) -> np.ndarray:
    """Uniform random mask with exactly ``n_d`` active pairs in each bucket."""
    buckets = pair_buckets(placement, lattice, allow_self)
    dm = lattice.d_max
    target = target.fit(dm)
    sizes = eligible_sizes(buckets, dm)
    counts = target_counts(target, sizes)
    rng = np.random.default_rng(seed)
    flat = buckets.ravel()
    mask = np.zeros(flat.shape, dtype=bool)
    for d in range(dm + 1):
        if counts[d] == 0:
            continue
        members = np.flatnonzero(flat == d)
        mask[rng.choice(members, size=counts[d], replace=False)] = True
    return mask.reshape(buckets.shape)


@dataclass
class KindStats:
    mean: float
    std: float
    max: int


@dataclass
class ResourceEstimate:
    stats: dict  # kind name ("NT", "RT0", "RT1", "RT") -> KindStats
    n_samples: int
    samples: dict  # kind name -> per-sample maxima

    def cv(self, kind: str) -> float:
        s = self.stats[kind]
        if s.mean == 0:
            return 0.0 if s.std == 0 else math.inf
        return s.std / s.mean

    def rows(self):
        for kind, s in self.stats.items():
            yield {"tile_kind": kind, "mean": s.mean, "std": s.std, "max": s.max,
                   "n_samples": self.n_samples}


def sample_requirements(occ) -> dict:
    rt0 = occ.kind_max(TileKind.RT0)
    rt1 = occ.kind_max(TileKind.RT1)
    return {"NT": occ.kind_max(TileKind.NT), "RT0": rt0, "RT1": rt1, "RT": max(rt0, rt1)}


def _one_sample(args):
    target, placement, lattice, seed, allow_self, n_inputs = args
    mask = sample_mask_with_profile(target, placement, lattice, seed, allow_self)
    occ = compute_occupancy(mask, placement, lattice)
    req = sample_requirements(occ)
    req["NT"] += n_inputs
    return req


def estimate_required_resources(
    target: SparsityProfile,
    placement,
    lattice: TileLattice,
    n_samples: int = 20,
    seed=0,
    allow_self: bool = False,
    n_input_channels: int = 0,
    workers: int = 1,
) -> ResourceEstimate:
    """Monte-Carlo minimum tile sizes for networks drawn with profile ``target``.

    Each sample's requirement per tile kind is the largest load over tiles
    of that kind.  ``n_input_channels`` adds densely connected input rows to
    every NT.  Sample seeds are spawned from ``seed`` so parallel and
    sequential runs agree.
    """
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    target = target.fit(lattice.d_max)
    # fail early on infeasible targets
    target_counts(target, eligible_sizes(pair_buckets(placement, lattice, allow_self), lattice.d_max))
    seeds = np.random.SeedSequence(seed).spawn(n_samples)
    jobs = [(target, np.asarray(placement), lattice, s, allow_self, n_input_channels) for s in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one_sample, jobs))
    else:
        results = [_one_sample(j) for j in jobs]
    samples = {k: np.array([r[k] for r in results]) for k in ("NT", "RT0", "RT1", "RT")}
    stats = {
        k: KindStats(float(v.mean()), float(v.std()), int(v.max())) for k, v in samples.items()
    }
    return ResourceEstimate(stats, n_samples, samples)
