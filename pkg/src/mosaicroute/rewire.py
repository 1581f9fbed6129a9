"""Prune-and-reassign rewiring under fixed per-bucket connection budgets.

In ``profile`` mode every hop distance is its own bucket with budget
``n_d``; in ``global`` mode all eligible pairs form one bucket with budget
``round(s * N**2)``.  After each :func:`rewire_epoch` the number of active
recurrent connections in every bucket equals its budget exactly.

The state object is mutable: :func:`prune` and :func:`reassign` return new
parameter objects and update ``state.active`` in place.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .params import NetworkParams
from .profile import (
    SparsityProfile,
    bucket_counts,
    eligible_sizes,
    pair_buckets,
    sample_mask_with_profile,
    target_counts,
)
from .router import compute_occupancy
from .topology import TileLattice

MODES = ("profile", "global")


@dataclass
class RewireState:
    mode: str
    buckets: np.ndarray  # (N, N) rewiring bucket per pair, -1 = ineligible
    targets: np.ndarray  # budget per bucket
    active: np.ndarray  # (N, N) bool
    prune_threshold: float
    lambda_l1: float
    regrow_magnitude: float
    hop_buckets: np.ndarray  # (N, N) hop distance per pair, -1 = ineligible
    profile: SparsityProfile | None = None
    placement: np.ndarray | None = None
    lattice: TileLattice | None = None
    allow_self: bool = False
    last_regrown: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_buckets(self) -> int:
        return len(self.targets)

    def counts(self) -> np.ndarray:
        return bucket_counts(self.active, self.buckets, self.n_buckets - 1)

    def hop_counts(self) -> np.ndarray:
        dm = int(self.hop_buckets.max()) if self.hop_buckets.size else 0
        return bucket_counts(self.active, self.hop_buckets, dm)

    def bucket_sizes(self) -> np.ndarray:
        return eligible_sizes(self.buckets, self.n_buckets - 1)


def make_state(
    placement,
    lattice: TileLattice,
    mode: str = "profile",
    profile: SparsityProfile | None = None,
    global_sparsity: float | None = None,
    prune_threshold: float = 1e-3,
    lambda_l1: float = 1e-5,
    regrow_magnitude: float | None = None,
    allow_self: bool = False,
) -> RewireState:
    if mode not in MODES:
        raise ConfigError(f"rewire mode must be one of {MODES}, got {mode!r}")
    if prune_threshold < 0 or lambda_l1 < 0:
        raise ConfigError("prune_threshold and lambda_l1 must be >= 0")
    placement = np.asarray(placement, dtype=np.int64)
    hop_buckets = pair_buckets(placement, lattice, allow_self)
    n = placement.shape[0]
    if mode == "profile":
        if profile is None:
            raise ConfigError("profile mode needs a target profile")
        profile = profile.fit(lattice.d_max)
        buckets = hop_buckets
        targets = target_counts(profile, eligible_sizes(buckets, lattice.d_max))
    else:
        if global_sparsity is None or not 0.0 <= global_sparsity <= 1.0:
            raise ConfigError("global mode needs global_sparsity in [0, 1]")
        buckets = np.where(hop_buckets >= 0, 0, -1)
        targets = np.array([int(np.round(global_sparsity * n * n))], dtype=np.int64)
        if targets[0] > np.count_nonzero(buckets >= 0):
            raise DomainError(f"global sparsity {global_sparsity} exceeds the eligible pairs")
    return RewireState(
        mode=mode,
        buckets=buckets,
        targets=targets,
        active=np.zeros((n, n), dtype=bool),
        prune_threshold=float(prune_threshold),
        lambda_l1=float(lambda_l1),
        regrow_magnitude=float(prune_threshold if regrow_magnitude is None else regrow_magnitude),
        hop_buckets=hop_buckets,
        profile=profile,
        placement=placement,
        lattice=lattice,
        allow_self=allow_self,
    )


def init_weights(
    state: RewireState,
    init_scale: float = 1.0,
    seed=0,
    n_in: int = 0,
    n_out: int = 0,
    in_scale: float = 1.0,
    out_scale: float = 1.0,
    input_mask=None,
) -> NetworkParams:
    """Draw an initial active set meeting every budget, then the weights.

    Recurrent weights are Gaussian with std ``init_scale / sqrt(mean fan-in)``;
    inactive entries are exactly zero.  ``input_mask`` (channels x neurons)
    restricts the input projection the same way.
    """
    root = np.random.SeedSequence(seed)
    mask_seed, w_seed = root.spawn(2)
    n = state.active.shape[0]
    if state.mode == "profile":
        active = sample_mask_with_profile(
            state.profile, state.placement, state.lattice, mask_seed,
            allow_self=state.allow_self,
        )
    else:
        active = _sample_budgets(state.buckets, state.targets, np.random.default_rng(mask_seed))
    state.active = active
    rng = np.random.default_rng(w_seed)
    fan_in = max(1.0, active.sum() / max(n, 1))
    w_rec = np.zeros((n, n), dtype=np.float32)
    w_rec[active] = (rng.standard_normal(int(active.sum())) * init_scale / np.sqrt(fan_in))
    if input_mask is None:
        input_mask = np.ones((n_in, n), dtype=bool)
    input_mask = np.asarray(input_mask, dtype=bool)
    if input_mask.shape != (n_in, n):
        raise DomainError(f"input mask shape {input_mask.shape} != {(n_in, n)}")
    in_fan = max(1.0, input_mask.sum() / max(n, 1))
    w_in = (rng.standard_normal((n_in, n)) * in_scale / np.sqrt(in_fan)).astype(np.float32)
    w_in[~input_mask] = 0.0
    w_out = (rng.standard_normal((n, n_out)) * out_scale / np.sqrt(max(n, 1))).astype(np.float32)
    return NetworkParams(w_in=w_in, w_rec=w_rec, w_out=w_out, b_out=np.zeros(n_out, np.float32))


def _sample_budgets(buckets, targets, rng) -> np.ndarray:
    flat = buckets.ravel()
    mask = np.zeros(flat.shape, dtype=bool)
    for b, n_b in enumerate(targets):
        if n_b:
            members = np.flatnonzero(flat == b)
            mask[rng.choice(members, size=int(n_b), replace=False)] = True
    return mask.reshape(buckets.shape)


def l1_loss_term(params: NetworkParams, lambda_l1: float, active=None) -> float:
    """``lambda * sum |w|`` over active recurrent weights."""
    w = np.asarray(params.w_rec, dtype=np.float64)
    if active is not None:
        w = np.where(active, w, 0.0)
    return float(lambda_l1 * np.abs(w).sum())


def prune(params: NetworkParams, state: RewireState) -> NetworkParams:
    """Deactivate every active connection with ``|w| < prune_threshold``."""
    # compare in the weights' own precision so a regrown weight sits exactly at threshold
    thr = np.asarray(state.prune_threshold, dtype=params.w_rec.dtype)
    weak = state.active & (np.abs(params.w_rec) < thr)
    out = params.copy()
    state.active = state.active & ~weak
    out.w_rec[~state.active] = 0.0
    return out


def prune_to_memory(params: NetworkParams, state: RewireState, budget: int,
                    input_mask=None) -> NetworkParams:
    """Drop the weakest active connections until the routed memory is ``<= budget``.

    Connections go in order of increasing ``|w|`` (ties by flat index).
    Removing a connection never raises occupancy, so the shortest prefix
    of that order that fits is found by bisection.
    """
    if state.placement is None or state.lattice is None:
        raise DomainError("prune_to_memory needs a state built with placement and lattice")
    idx = np.flatnonzero(state.active)
    order = idx[np.lexsort((idx, np.abs(params.w_rec.ravel()[idx])))]

    def memory(k):
        mask = state.active.copy().ravel()
        mask[order[:k]] = False
        occ = compute_occupancy(mask.reshape(state.active.shape), state.placement, state.lattice,
                                input_mask=input_mask)
        return occ.memory_elements()

    lo, hi = 0, order.size
    if memory(lo) > budget:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if memory(mid) <= budget:
                hi = mid
            else:
                lo = mid
        drop = order[:hi]
    else:
        drop = order[:0]
    out = params.copy()
    flat = state.active.ravel().copy()
    flat[drop] = False
    state.active = flat.reshape(state.active.shape)
    out.w_rec[~state.active] = 0.0
    return out


def reassign(params: NetworkParams, state: RewireState, seed) -> NetworkParams:
    """Top every bucket back up to its budget with uniformly drawn new connections.

    New connections start at ``+-regrow_magnitude`` with random sign.
    """
    rng = np.random.default_rng(seed)
    counts = state.counts()
    if np.any(counts > state.targets):
        raise DomainError("reassign called with a bucket above its budget")
    flat_b = state.buckets.ravel()
    flat_a = state.active.ravel().copy()
    grown = []
    for b in range(state.n_buckets):
        deficit = int(state.targets[b] - counts[b])
        if deficit == 0:
            continue
        free = np.flatnonzero((flat_b == b) & ~flat_a)
        assert free.size >= deficit, "bucket exhausted below its budget"
        pick = rng.choice(free, size=deficit, replace=False)
        flat_a[pick] = True
        grown.append(np.sort(pick))
    out = params.copy()
    idx = np.concatenate(grown) if grown else np.zeros(0, dtype=np.int64)
    if idx.size:
        signs = rng.choice(np.array([-1.0, 1.0]), size=idx.size)
        np.put(out.w_rec, idx, (signs * state.regrow_magnitude).astype(out.w_rec.dtype))
    state.active = flat_a.reshape(state.active.shape)
    state.last_regrown = idx
    return out


@dataclass
class RewireEvent:
    epoch: int
    pruned: np.ndarray
    regrown: np.ndarray

    def rows(self):
        for b, (p, g) in enumerate(zip(self.pruned.tolist(), self.regrown.tolist())):
            yield {"epoch": self.epoch, "bucket": b, "pruned": p, "regrown": g}


def rewire_epoch(params: NetworkParams, state: RewireState, seed, epoch: int = 0):
    """One prune-then-reassign step; returns ``(params, RewireEvent)``."""
    before = state.counts()
    pruned_params = prune(params, state)
    mid = state.counts()
    new_params = reassign(pruned_params, state, seed)
    after = state.counts()
    return new_params, RewireEvent(epoch, before - mid, after - mid)


def consistency_errors(params: NetworkParams, state: RewireState) -> list[str]:
    """Budget and mask/weight violations; empty when the state is sound."""
    errs = []
    counts = state.counts()
    bad = np.flatnonzero(counts != state.targets)
    for b in bad:
        errs.append(f"bucket {b}: {counts[b]} active, budget {state.targets[b]}")
    if np.any(params.w_rec[~state.active] != 0):
        errs.append(f"{int(np.count_nonzero(params.w_rec[~state.active]))} inactive weights non-zero")
    if np.any(state.active & (state.buckets < 0)):
        errs.append("ineligible pairs are active")
    return errs
