"""Shared-path 1-turn multicast routing and per-tile occupancy accounting.

Occupancy unit: one crossbar input row.  An axon that passes through a
routing tile takes one row there, however many destinations sit behind
it.  A destination NT spends one fan-in row per remote source neuron,
since a row fans out to every local neuron.  The local recurrent rows of
an NT (one per hosted neuron) are hard-wired, so the fan-in a tile must
provide is ``neurons_per_tile + remote sources + input channels``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .topology import GridConfig, NeuronId, TileId, TileKind, TileLattice

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RouteTree:
    source: NeuronId
    destinations: frozenset
    tiles: frozenset
    # tile -> tiles it forwards to; destination NTs are not listed
    branches: dict = field(default_factory=dict, compare=False)
    paths: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.tiles)


def route_axon(source: NeuronId, destinations, lattice: TileLattice) -> RouteTree:
    """Route one source neuron to a set of destination NTs.

    Every destination gets its x-then-y path; paths leaving the same
    source share their common prefix, so the tree is the union of those
    paths with each tile stored once.
    """
    dests = frozenset(tuple(int(v) for v in d) for d in destinations)
    if not dests:
        raise DomainError("route_axon needs at least one destination")
    src_nt = tuple(source.tile)
    lattice.nt_site(src_nt)
    paths = {}
    tiles: set[TileId] = set()
    branches: dict[TileId, set[TileId]] = {}
    for d in sorted(dests):
        path = lattice.xy_path(src_nt, d)
        paths[d] = path
        tiles.update(path)
        for a, b in zip(path, path[1:]):
            branches.setdefault(a, set()).add(b)
    return RouteTree(
        source=source,
        destinations=dests,
        tiles=frozenset(tiles),
        branches={k: frozenset(v) for k, v in branches.items()},
        paths=paths,
    )


def path_turns(path) -> list[TileId]:
    """Tiles at which a routed path changes direction."""
    turns = []
    for a, b, c in zip(path, path[1:], path[2:]):
        if (b.x - a.x, b.y - a.y) != (c.x - b.x, c.y - b.y):
            turns.append(b)
    return turns


def is_legal_path(path) -> bool:
    """At most one turn, only on an RT1, horizontal moves before vertical ones."""
    for a, b in zip(path, path[1:]):
        if abs(a.x - b.x) + abs(a.y - b.y) != 1:
            return False
    turns = path_turns(path)
    if len(turns) > 1 or any(t.kind is not TileKind.RT1 for t in turns):
        return False
    seen_vertical = False
    for a, b in zip(path, path[1:]):
        if a.x == b.x:
            seen_vertical = True
        elif seen_vertical:
            return False
    return True


@dataclass
class OccupancyMap:
    """Rows consumed per tile.

    ``rt_load`` is a (height, width) array over lattice sites (zero on NT
    sites); NT arrays are indexed by flat NT index.
    """

    config: GridConfig
    rt_load: np.ndarray
    nt_remote: np.ndarray
    nt_local: np.ndarray
    nt_input: np.ndarray

    @property
    def nt_fanin(self) -> np.ndarray:
        return self.config.neurons_per_tile + self.nt_remote + self.nt_input

    def load(self, tile: TileId) -> int:
        if tile.kind is TileKind.NT:
            row, col = tile.y // 2, tile.x // 2
            return int(self.nt_fanin[row * self.config.nt_cols + col])
        return int(self.rt_load[tile.y, tile.x])

    def kind_max(self, kind: TileKind) -> int:
        if kind is TileKind.NT:
            return int(self.nt_fanin.max())
        mask = _kind_mask(self.config, kind)
        return int(self.rt_load[mask].max()) if mask.any() else 0

    def memory_elements(self) -> int:
        """Occupied input rows over all tiles (local rows counted only when used)."""
        return int(
            self.rt_load.sum() + self.nt_remote.sum() + self.nt_local.sum() + self.nt_input.sum()
        )

    def to_dict(self) -> dict:
        return {
            "rt_load": self.rt_load.tolist(),
            "nt_fanin": self.nt_fanin.tolist(),
            "nt_remote": self.nt_remote.tolist(),
            "nt_local": self.nt_local.tolist(),
            "nt_input": self.nt_input.tolist(),
            "memory_elements": self.memory_elements(),
        }


@lru_cache(maxsize=32)
def _kind_mask(config: GridConfig, kind: TileKind) -> np.ndarray:
    w, h = config.lattice_shape
    xs, ys = np.meshgrid(np.arange(w), np.arange(h))
    odd = (xs & 1) + (ys & 1)
    out = odd == {TileKind.NT: 0, TileKind.RT0: 1, TileKind.RT1: 2}[kind]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _path_table(config: GridConfig) -> np.ndarray:
    """(n_tiles, n_tiles, height*width) membership of lattice sites in each NT-to-NT path."""
    lattice = TileLattice(config)
    n = config.n_tiles
    table = np.zeros((n, n, lattice.height * lattice.width), dtype=bool)
    for i in range(n):
        for j in range(n):
            for t in lattice.xy_path(lattice.nt_from_index(i), lattice.nt_from_index(j)):
                table[i, j, lattice.flat_index(t.x, t.y)] = True
    table.setflags(write=False)
    return table


def _validate(mask: np.ndarray, placement: np.ndarray, config: GridConfig):
    mask = np.asarray(mask)
    placement = np.asarray(placement)
    if placement.ndim != 1:
        raise DomainError("placement must be a 1-D neuron -> NT index array")
    n = placement.shape[0]
    if mask.shape != (n, n):
        raise DomainError(f"mask shape {mask.shape} does not match {n} placed neurons")
    if n and (placement.min() < 0 or placement.max() >= config.n_tiles):
        raise DomainError("placement refers to NTs outside the grid")
    return mask != 0, placement.astype(np.int64)


def destination_tiles(mask: np.ndarray, placement: np.ndarray, n_tiles: int) -> np.ndarray:
    """(n_pre, n_tiles) bool: does neuron ``pre`` reach any neuron in tile ``t``."""
    onehot = np.zeros((placement.shape[0], n_tiles), dtype=np.int64)
    onehot[np.arange(placement.shape[0]), placement] = 1
    return (mask.astype(np.int64) @ onehot) > 0


def compute_occupancy(
    mask, placement, lattice: TileLattice, input_mask=None
) -> OccupancyMap:
    """Exact row usage of a recurrent connectivity mask routed on ``lattice``.

    ``mask[pre, post]`` is the recurrent mask.  ``input_mask[channel, post]``
    optionally adds input-layer rows: a channel spends one row in every NT
    it reaches and, being injected locally, no routing rows.
    """
    config = lattice.config
    mask, placement = _validate(mask, placement, config)
    n_tiles = config.n_tiles
    reach = destination_tiles(mask, placement, n_tiles)
    own = np.zeros_like(reach)
    own[np.arange(placement.shape[0]), placement] = True

    remote = reach & ~own
    nt_remote = remote.sum(axis=0).astype(np.int64)
    nt_local = np.bincount(placement[(reach & own).any(axis=1)], minlength=n_tiles).astype(np.int64)

    table = _path_table(config)
    rt_flat = np.zeros(lattice.height * lattice.width, dtype=np.int64)
    for src_tile in range(n_tiles):
        rows = remote[placement == src_tile]
        if rows.size == 0:
            continue
        # union of per-destination paths, one row per axon per tile
        used = (rows.astype(np.int64) @ table[src_tile].astype(np.int64)) > 0
        rt_flat += used.sum(axis=0)
    rt_load = rt_flat.reshape(lattice.height, lattice.width)

    nt_input = np.zeros(n_tiles, dtype=np.int64)
    if input_mask is not None:
        input_mask = np.asarray(input_mask) != 0
        if input_mask.ndim != 2 or input_mask.shape[1] != placement.shape[0]:
            raise DomainError(
                f"input mask shape {input_mask.shape} does not match {placement.shape[0]} neurons"
            )
        nt_input = destination_tiles(input_mask, placement, n_tiles).sum(axis=0).astype(np.int64)

    return OccupancyMap(config, rt_load, nt_remote, nt_local, nt_input)


@dataclass
class Violation:
    tile: TileId
    required: int
    capacity: int

    def to_dict(self):
        return {"tile": str(self.tile), "kind": self.tile.kind.value, "x": self.tile.x,
                "y": self.tile.y, "required": self.required, "capacity": self.capacity}


@dataclass
class MappabilityReport:
    mappable: bool
    violations: list
    peak_nt_fanin: int
    peak_rt_load: int
    occupancy: OccupancyMap | None = None

    def to_dict(self, with_occupancy=True) -> dict:
        out = {
            "mappable": self.mappable,
            "peak_nt_fanin": self.peak_nt_fanin,
            "peak_rt_load": self.peak_rt_load,
            "violations": [v.to_dict() for v in self.violations],
        }
        if with_occupancy and self.occupancy is not None:
            out["memory_elements"] = self.occupancy.memory_elements()
            out["occupancy"] = self.occupancy.to_dict()
        return out

    def summary(self) -> str:
        verdict = "MAPPABLE" if self.mappable else "NOT MAPPABLE"
        lines = [f"{verdict}: peak NT fan-in {self.peak_nt_fanin}, peak RT load {self.peak_rt_load}"]
        if self.occupancy is not None:
            cfg = self.occupancy.config
            lines.append(f"capacities: NT {cfg.nt_input_size}, RT {cfg.rt_size}; "
                         f"memory elements {self.occupancy.memory_elements()}")
        for v in self.violations:
            lines.append(f"  {v.tile}: needs {v.required} > {v.capacity}")
        return "\n".join(lines)


def check_mappable(
    mask, placement, lattice: TileLattice, config: GridConfig | None = None,
    input_mask=None,
) -> MappabilityReport:
    """Route ``mask`` and compare every tile's load with its crossbar size.

    ``config`` defaults to the lattice's own; passing another one checks the
    same routed network against different tile capacities.
    """
    config = config or lattice.config
    if config.lattice_shape != lattice.config.lattice_shape:
        raise DomainError("capacity config does not describe the same grid as the lattice")
    occ = compute_occupancy(mask, placement, lattice, input_mask=input_mask)
    violations = []
    fanin = occ.nt_fanin
    for idx in np.flatnonzero(fanin > config.nt_input_size):
        row, col = divmod(int(idx), config.nt_cols)
        violations.append(Violation(TileId(2 * col, 2 * row, TileKind.NT),
                                    int(fanin[idx]), config.nt_input_size))
    for y, x in zip(*np.nonzero(occ.rt_load > config.rt_size)):
        tile = lattice.tile(int(x), int(y))
        violations.append(Violation(tile, int(occ.rt_load[y, x]), config.rt_size))
    rt_peak = int(occ.rt_load.max()) if occ.rt_load.size else 0
    report = MappabilityReport(
        mappable=not violations,
        violations=violations,
        peak_nt_fanin=int(fanin.max()),
        peak_rt_load=rt_peak,
        occupancy=occ,
    )
    if violations:
        log.debug("network not mappable: %d violations", len(violations))
    return report
