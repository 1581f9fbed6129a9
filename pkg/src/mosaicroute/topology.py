"""Tiled fabric geometry: neuron tiles, routing tiles and hop distances.

Neuron tiles (NT) sit on the even/even sites of a checkerboard lattice of
size (2*nt_cols - 1) x (2*nt_rows - 1).  Sites with exactly one odd
coordinate hold straight-only routers (RT0), odd/odd sites hold turning
routers (RT1).  Routing tiles therefore form lanes along every odd row
and odd column; an RT0 talks to the two NTs on either side of it and to
the RT1s up and down its lane.

Lattice coordinates are ``(x, y)`` = (column, row).  Neuron tiles are
addressed by ``(row, col)`` in NT units, or by their flat row-major index.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError, DomainError


class TileKind(str, enum.Enum):
    NT = "NT"
    RT0 = "RT0"
    RT1 = "RT1"


@dataclass(frozen=True)
class GridConfig:
    nt_rows: int
    nt_cols: int
    neurons_per_tile: int
    nt_input_size: int
    rt_size: int

    def __post_init__(self):
        for name in ("nt_rows", "nt_cols", "neurons_per_tile", "nt_input_size", "rt_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        if self.nt_rows < 1 or self.nt_cols < 1 or self.neurons_per_tile < 1:
            raise ConfigError("nt_rows, nt_cols and neurons_per_tile must be >= 1")
        if self.nt_input_size < self.neurons_per_tile:
            raise ConfigError(
                f"nt_input_size ({self.nt_input_size}) must be >= neurons_per_tile "
                f"({self.neurons_per_tile})"
            )
        if self.rt_size < 1:
            raise ConfigError("rt_size must be >= 1")
        # A single row or column of NTs has no routing lanes, so only
        # neighbouring tiles could ever talk to each other.
        if min(self.nt_rows, self.nt_cols) == 1 and max(self.nt_rows, self.nt_cols) > 2:
            raise ConfigError(
                f"a {self.nt_rows}x{self.nt_cols} grid has no routing lanes; "
                "single-row/column grids are limited to 2 tiles"
            )

    @property
    def n_tiles(self) -> int:
        return self.nt_rows * self.nt_cols

    @property
    def n_neurons(self) -> int:
        return self.n_tiles * self.neurons_per_tile

    @property
    def lattice_shape(self) -> tuple[int, int]:
        """(width, height) of the tile lattice."""
        return 2 * self.nt_cols - 1, 2 * self.nt_rows - 1

    @classmethod
    def from_dict(cls, d: dict) -> "GridConfig":
        keys = ("nt_rows", "nt_cols", "neurons_per_tile", "nt_input_size", "rt_size")
        missing = [k for k in keys if k not in d]
        if missing:
            raise ConfigError(f"grid config missing keys: {', '.join(missing)}")
        extra = sorted(set(d) - set(keys))
        if extra:
            raise ConfigError(f"unknown grid config keys: {', '.join(extra)}")
        return cls(**{k: d[k] for k in keys})

    def to_dict(self) -> dict:
        return {
            "nt_rows": self.nt_rows,
            "nt_cols": self.nt_cols,
            "neurons_per_tile": self.neurons_per_tile,
            "nt_input_size": self.nt_input_size,
            "rt_size": self.rt_size,
        }


@dataclass(frozen=True, order=True)
class TileId:
    x: int
    y: int
    kind: TileKind

    def __str__(self):
        return f"{self.kind.value}({self.x},{self.y})"


@dataclass(frozen=True, order=True)
class NeuronId:
    tile: tuple[int, int]  # (row, col) of the hosting NT
    local_index: int


def tile_kind(x: int, y: int) -> TileKind:
    """Kind of the lattice site (x, y), by coordinate parity."""
    odd = (x & 1) + (y & 1)
    if odd == 0:
        return TileKind.NT
    if odd == 1:
        return TileKind.RT0
    return TileKind.RT1


def _check_nt(nt, config: GridConfig) -> tuple[int, int]:
    try:
        row, col = int(nt[0]), int(nt[1])
    except (TypeError, IndexError, ValueError):
        raise DomainError(f"NT index must be a (row, col) pair, got {nt!r}") from None
    if not (0 <= row < config.nt_rows and 0 <= col < config.nt_cols):
        raise DomainError(
            f"NT {nt!r} outside {config.nt_rows}x{config.nt_cols} grid"
        )
    return row, col


@dataclass(frozen=True)
class TileLattice:
    """All tiles of a grid, with kinds assigned by parity."""

    config: GridConfig

    @property
    def width(self) -> int:
        return self.config.lattice_shape[0]

    @property
    def height(self) -> int:
        return self.config.lattice_shape[1]

    @cached_property
    def tiles(self) -> tuple[TileId, ...]:
        return tuple(
            TileId(x, y, tile_kind(x, y))
            for y in range(self.height)
            for x in range(self.width)
        )

    @cached_property
    def kind_grid(self) -> np.ndarray:
        """(height, width) array of kind labels, for plotting and counting."""
        out = np.empty((self.height, self.width), dtype=object)
        for t in self.tiles:
            out[t.y, t.x] = t.kind.value
        return out

    def count(self, kind: TileKind) -> int:
        return sum(1 for t in self.tiles if t.kind is kind)

    def contains(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    def tile(self, x: int, y: int) -> TileId:
        if not self.contains(x, y):
            raise DomainError(f"lattice site ({x}, {y}) out of bounds")
        return TileId(x, y, tile_kind(x, y))

    def flat_index(self, x: int, y: int) -> int:
        return y * self.width + x

    def nt_site(self, nt) -> tuple[int, int]:
        """Lattice (x, y) of the NT at (row, col)."""
        row, col = _check_nt(nt, self.config)
        return 2 * col, 2 * row

    def nt_index(self, nt) -> int:
        row, col = _check_nt(nt, self.config)
        return row * self.config.nt_cols + col

    def nt_from_index(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.config.n_tiles:
            raise DomainError(f"NT index {index} out of range")
        return divmod(int(index), self.config.nt_cols)

    def neighbors(self, x: int, y: int) -> list[TileId]:
        out = []
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            if self.contains(x + dx, y + dy):
                out.append(self.tile(x + dx, y + dy))
        return out

    # -- routing geometry -------------------------------------------------

    def xy_path(self, src, dst) -> tuple[TileId, ...]:
        """Routing tiles on the 1-turn, x-then-y path between two NTs.

        Empty when ``src == dst``.  Neighbouring NTs share a single RT0.
        Otherwise the spike leaves through an RT0 onto a horizontal lane,
        runs to the lane next to the destination column, turns there on an
        RT1 and runs vertically to the RT0 beside the destination.  Pairs
        in the same row (column) use one horizontal (vertical) lane and no
        turn.
        """
        sx, sy = self.nt_site(src)
        tx, ty = self.nt_site(dst)
        dx, dy = tx - sx, ty - sy
        if dx == 0 and dy == 0:
            return ()
        if abs(dx) + abs(dy) == 2:
            if dx == 0 or dy == 0:
                return (self.tile(sx + dx // 2, sy + dy // 2),)
        sgn_x = (dx > 0) - (dx < 0)
        sgn_y = (dy > 0) - (dy < 0)
        sites: list[tuple[int, int]] = []
        if dx == 0:
            # vertical lane beside the source column, east side when it exists
            lane_x = sx + 1 if sx + 1 < self.width else sx - 1
            sites = [(lane_x, y) for y in _span(sy, ty)]
        elif dy == 0:
            lane_y = sy + 1 if sy + 1 < self.height else sy - 1
            sites = [(x, lane_y) for x in _span(sx, tx)]
        else:
            lane_y = sy + sgn_y
            lane_x = tx - sgn_x
            sites = [(x, lane_y) for x in _span(sx, lane_x)]
            sites += [(lane_x, y) for y in _span(lane_y, ty)][1:]
        return tuple(self.tile(x, y) for x, y in sites)

    @cached_property
    def hop_matrix(self) -> np.ndarray:
        """(n_tiles, n_tiles) hop distances between flat NT indices."""
        n = self.config.n_tiles
        out = np.zeros((n, n), dtype=np.int64)
        for i in range(n):
            for j in range(n):
                out[i, j] = len(self.xy_path(self.nt_from_index(i), self.nt_from_index(j)))
        out.setflags(write=False)
        return out

    @property
    def d_max(self) -> int:
        return int(self.hop_matrix.max())


def _span(a: int, b: int) -> list[int]:
    """Inclusive integer range from a to b in either direction."""
    step = 1 if b >= a else -1
    return list(range(a, b + step, step))


def build_lattice(config: GridConfig) -> TileLattice:
    if not isinstance(config, GridConfig):
        raise ConfigError(f"expected GridConfig, got {type(config).__name__}")
    return TileLattice(config)


def hop_distance(src, dst, config: GridConfig) -> int:
    """Number of routing tiles a spike crosses going from NT ``src`` to ``dst``."""
    lattice = _lattice_cache(config)
    return len(lattice.xy_path(src, dst))


def d_max(config: GridConfig) -> int:
    return _lattice_cache(config).d_max


def bucket_size(d: int, config: GridConfig) -> int:
    """Ordered neuron pairs (self pairs included) whose tiles are ``d`` hops apart.

    Distances with no tile pairs, including those beyond ``d_max``, give 0.
    """
    if d < 0:
        raise DomainError(f"hop distance must be >= 0, got {d}")
    hops = _lattice_cache(config).hop_matrix
    return int(np.count_nonzero(hops == d)) * config.neurons_per_tile ** 2


def default_placement(config: GridConfig) -> np.ndarray:
    """Neuron -> flat NT index, filling tiles in row-major order."""
    return np.repeat(np.arange(config.n_tiles), config.neurons_per_tile)


def input_placement(n_channels: int, config: GridConfig) -> np.ndarray:
    """Input channel -> flat NT index, dealt round-robin over the tiles."""
    return np.arange(n_channels) % config.n_tiles


def input_mask(channel_tiles, placement, dense: bool = False) -> np.ndarray:
    """(n_channels, n_neurons) mask of which neurons each input channel may drive.

    A channel injected at an NT reaches that tile's neurons only; ``dense``
    lets every channel reach every neuron.
    """
    channel_tiles = np.asarray(channel_tiles)
    placement = np.asarray(placement)
    if dense:
        return np.ones((channel_tiles.shape[0], placement.shape[0]), dtype=bool)
    return channel_tiles[:, None] == placement[None, :]


def neuron_id(neuron: int, config: GridConfig) -> NeuronId:
    if not 0 <= neuron < config.n_neurons:
        raise DomainError(f"neuron {neuron} out of range")
    tile, local = divmod(int(neuron), config.neurons_per_tile)
    return NeuronId(divmod(tile, config.nt_cols), local)


_LATTICES: dict[GridConfig, TileLattice] = {}


def _lattice_cache(config: GridConfig) -> TileLattice:
    lat = _LATTICES.get(config)
    if lat is None:
        lat = _LATTICES[config] = build_lattice(config)
    return lat
