"""Brute-force reference implementations used only by the tests.

These deliberately avoid the closed-form paths and vectorised tables in
the package: hop distances come from a breadth-first search over the raw
lattice graph, occupancy from routing every axon on its own.
"""
from collections import deque

import numpy as np

from mosaicroute.router import route_axon
from mosaicroute.topology import NeuronId

DIRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def site_kind(x, y):
    return ("NT", "RT0", "RT1")[(x % 2) + (y % 2)]


def bfs_hops(src, dst, width, height):
    """Fewest routing tiles on any path with at most one turn, turning only on RT1.

    A path starts on an RT0 next to the source NT and ends on an RT0 next
    to the destination NT; the NT<->RT0 hand-offs do not count as moves.
    """
    if tuple(src) == tuple(dst):
        return 0
    sx, sy = 2 * src[1], 2 * src[0]
    tx, ty = 2 * dst[1], 2 * dst[0]

    def inside(x, y):
        return 0 <= x < width and 0 <= y < height

    def next_to(x, y, nx, ny):
        return abs(x - nx) + abs(y - ny) == 1

    queue = deque()
    seen = set()
    for dx, dy in DIRS:
        x, y = sx + dx, sy + dy
        if inside(x, y):
            state = (x, y, None, 0)
            queue.append((state, 1))
            seen.add(state)
    while queue:
        (x, y, d, turns), length = queue.popleft()
        if next_to(x, y, tx, ty) and site_kind(x, y) == "RT0":
            return length
        for mv in DIRS:
            nx, ny = x + mv[0], y + mv[1]
            if not inside(nx, ny) or site_kind(nx, ny) == "NT":
                continue
            nturns = turns
            if d is not None and mv != d:
                if mv == (-d[0], -d[1]) or turns >= 1 or site_kind(x, y) != "RT1":
                    continue
                nturns = 1
            state = (nx, ny, mv, nturns)
            if state not in seen:
                seen.add(state)
                queue.append((state, length + 1))
    return None


def enumerate_bucket_sizes(config, hop):
    """Ordered neuron pairs per hop distance, by looping over every neuron pair."""
    n = config.n_neurons
    npt = config.neurons_per_tile
    sizes = {}
    for i in range(n):
        ti = divmod(i // npt, config.nt_cols)
        for j in range(n):
            tj = divmod(j // npt, config.nt_cols)
            d = hop(ti, tj)
            sizes[d] = sizes.get(d, 0) + 1
    return sizes


def brute_force_occupancy(mask, config, lattice):
    """Route every source neuron independently and count rows tile by tile."""
    npt = config.neurons_per_tile
    rt = {}
    remote = np.zeros(config.n_tiles, dtype=np.int64)
    local = np.zeros(config.n_tiles, dtype=np.int64)
    for pre in range(mask.shape[0]):
        src_tile = pre // npt
        src = divmod(src_tile, config.nt_cols)
        dests = {divmod(int(post) // npt, config.nt_cols) for post in np.flatnonzero(mask[pre])}
        if src in dests:
            local[src_tile] += 1
        far = dests - {src}
        if not far:
            continue
        tree = route_axon(NeuronId(src, pre % npt), far, lattice)
        for t in tree.tiles:
            rt[(t.x, t.y)] = rt.get((t.x, t.y), 0) + 1
        for d in far:
            remote[d[0] * config.nt_cols + d[1]] += 1
    grid = np.zeros((lattice.height, lattice.width), dtype=np.int64)
    for (x, y), c in rt.items():
        grid[y, x] = c
    return grid, remote, local


def independent_union(source, dests, lattice):
    """Tiles of separately routed single-destination trees, unioned."""
    tiles = set()
    for d in dests:
        tiles |= set(route_axon(source, {d}, lattice).tiles)
    return tiles


def finite_difference_check(n_neurons=5, n_steps=10, n_in=3, n_out=2, batch=4, eps=1e-4,
                            lambda_l1=0.0, seed=0):
    """Relative errors between autograd and central differences, one per parameter entry.

    Runs in float64 with the smooth spike function, whose derivative is the
    surrogate, so both sides see the same differentiable model.
    """
    import torch

    from mosaicroute.snn import LIFParams, lif_forward, loss

    rng = np.random.default_rng(seed)
    lif = LIFParams(tau_mem=5.0, tau_out=5.0)
    x = torch.as_tensor((rng.random((n_steps, batch, n_in)) < 0.4).astype(np.float64))
    y = torch.as_tensor(rng.integers(0, n_out, batch))
    base = {
        "w_in": rng.normal(0, 1.5, (n_in, n_neurons)),
        "w_rec": rng.normal(0, 0.5, (n_neurons, n_neurons)),
        "w_out": rng.normal(0, 1.0, (n_neurons, n_out)),
        "b_out": rng.normal(0, 0.1, n_out),
    }

    def objective(arrays, grad=False):
        ts = {k: torch.tensor(v, dtype=torch.float64, requires_grad=grad) for k, v in arrays.items()}
        out = lif_forward(ts, x, lif, spike_fn="smooth", dtype=torch.float64)
        return loss(out.logits, y, ts["w_rec"], lambda_l1), ts

    value, ts = objective(base, grad=True)
    value.backward()
    errors = []
    for name, arr in base.items():
        analytic = ts[name].grad.numpy()
        for idx in np.ndindex(arr.shape):
            up = {k: v.copy() for k, v in base.items()}
            dn = {k: v.copy() for k, v in base.items()}
            up[name][idx] += eps
            dn[name][idx] -= eps
            numeric = (objective(up)[0].item() - objective(dn)[0].item()) / (2 * eps)
            a = analytic[idx]
            denom = max(abs(a), abs(numeric), 1e-8)
            errors.append(abs(a - numeric) / denom)
    return np.array(errors)
