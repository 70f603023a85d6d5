"""Euler simulation of the reflected tandem queue with streaming stationary statistics.

The reflection matrix is unit-lower-bidiagonal, so the discrete one-sided
Skorokhod recursion can be applied node by node: each node sees only the
regulator increments of the node above it.  Per node the recursion
``L_n = max(0, L_{n-1} + xi_n)`` is evaluated in vectorized chunks through the
running-minimum representation ``L_n = S_n - min(M_n, -L_0)`` with
``S`` the free partial sums and ``M`` their running minimum, which is exact.

Replicas are independent streams: replica ``i`` draws from
``numpy.random.default_rng(SeedSequence((seed, i)))``, consuming one
``(3, chunk)`` float32 standard-normal block per chunk (row = node).  Merging
is a pure fold in replica-index order, so results are bit-stable regardless
of how many workers ran the replicas.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ValidatedModel

__all__ = [
    "PAIRS",
    "EmptyWindow",
    "SimConfig",
    "StationaryAccumulator",
    "step",
    "run",
    "run_replica",
    "stream_block_maxima",
    "estimate_regulator_rates",
    "estimate_boundary_transform",
    "default_ccdf_grids",
]

PAIRS = ((1, 2), (1, 3), (2, 3))
CHUNK_STEPS = 1 << 21
_BLOCK_STREAM_TAG = 0x626C6F63  # dedicated stream id for the block-maxima runner


class EmptyWindow(RuntimeError):
    """No post-burn-in steps were accumulated."""


def _as_tuple(vec) -> tuple[float, ...]:
    return tuple(float(v) for v in vec)


@dataclass(frozen=True)
class SimConfig:
    """Discretization, horizon, seeding and the level sets to accumulate.

    ``ccdf_grid`` holds one strictly increasing level vector per node.  Pair
    levels (shared thresholds per node pair, in :data:`PAIRS` order) and each
    column of ``triple_thresholds`` must be members of the corresponding
    node grids so that marginal masses at those thresholds are available
    from the occupation counters.
    """

    ccdf_grid: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]]
    dt: float = 1e-3
    horizon: float = 1e5
    burn_in: float = 1e3
    seed: int = 42
    replicas: int = 4
    pair_levels: tuple[tuple[float, ...], ...] = ((), (), ())
    triple_thresholds: tuple[tuple[float, float, float], ...] = ()
    boundary_weights: tuple[tuple[float, float, float], ...] = (
        (0.0, 0.0, 0.0),
        (0.0, 0.0, 0.0),
        (0.0, 0.0, 0.0),
    )
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0.0 < self.dt <= 0.01:
            raise ValueError(f"dt must lie in (0, 0.01], got {self.dt}")
        if self.horizon < 0.0:
            raise ValueError("horizon must be nonnegative")
        if not 0.0 <= self.burn_in <= self.horizon:
            raise ValueError("burn_in must lie in [0, horizon]")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "ccdf_grid", tuple(_as_tuple(g) for g in self.ccdf_grid))
        if len(self.ccdf_grid) != 3:
            raise ValueError("ccdf_grid needs one level vector per node")
        for g in self.ccdf_grid:
            arr = np.asarray(g)
            if arr.size == 0 or arr[0] < 0.0 or np.any(np.diff(arr) <= 0.0):
                raise ValueError("each ccdf grid must be nonempty, nonnegative and strictly increasing")
        object.__setattr__(self, "pair_levels", tuple(_as_tuple(g) for g in self.pair_levels))
        if len(self.pair_levels) != len(PAIRS):
            raise ValueError(f"pair_levels needs {len(PAIRS)} level vectors (pairs {PAIRS})")
        for (i, j), levels in zip(PAIRS, self.pair_levels):
            if np.any(np.diff(np.asarray(levels)) <= 0.0):
                raise ValueError(f"pair {(i, j)} levels must be strictly increasing")
            for t in levels:
                for node in (i, j):
                    if t not in self.ccdf_grid[node - 1]:
                        raise ValueError(f"pair level {t!r} missing from node {node} ccdf grid")
        object.__setattr__(
            self, "triple_thresholds", tuple(_as_tuple(row) for row in self.triple_thresholds)
        )
        for row in self.triple_thresholds:
            if len(row) != 3:
                raise ValueError("each triple threshold row needs 3 entries")
            for node, t in enumerate(row, start=1):
                if t not in self.ccdf_grid[node - 1]:
                    raise ValueError(f"triple threshold {t!r} missing from node {node} ccdf grid")
        object.__setattr__(
            self, "boundary_weights", tuple(_as_tuple(row) for row in self.boundary_weights)
        )
        if len(self.boundary_weights) != 3 or any(len(r) != 3 for r in self.boundary_weights):
            raise ValueError("boundary_weights must be three weight vectors of length 3")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def burn_steps(self) -> int:
        return int(round(self.burn_in / self.dt))


@dataclass
class StationaryAccumulator:
    """Streaming stationary statistics; all counters merge by plain addition.

    Exceedance counters are stored as int64 step counts (time mass = count *
    dt), so counter merges are exact and order-independent; only the
    regulator and boundary-transform sums are floating-point.
    """

    config: SimConfig
    steps: int = 0
    occupation: list[np.ndarray] = field(default_factory=list)
    pair_joint: list[np.ndarray] = field(default_factory=list)
    triple_joint: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    regulator_total: np.ndarray = field(default_factory=lambda: np.zeros(3))
    boundary_total: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def empty(cls, config: SimConfig) -> "StationaryAccumulator":
        return cls(
            config=config,
            occupation=[np.zeros(len(g), dtype=np.int64) for g in config.ccdf_grid],
            pair_joint=[np.zeros(len(g), dtype=np.int64) for g in config.pair_levels],
            triple_joint=np.zeros(len(config.triple_thresholds), dtype=np.int64),
        )

    @property
    def window_length(self) -> float:
        return self.steps * self.config.dt

    def merge(self, other: "StationaryAccumulator") -> "StationaryAccumulator":
        """Pure combination of two disjoint accumulation windows."""
        if self.config.ccdf_grid != other.config.ccdf_grid or \
                self.config.pair_levels != other.config.pair_levels or \
                self.config.triple_thresholds != other.config.triple_thresholds or \
                self.config.boundary_weights != other.config.boundary_weights or \
                self.config.dt != other.config.dt:
            raise ValueError("accumulators were configured with different level sets")
        return StationaryAccumulator(
            config=self.config,
            steps=self.steps + other.steps,
            occupation=[a + b for a, b in zip(self.occupation, other.occupation)],
            pair_joint=[a + b for a, b in zip(self.pair_joint, other.pair_joint)],
            triple_joint=self.triple_joint + other.triple_joint,
            regulator_total=self.regulator_total + other.regulator_total,
            boundary_total=self.boundary_total + other.boundary_total,
        )

    # marginal exceedance lookups used by the tail estimators
    def exceedance_probability(self, node: int, level: float) -> float:
        if self.steps == 0:
            raise EmptyWindow("no accumulated steps")
        grid = np.asarray(self.config.ccdf_grid[node - 1])
        idx = int(np.searchsorted(grid, level))
        if idx >= grid.size or grid[idx] != level:
            raise ValueError(f"level {level!r} is not on node {node}'s ccdf grid")
        return float(self.occupation[node - 1][idx]) / self.steps


def step(
    state: tuple[tuple[float, float, float], tuple[float, float, float]],
    model: ValidatedModel,
    dt: float,
    gaussian_draws: tuple[float, float, float],
) -> tuple[tuple[float, float, float], tuple[float, float, float]]:
    """One Euler step of the reflected recursion (scalar reference path).

    Nodes are updated in order; node i sees the regulator increment of node
    i-1 from the same step.  Complementarity holds at grid resolution: a
    positive regulator increment leaves that buffer at exactly zero.
    """
    L, Y = state
    lam, c, sigma = model.lam, model.c, model.sigma
    sqdt = math.sqrt(dt)
    c_prev = 0.0
    dy_prev = 0.0
    new_l = []
    new_y = []
    for i in range(3):
        tmp = L[i] + lam[i] * dt + sigma[i] * sqdt * gaussian_draws[i] + (c_prev - c[i]) * dt - dy_prev
        dy = max(0.0, -tmp)
        new_l.append(tmp + dy)
        new_y.append(Y[i] + dy)
        c_prev = c[i]
        dy_prev = dy
    return (tuple(new_l), tuple(new_y))


class _Workspace:
    """Preallocated chunk buffers for one replica."""

    def __init__(self, config: SimConfig, chunk: int):
        self.chunk = chunk
        self.xi = np.empty((3, chunk))
        self.s = np.empty(chunk)
        self.m = np.empty(chunk)
        self.level = [np.empty(chunk) for _ in range(3)]
        self.dy = [np.empty(chunk) for _ in range(3)]
        self.mn = np.empty(chunk)
        self.mask_a = np.empty(chunk, dtype=bool)
        self.mask_b = np.empty(chunk, dtype=bool)
        self.occ_edges = [np.append(np.asarray(g), np.inf) for g in config.ccdf_grid]
        self.pair_edges = [np.append(np.asarray(g), np.inf) for g in config.pair_levels]
        self.trip = np.asarray(config.triple_thresholds, dtype=float).reshape(-1, 3)
        self.weights = np.asarray(config.boundary_weights, dtype=float)
        self.drift_dt = None
        self.scale = None

    def bind_model(self, model: ValidatedModel, dt: float) -> None:
        lam, c, sigma = model.lam, model.c, model.sigma
        c_prev = (0.0, c[0], c[1])
        self.drift_dt = [(lam[i] + c_prev[i] - c[i]) * dt for i in range(3)]
        # np.float64 (not a bare Python float) so the float32 draws are
        # promoted and the product is evaluated in double precision
        self.scale = [np.float64(sigma[i] * math.sqrt(dt)) for i in range(3)]


def _advance_chunk(ws: _Workspace, rng: np.random.Generator, m: int, level0: list[float]) -> None:
    """Advance all three nodes by m steps; fills ws.level and ws.dy, updates level0."""
    draws = rng.standard_normal((3, m), dtype=np.float32)
    for i in range(3):
        xi = ws.xi[i, :m]
        np.multiply(draws[i], ws.scale[i], out=xi)
        xi += ws.drift_dt[i]
        if i > 0:
            xi -= ws.dy[i - 1][:m]
        s = ws.s[:m]
        mrun = ws.m[:m]
        np.cumsum(xi, out=s)
        np.minimum.accumulate(s, out=mrun)
        np.minimum(mrun, -level0[i], out=mrun)
        dy = ws.dy[i][:m]
        dy[0] = -mrun[0] - level0[i]
        np.subtract(mrun[:-1], mrun[1:], out=dy[1:])
        np.subtract(s, mrun, out=ws.level[i][:m])
        level0[i] = float(ws.level[i][m - 1])


def _accumulate_chunk(acc: StationaryAccumulator, ws: _Workspace, m: int, k0: int) -> None:
    """Fold steps [k0, m) of the current chunk into the accumulator."""
    n = m - k0
    if n <= 0:
        return
    acc.steps += n
    for i in range(3):
        seg = ws.level[i][k0:m]
        counts = np.histogram(seg, bins=ws.occ_edges[i])[0]
        acc.occupation[i] += np.cumsum(counts[::-1])[::-1]
        dy_seg = ws.dy[i][k0:m]
        dy_total = float(dy_seg.sum())
        acc.regulator_total[i] += dy_total
        w = ws.weights[i]
        if np.any(w != 0.0):
            sel = np.nonzero(dy_seg > 0.0)[0]
            if sel.size:
                arg = w[0] * ws.level[0][k0:m][sel]
                arg += w[1] * ws.level[1][k0:m][sel]
                arg += w[2] * ws.level[2][k0:m][sel]
                acc.boundary_total[i] += float(np.dot(np.exp(arg), dy_seg[sel]))
        else:
            acc.boundary_total[i] += dy_total
    for p, (a, b) in enumerate(PAIRS):
        if not ws.pair_edges[p].size > 1:
            continue
        mn = ws.mn[:n]
        np.minimum(ws.level[a - 1][k0:m], ws.level[b - 1][k0:m], out=mn)
        counts = np.histogram(mn, bins=ws.pair_edges[p])[0]
        acc.pair_joint[p] += np.cumsum(counts[::-1])[::-1]
    for r, row in enumerate(ws.trip):
        ma, mb = ws.mask_a[:n], ws.mask_b[:n]
        np.greater_equal(ws.level[0][k0:m], row[0], out=ma)
        np.greater_equal(ws.level[1][k0:m], row[1], out=mb)
        np.logical_and(ma, mb, out=ma)
        np.greater_equal(ws.level[2][k0:m], row[2], out=mb)
        np.logical_and(ma, mb, out=ma)
        acc.triple_joint[r] += int(np.count_nonzero(ma))


def run_replica(model: ValidatedModel, config: SimConfig, replica_index: int) -> StationaryAccumulator:
    """Simulate one replica from the empty state and stream its statistics."""
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, replica_index)))
    n_steps, burn = config.n_steps, config.burn_steps
    acc = StationaryAccumulator.empty(config)
    ws = _Workspace(config, min(CHUNK_STEPS, max(n_steps, 1)))
    ws.bind_model(model, config.dt)
    level0 = [0.0, 0.0, 0.0]
    done = 0
    while done < n_steps:
        m = min(ws.chunk, n_steps - done)
        _advance_chunk(ws, rng, m, level0)
        k0 = min(max(burn - done, 0), m)
        _accumulate_chunk(acc, ws, m, k0)
        done += m
    return acc


def run(model: ValidatedModel, config: SimConfig) -> StationaryAccumulator:
    """Run all replicas and fold their accumulators in replica-index order.

    Deterministic for a given (model, config): replica streams are seeded by
    (seed, replica index) and the merge order is fixed, so the result is
    bit-identical no matter how many workers execute the replicas.
    """
    indices = range(config.replicas)
    if config.workers > 1 and config.replicas > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(lambda i: run_replica(model, config, i), indices))
    else:
        parts = [run_replica(model, config, i) for i in indices]
    acc = parts[0]
    for part in parts[1:]:
        acc = acc.merge(part)
    return acc


def stream_block_maxima(
    model: ValidatedModel, config: SimConfig, block_length: float, n_blocks: int
) -> np.ndarray:
    """Per-block componentwise maxima from a dedicated trajectory.

    Burns ``config.burn_in`` first, then records ``n_blocks`` consecutive
    blocks of ``block_length`` time units.  Uses its own seed stream
    (``SeedSequence((seed, block-stream tag))``) so it never perturbs the
    replica streams.  Returns an (n_blocks, 3) array.
    """
    if block_length <= 0.0 or n_blocks < 1:
        raise ValueError("block_length must be positive and n_blocks >= 1")
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, _BLOCK_STREAM_TAG)))
    block_steps = int(round(block_length / config.dt))
    ws = _Workspace(config, min(CHUNK_STEPS, max(block_steps, 1)))
    ws.bind_model(model, config.dt)
    level0 = [0.0, 0.0, 0.0]
    remaining = config.burn_steps
    while remaining > 0:
        m = min(ws.chunk, remaining)
        _advance_chunk(ws, rng, m, level0)
        remaining -= m
    maxima = np.empty((n_blocks, 3))
    for b in range(n_blocks):
        block_max = np.full(3, -np.inf)
        remaining = block_steps
        while remaining > 0:
            m = min(ws.chunk, remaining)
            _advance_chunk(ws, rng, m, level0)
            for i in range(3):
                block_max[i] = max(block_max[i], float(ws.level[i][:m].max()))
            remaining -= m
        maxima[b] = block_max
    return maxima


def estimate_regulator_rates(acc: StationaryAccumulator) -> tuple[float, float, float]:
    """Time-averaged regulator growth per node over the accumulated window."""
    if acc.steps == 0:
        raise EmptyWindow("no accumulated steps")
    return tuple(float(v) / acc.window_length for v in acc.regulator_total)


def estimate_boundary_transform(acc: StationaryAccumulator, node: int, w=None) -> float:
    """Time-normalized Stieltjes sum of exp(<w, L>) against node ``node``'s regulator.

    The weight vector is baked in at accumulation time
    (``config.boundary_weights``); ``w`` may restate it (checked) and the
    all-zero weight is always answerable since it reduces to the regulator
    rate.  The caller is responsible for choosing weights below the decay
    rates so the transform is finite.
    """
    if acc.steps == 0:
        raise EmptyWindow("no accumulated steps")
    stored = np.asarray(acc.config.boundary_weights[node - 1])
    if w is not None:
        w = np.asarray(w, dtype=float)
        if np.all(w == 0.0):
            return estimate_regulator_rates(acc)[node - 1]
        if not np.array_equal(w, stored):
            raise ValueError(
                f"accumulator stores node-{node} transform for weights {tuple(stored)}, not {tuple(w)}"
            )
    return float(acc.boundary_total[node - 1]) / acc.window_length


def default_ccdf_grids(
    alphas: tuple[float, float, float],
    points: int = 241,
    depth: float = 13.0,
    extra_levels: tuple[tuple[float, ...], tuple[float, ...], tuple[float, ...]] = ((), (), ()),
) -> tuple[tuple[float, ...], ...]:
    """Per-node level grids reaching exp(-depth) down each predicted tail.

    ``extra_levels`` are spliced in exactly (pair/triple thresholds must be
    grid members so their marginal masses are recoverable).
    """
    grids = []
    for alpha, extras in zip(alphas, extra_levels):
        base = np.linspace(0.0, depth / alpha, points)
        grid = np.unique(np.concatenate([base, np.asarray(extras, dtype=float)]))
        grids.append(tuple(float(v) for v in grid))
    return tuple(grids)
