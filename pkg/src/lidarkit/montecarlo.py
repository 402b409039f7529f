"""montecarlo.py

Independent Monte Carlo transport oracle for the analytic return rates.

Photons are traced in vectorised batches through the stratified medium:
exponential free paths by closed-form inversion of the optical depth,
scattering versus absorption from ``∫σ dΩ / σt``, scattering angles from the
phase inverse CDF and uniform azimuth.  Two estimators score the receiver:

``analog``
    a detection is an actual crossing of ``z = 0`` inside the aperture disk
    with a direction inside the acceptance cone;
``next_event``
    every collision scores the probability of scattering toward a point of
    the receiver and arriving there unattenuated (order + 1, time + distance).

Histories are split into blocks; block ``i`` draws from stream ``i`` and blocks
merge in block order, so a run is bit-identical for any worker count.

Usage::

    from lidarkit.montecarlo import estimate_returns

    tally = estimate_returns(100_000, 16, geom, medium, grid, seed=1)
    tally.rate("1"), tally.stderr("1")
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Literal, NamedTuple, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .double_scatter import d0_offset_mask
from .errors import DomainError
from .geometry import DetectorGeometry, TimeGrid
from .medium import MediumModel
from .rng import RngStream, block_sizes
from .tally import BlockTally, McTally, score_block

logger = logging.getLogger(__name__)
trajectory_log = logging.getLogger(__name__ + ".trajectory")

Estimator = Literal["analog", "next_event"]
ESTIMATORS: Tuple[str, ...] = ("analog", "next_event")

# histories transported together inside one block
BATCH_SIZE = 65536
# |uz| above this counts as parallel to the z axis when rotating
COSZERO = 1.0 - 1.0e-12


# ------------------------------------------------------------
# Source and detections
# ------------------------------------------------------------

@dataclass(frozen=True)
class Source:
    """Point impulse at *height* on the axis, firing along ``+z``."""

    height: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.height) and self.height >= 0.0):
            raise DomainError(f"source height must be finite and non-negative, got {self.height}")


class Detection(NamedTuple):
    time: float
    order: int
    weight: float
    z_first: float
    z_second: float
    rho_second: float


@dataclass
class _Detections:
    """Growing column store of detections of one batch."""

    history: List[NDArray[np.int64]] = field(default_factory=list)
    time: List[NDArray[np.float64]] = field(default_factory=list)
    order: List[NDArray[np.int64]] = field(default_factory=list)
    weight: List[NDArray[np.float64]] = field(default_factory=list)
    z_first: List[NDArray[np.float64]] = field(default_factory=list)
    z_second: List[NDArray[np.float64]] = field(default_factory=list)
    rho_second: List[NDArray[np.float64]] = field(default_factory=list)

    def add(self, history, time, order, weight, z_first, z_second, rho_second) -> None:
        if np.size(time) == 0:
            return
        self.history.append(np.asarray(history, dtype=np.int64))
        self.time.append(np.asarray(time, dtype=float))
        self.order.append(np.asarray(order, dtype=np.int64))
        self.weight.append(np.asarray(weight, dtype=float))
        self.z_first.append(np.asarray(z_first, dtype=float))
        self.z_second.append(np.asarray(z_second, dtype=float))
        self.rho_second.append(np.asarray(rho_second, dtype=float))

    def columns(self) -> Tuple[NDArray, ...]:
        def cat(parts, dtype):
            return np.concatenate(parts) if parts else np.zeros(0, dtype=dtype)

        return (
            cat(self.history, np.int64),
            cat(self.time, float),
            cat(self.order, np.int64),
            cat(self.weight, float),
            cat(self.z_first, float),
            cat(self.z_second, float),
            cat(self.rho_second, float),
        )


# ------------------------------------------------------------
# Sampling primitives
# ------------------------------------------------------------

def _free_path(
    medium: MediumModel, z0: NDArray[np.float64], uz: NDArray[np.float64], depth: NDArray[np.float64]
) -> Tuple[NDArray[np.float64], NDArray[np.bool_]]:
    """Distances to the next collision for optical depths *depth*.

    Returns ``(s, exits)``: ``s`` is ``inf`` when the photon never collides;
    ``exits`` flags photons that leave through ``z = 0`` first.
    """
    ext = medium.extinction
    tau0 = ext.integral(z0)
    s = np.full(z0.shape, np.inf)
    exits = np.zeros(z0.shape, dtype=bool)

    deeper = uz > 0.0
    if np.any(deeper):
        target = tau0[deeper] + depth[deeper] * uz[deeper]
        z_hit = ext.height_at_integral(target, side="left")
        s[deeper] = (z_hit - z0[deeper]) / uz[deeper]

    rising = uz < 0.0
    if np.any(rising):
        target = tau0[rising] - depth[rising] * (-uz[rising])
        out = target <= 0.0
        z_hit = ext.height_at_integral(np.maximum(target, 0.0), side="right")
        s_r = np.where(out, np.inf, (z0[rising] - z_hit) / (-uz[rising]))
        s[rising] = s_r
        exits[rising] = out

    level = uz == 0.0
    if np.any(level):
        sig = ext.value(z0[level])
        s[level] = np.divide(depth[level], sig, out=np.full(sig.shape, np.inf), where=sig > 0.0)
    return s, exits


def sample_free_path(
    start: Tuple[float, float, float],
    direction: Tuple[float, float, float],
    medium: MediumModel,
    rng: np.random.Generator,
    horizon: float = math.inf,
) -> float:
    """Distance to the next collision, ``inf`` on escape.

    Escape means the photon leaves through ``z = 0``, runs through the end of a
    finite medium, or would collide only after *horizon* (measured as path
    length from *start*).
    """
    z0 = np.array([float(start[2])])
    uz = np.array([float(direction[2])])
    s, exits = _free_path(medium, z0, uz, rng.exponential(size=1))
    dist = float(s[0])
    if exits[0] or dist > horizon:
        return math.inf
    return dist


def _rotate(
    ux: NDArray[np.float64],
    uy: NDArray[np.float64],
    uz: NDArray[np.float64],
    cost: NDArray[np.float64],
    phi: NDArray[np.float64],
) -> Tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Turn unit directions by polar cosine *cost* and azimuth *phi*."""
    sint = np.sqrt(np.maximum(1.0 - cost * cost, 0.0))
    cosp, sinp = np.cos(phi), np.sin(phi)
    along_axis = np.abs(uz) > COSZERO
    temp = np.sqrt(np.maximum(1.0 - uz * uz, 0.0))
    safe = np.where(along_axis, 1.0, temp)
    nx = sint * (ux * uz * cosp - uy * sinp) / safe + ux * cost
    ny = sint * (uy * uz * cosp + ux * sinp) / safe + uy * cost
    nz = -sint * cosp * temp + uz * cost
    nx = np.where(along_axis, sint * cosp, nx)
    ny = np.where(along_axis, sint * sinp, ny)
    nz = np.where(along_axis, np.where(uz >= 0.0, cost, -cost), nz)
    norm = np.sqrt(nx * nx + ny * ny + nz * nz)
    return nx / norm, ny / norm, nz / norm


def sample_scatter_direction(
    direction: ArrayLike, z: float, medium: MediumModel, rng: np.random.Generator
) -> NDArray[np.float64]:
    """New unit direction after scattering at height *z*.

    Raises:
        NoScatterError: If ``∫σ dΩ = 0`` at *z*.
    """
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    cost = medium.sample_cosine(np.array([z]), rng)
    phi = 2.0 * math.pi * rng.random(1)
    nx, ny, nz = _rotate(d[:1], d[1:2], d[2:3], cost, phi)
    return np.array([nx[0], ny[0], nz[0]])


# ------------------------------------------------------------
# Batch transport
# ------------------------------------------------------------

def _log_events(event: str, hid, x, y, z, ux, uy, uz, t, order) -> None:
    for row in zip(hid, x, y, z, ux, uy, uz, t, order):
        trajectory_log.debug(
            "history=%d event=%s x=%.9g y=%.9g z=%.9g ux=%.9g uy=%.9g uz=%.9g t=%.9g order=%d",
            row[0], event, *row[1:],
        )


def _next_event(
    medium: MediumModel,
    geom: DetectorGeometry,
    rng: np.random.Generator,
    x, y, z, ux, uy, uz,
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Score and path length to a receiver point for every collision.

    The point is drawn uniformly in the smaller of the aperture disk and the
    acceptance footprint under the collision; the other disk enters as an
    indicator, so the estimate is unbiased.
    """
    footprint = z * geom.epsilon
    on_aperture = geom.rho0 <= footprint
    radius = np.where(on_aperture, geom.rho0, footprint)
    cx = np.where(on_aperture, 0.0, x)
    cy = np.where(on_aperture, 0.0, y)
    rr = radius * np.sqrt(rng.random(z.shape))
    ang = 2.0 * math.pi * rng.random(z.shape)
    px = cx + rr * np.cos(ang)
    py = cy + rr * np.sin(ang)

    dx, dy = px - x, py - y
    inside = (px * px + py * py <= geom.rho0**2) & (dx * dx + dy * dy <= footprint * footprint) & (z > 0.0)
    dist = np.sqrt(dx * dx + dy * dy + z * z)
    safe = np.where(dist > 0.0, dist, 1.0)
    wz = z / safe
    cosg = np.clip((ux * dx + uy * dy - uz * z) / safe, -1.0, 1.0)
    sig_t = medium.extinction.value(z)
    sigma = medium.phase.evaluate(cosg, z)
    ratio = np.divide(sigma, sig_t, out=np.zeros_like(sigma), where=sig_t > 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        transmit = np.exp(-medium.extinction.integral(z) / wz)
        score = math.pi * radius * radius * ratio * transmit * wz / (safe * safe)
    return np.where(inside, score, 0.0), dist


def _transport(
    n: int,
    source: Source,
    geom: DetectorGeometry,
    medium: MediumModel,
    horizon: float,
    rng: np.random.Generator,
    estimator: str,
    history_offset: int = 0,
) -> _Detections:
    """Trace *n* histories to extinction; returns their detections."""
    out = _Detections()
    hid = np.arange(n, dtype=np.int64) + history_offset
    x = np.zeros(n)
    y = np.zeros(n)
    z = np.full(n, source.height)
    ux = np.zeros(n)
    uy = np.zeros(n)
    uz = np.ones(n)
    t = np.zeros(n)
    order = np.zeros(n, dtype=np.int64)
    z_first = np.full(n, np.nan)
    z_second = np.full(n, np.nan)
    r_second = np.full(n, np.nan)
    logging_on = trajectory_log.isEnabledFor(logging.DEBUG)
    cos0 = geom.cos_theta0

    while hid.size:
        s, exits = _free_path(medium, z, uz, rng.exponential(size=hid.size))

        if estimator == "analog" and np.any(exits):
            s0 = z[exits] / -uz[exits]
            xc = x[exits] + s0 * ux[exits]
            yc = y[exits] + s0 * uy[exits]
            hit = (xc * xc + yc * yc <= geom.rho0**2) & (-uz[exits] >= cos0)
            sel = np.flatnonzero(exits)[hit]
            out.add(
                hid[sel], t[sel] + s0[hit], order[sel], np.ones(sel.size), z_first[sel], z_second[sel], r_second[sel]
            )
            if logging_on:
                _log_events("detect", hid[sel], xc[hit], yc[hit], np.zeros(sel.size),
                            ux[sel], uy[sel], uz[sel], t[sel] + s0[hit], order[sel])

        moving = np.isfinite(s) & ~exits
        s = np.where(moving, s, 0.0)
        x, y, z, t = x + s * ux, y + s * uy, z + s * uz, t + s
        keep = moving & (t + z <= horizon)
        hid, x, y, z, ux, uy, uz, t, order, z_first, z_second, r_second = (
            a[keep] for a in (hid, x, y, z, ux, uy, uz, t, order, z_first, z_second, r_second)
        )
        if not hid.size:
            break
        if logging_on:
            _log_events("collision", hid, x, y, z, ux, uy, uz, t, order)

        if estimator == "next_event":
            score, dist = _next_event(medium, geom, rng, x, y, z, ux, uy, uz)
            scored = score > 0.0
            k = order[scored]
            zf = np.where(k >= 1, z_first[scored], z[scored])
            zs = np.where(k == 1, z[scored], z_second[scored])
            rs = np.where(k == 1, np.hypot(x[scored], y[scored]), r_second[scored])
            out.add(hid[scored], t[scored] + dist[scored], k + 1, score[scored], zf, zs, rs)

        sig_t = medium.extinction.value(z)
        sig_s = medium.phase.scattering.value(z)
        scatter = rng.random(hid.size) * sig_t < sig_s
        if logging_on:
            absorbed = ~scatter
            _log_events("absorb", hid[absorbed], x[absorbed], y[absorbed], z[absorbed],
                        ux[absorbed], uy[absorbed], uz[absorbed], t[absorbed], order[absorbed])
        hid, x, y, z, ux, uy, uz, t, order, z_first, z_second, r_second = (
            a[scatter] for a in (hid, x, y, z, ux, uy, uz, t, order, z_first, z_second, r_second)
        )
        if not hid.size:
            break

        cost = medium.phase.sample_cosine(z, rng)
        phi = 2.0 * math.pi * rng.random(hid.size)
        ux, uy, uz = _rotate(ux, uy, uz, cost, phi)
        order = order + 1
        z_first = np.where(order == 1, z, z_first)
        z_second = np.where(order == 2, z, z_second)
        r_second = np.where(order == 2, np.hypot(x, y), r_second)
    return out


def trace_history(
    source: Source,
    geom: DetectorGeometry,
    medium: MediumModel,
    horizon: float,
    rng: np.random.Generator,
    estimator: Estimator = "analog",
) -> List[Detection]:
    """Trace one history and return its detections in scoring order."""
    _check_estimator(estimator)
    _, *columns = _transport(1, source, geom, medium, horizon, rng, estimator).columns()
    return [
        Detection(float(tm), int(k), float(w), float(zf), float(zs), float(rs))
        for tm, k, w, zf, zs, rs in zip(*columns)
    ]


def _check_estimator(estimator: str) -> None:
    if estimator not in ESTIMATORS:
        raise DomainError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


# ------------------------------------------------------------
# Blocks and workers
# ------------------------------------------------------------

@dataclass(frozen=True)
class BlockTask:
    """Everything a worker process needs to run one block."""

    block_id: int
    n_histories: int
    first_history: int
    seed: int
    source: Source
    geom: DetectorGeometry
    medium: MediumModel
    lo: NDArray[np.float64]
    hi: NDArray[np.float64]
    horizon: float
    estimator: str


def run_block(task: BlockTask) -> BlockTally:
    rng = RngStream(task.seed, task.block_id).generator()
    parts = _Detections()
    for start in range(0, task.n_histories, BATCH_SIZE):
        n = min(BATCH_SIZE, task.n_histories - start)
        batch = _transport(
            n, task.source, task.geom, task.medium, task.horizon, rng, task.estimator, task.first_history + start
        )
        parts.add(*batch.columns())
    history, time, order, weight, _, z_second, r_second = parts.columns()
    history = history - task.first_history
    in_d0 = np.zeros(time.size, dtype=bool)
    second = order == 2
    if np.any(second):
        in_d0[second] = d0_offset_mask(z_second[second], r_second[second], task.geom)
    return score_block(task.lo, task.hi, task.n_histories, history, time, order, weight, in_d0)


def estimate_returns(
    n_histories: int,
    blocks: int,
    geom: DetectorGeometry,
    medium: MediumModel,
    grid: TimeGrid,
    seed: int,
    estimator: Estimator = "next_event",
    horizon: Optional[float] = None,
    workers: int = 1,
    bin_width: Optional[float] = None,
    source: Source = Source(),
) -> McTally:
    """Run the Monte Carlo oracle and tally returns on the grid's bins.

    Args:
        n_histories: Total histories, split into *blocks* near-equal blocks.
        blocks: Number of blocks (each with its own random stream).
        geom: Detector geometry.
        medium: Scattering medium.
        grid: Return times; bins come from :meth:`TimeGrid.bin_edges`.
        seed: Root seed of every stream.
        estimator: ``"analog"`` or ``"next_event"``.
        horizon: Latest arrival time of interest; defaults to the last bin edge.
        workers: Worker processes; results do not depend on it.
        bin_width: Fixed tally bin width, midpoint bins when ``None``.
        source: Emission point.

    Returns:
        The merged tally, blocks in block order.
    """
    _check_estimator(estimator)
    if workers < 1:
        raise DomainError(f"workers must be >= 1, got {workers}")
    lo, hi = grid.bin_edges(bin_width)
    horizon = float(hi[-1]) if horizon is None else float(horizon)
    sizes = block_sizes(n_histories, blocks)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    tasks = [
        BlockTask(i, n, int(first), seed, source, geom, medium, lo, hi, horizon, estimator)
        for i, (n, first) in enumerate(zip(sizes, starts))
    ]

    if workers > 1 and trajectory_log.isEnabledFor(logging.DEBUG):
        logger.warning("trajectory logging runs in one process; ignoring workers=%d", workers)
        workers = 1

    logger.info(
        "monte carlo: %d histories in %d blocks, estimator=%s, seed=%d, workers=%d",
        n_histories, len(tasks), estimator, seed, workers,
    )
    if workers == 1:
        results = [run_block(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, tasks))
    return McTally(lo, hi, tuple(results))
