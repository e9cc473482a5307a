"""Reflecting diffusion with boundary local time, and stochastic path integrals.

Paths follow the driftless reflecting dynamics

    X_{j+1} = X_j + dB_j + push_j * n(foot_j),

where the Euler proposal is projected back to the nearest boundary point
whenever it leaves the domain, and ``push_j`` is the projection distance
(the Skorokhod pushing magnitude).

Local-time normalization.  The *reported* local-time increments are

    dL_j = 2 * push_j,

so that L carries the surface measure as its occupation (Revuz) measure:
E^x[int f(X) dL] = int int p_t(x, y) f(y) sigma(dy) dt, and under a uniform
start E[L_T] / T -> sigma(dD) / |D| (rate 2 on the unit disk, 3 on the unit
3-ball).  The pushing process that actually appears in the dynamics is dL/2;
path functionals that need it (e.g. the martingale-residual check) use the
``push`` increments directly.

Reproducibility.  Path i of a run draws all of its randomness from a
counter-based Philox stream keyed by (seed, i): the same (seed, i) gives the
same path bit for bit, independently of batch size or chunking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Domain, eval_psi, project_points

LOCAL_TIME_FACTOR = 2.0  # reported dL per unit of projection overshoot


class StepTooLarge(ValueError):
    """Time step too coarse for the reflection approximation (h_t > (diam/10)^2)."""


class IndexOrder(ValueError):
    """Integral requested over an empty or reversed index range."""


# ---------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class Estimate:
    """Monte-Carlo estimate as mergeable sufficient statistics.

    Stores (n, sum, sum of squares); mean / SE / variance are derived.
    Merging adds the statistics, so it is associative and commutative and
    preserves the pooled mean and variance.
    """

    n_samples: int
    total: float
    total_sq: float

    @classmethod
    def from_samples(cls, values) -> "Estimate":
        v = np.asarray(values, dtype=float)
        return cls(n_samples=v.size, total=float(v.sum()), total_sq=float((v * v).sum()))

    @property
    def mean(self) -> float:
        return self.total / self.n_samples

    @property
    def variance(self) -> float:
        if self.n_samples < 2:
            return 0.0
        m = self.mean
        return max(0.0, (self.total_sq - self.n_samples * m * m) / (self.n_samples - 1))

    @property
    def standard_error(self) -> float:
        if self.n_samples < 2:
            return 0.0
        return math.sqrt(self.variance / self.n_samples)

    def merge(self, other: "Estimate") -> "Estimate":
        return Estimate(
            self.n_samples + other.n_samples,
            self.total + other.total,
            self.total_sq + other.total_sq,
        )

    __add__ = merge

    def scaled(self, c: float) -> "Estimate":
        return Estimate(self.n_samples, c * self.total, c * c * self.total_sq)


# ---------------------------------------------------------------------------
# single stored path


@dataclass
class PathGrid:
    """One stored path on a uniform time grid.

    times: (n+1,), states: (n+1, d) in the closed domain,
    brownian_increments: (n, d), local_time_increments: (n,) reported dL
    (sigma-normalized, = 2 * push), reflection_normals: (n, d) inward unit
    normal at the projection foot on push steps and zero elsewhere.
    """

    domain: Domain
    times: np.ndarray
    states: np.ndarray
    brownian_increments: np.ndarray
    local_time_increments: np.ndarray
    reflection_normals: np.ndarray
    seed: int
    path_index: int = 0

    @property
    def n_steps(self) -> int:
        return len(self.local_time_increments)

    @property
    def h_t(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_steps else 0.0

    @property
    def local_time(self) -> np.ndarray:
        """L at the grid nodes: (n+1,), L_0 = 0."""
        out = np.zeros(len(self.times))
        np.cumsum(self.local_time_increments, out=out[1:])
        return out

    @property
    def push_increments(self) -> np.ndarray:
        return self.local_time_increments / LOCAL_TIME_FACTOR

    def save_npz(self, path):
        np.savez_compressed(
            path,
            times=self.times,
            states=self.states,
            brownian_increments=self.brownian_increments,
            local_time_increments=self.local_time_increments,
            reflection_normals=self.reflection_normals,
            seed=np.int64(self.seed),
            path_index=np.int64(self.path_index),
        )


def _path_generator(seed: int, path_index: int) -> np.random.Generator:
    key = np.array([seed, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _draw_start(domain: Domain, gen: np.random.Generator) -> np.ndarray:
    if domain.kind == "ellipse":
        half = np.array(domain.semi_axes)
    else:
        half = np.full(domain.dim, domain.radius)
    while True:
        cand = gen.uniform(-1.0, 1.0, size=(16, domain.dim)) * half
        val, _ = eval_psi(domain, cand)
        inside = np.nonzero(val > 0)[0]
        if inside.size:
            return cand[inside[0]]


def _check_step(domain: Domain, T: float, h_t: float):
    if h_t <= 0 or T < 0:
        raise ValueError("need h_t > 0 and T >= 0")
    if T > 0 and h_t > T:
        raise ValueError("h_t must not exceed the horizon")
    if h_t > (domain.diameter / 10.0) ** 2:
        raise StepTooLarge(
            f"h_t={h_t:g} exceeds (diameter/10)^2={(domain.diameter / 10.0) ** 2:g}"
        )


def _reflect(domain: Domain, proposals: np.ndarray):
    """Project proposals back into the closed domain.

    Returns (x_new, push, hit, normal); push is the raw overshoot distance,
    normal the inward unit normal at the foot (zero rows off the boundary).
    """
    if domain.kind in ("disk", "ball"):
        r0 = domain.radius
        r = np.sqrt(np.einsum("ij,ij->i", proposals, proposals))
        hit = r > r0
        x_new = proposals.copy()
        push = np.zeros(len(proposals))
        normal = np.zeros_like(proposals)
        if hit.any():
            rh = r[hit]
            x_new[hit] = proposals[hit] * (r0 / rh)[:, None]
            push[hit] = rh - r0
            normal[hit] = -x_new[hit] / r0
        return x_new, push, hit, normal
    val, _ = eval_psi(domain, proposals)
    hit = val < 0
    x_new = proposals.copy()
    push = np.zeros(len(proposals))
    normal = np.zeros_like(proposals)
    if hit.any():
        foot, inward, dist = project_points(domain, proposals[hit])
        x_new[hit] = foot
        push[hit] = dist
        normal[hit] = inward
    return x_new, push, hit, normal


def simulate_path(
    domain: Domain,
    T: float,
    h_t: float,
    seed: int,
    x0=None,
    path_index: int = 0,
) -> PathGrid:
    """Simulate one reflecting path (projection scheme) and store it fully.

    ``x0=None`` draws the start uniformly on the domain from the path's own
    stream.  Identical (seed, path_index, parameters) reproduce the identical
    path bit for bit.
    """
    _check_step(domain, T, h_t)
    gen = _path_generator(seed, path_index)
    start = _draw_start(domain, gen) if x0 is None else np.asarray(x0, dtype=float)
    n = int(round(T / h_t)) if T > 0 else 0
    d = domain.dim
    states = np.empty((n + 1, d))
    states[0] = start
    dB = gen.standard_normal((n, d)) * math.sqrt(h_t)
    dl = np.zeros(n)
    normals = np.zeros((n, d))
    # free-flight segments between boundary contacts are plain partial sums;
    # np.add.accumulate reproduces the sequential rounding of stepwise adds,
    # so stored states match the batch engine bit for bit
    window = 2048
    j = 0
    x = states[0]
    while j < n:
        w = min(window, n - j)
        seg = np.add.accumulate(np.vstack([x[None, :], dB[j : j + w]]), axis=0)[1:]
        if domain.kind in ("disk", "ball"):
            # same criterion as the batch engine, down to rounding
            out = np.sqrt(np.einsum("ij,ij->i", seg, seg)) > domain.radius
        else:
            out = eval_psi(domain, seg)[0] < 0
        hits = np.nonzero(out)[0]
        if hits.size == 0:
            states[j + 1 : j + w + 1] = seg
            x = states[j + w]
            j += w
            continue
        m = int(hits[0])
        states[j + 1 : j + m + 1] = seg[:m]
        x_new, push, _, normal = _reflect(domain, seg[m][None, :])
        states[j + m + 1] = x_new[0]
        dl[j + m] = LOCAL_TIME_FACTOR * push[0]
        normals[j + m] = normal[0]
        x = states[j + m + 1]
        j += m + 1
    times = h_t * np.arange(n + 1)
    return PathGrid(domain, times, states, dB, dl, normals, seed, path_index)


def simulate_path_penalized(
    domain: Domain,
    T: float,
    h_t: float,
    seed: int,
    x0=None,
    path_index: int = 0,
) -> PathGrid:
    """Alternative scheme: soft reflection by the penalization drift -delta/eps.

    The proposal is pulled back by the exterior-distance gradient with
    eps = sqrt(h_t); used only to cross-check the projection scheme.  The
    reported dL increments carry the same sigma-normalization.
    """
    _check_step(domain, T, h_t)
    gen = _path_generator(seed, path_index)
    start = _draw_start(domain, gen) if x0 is None else np.asarray(x0, dtype=float)
    n = int(round(T / h_t)) if T > 0 else 0
    d = domain.dim
    eps = math.sqrt(h_t)
    states = np.empty((n + 1, d))
    states[0] = start
    dB = gen.standard_normal((n, d)) * math.sqrt(h_t)
    dl = np.zeros(n)
    normals = np.zeros((n, d))
    for j in range(n):
        xp = states[j] + dB[j]
        val, _ = eval_psi(domain, xp[None, :])
        if val[0] < 0:
            foot, inward, dist = project_points(domain, xp[None, :])
            pull = min(2.0 * dist[0] * h_t / eps, dist[0])
            states[j + 1] = xp + pull * inward[0]
            dl[j] = LOCAL_TIME_FACTOR * pull
            normals[j] = inward[0]
        else:
            states[j + 1] = xp
    times = h_t * np.arange(n + 1)
    return PathGrid(domain, times, states, dB, dl, normals, seed, path_index)


# ---------------------------------------------------------------------------
# path integrals (single stored path)


def _span(path: PathGrid, s_idx, t_idx):
    n = path.n_steps
    t_idx = n if t_idx is None else t_idx
    if not (0 <= s_idx < t_idx <= n):
        raise IndexOrder(f"need 0 <= s_idx < t_idx <= {n}, got [{s_idx}, {t_idx})")
    return s_idx, t_idx


def forward_ito(path: PathGrid, field) -> float:
    """Left-endpoint Ito sum: sum_j <field(X_j), dB_j> over the whole path."""
    if path.n_steps == 0:
        return 0.0
    vals = np.asarray(field(path.states[:-1]), dtype=float)
    return float(np.einsum("jd,jd->", vals, path.brownian_increments))


def backward_ito(path: PathGrid, field, s_idx: int = 0, t_idx=None) -> float:
    """Right-endpoint sum against the backward increments -dB_j - 2 n_j dL_j."""
    s, t = _span(path, s_idx, t_idx)
    vals = np.asarray(field(path.states[s + 1 : t + 1]), dtype=float)
    incr = -path.brownian_increments[s:t] - (
        2.0 * path.local_time_increments[s:t, None] * path.reflection_normals[s:t]
    )
    return float(np.einsum("jd,jd->", vals, incr))


def star_integral(path: PathGrid, field, s_idx: int = 0, t_idx=None) -> float:
    """Two-sided (forward + backward) integral with the boundary correction:

        sum <field(X_j), dB_j>  +  sum <field(X_{j+1}), -dB_j - 2 n_j dL_j>
            + 2 sum <field(X_{j+1}), n_j> dL_j.

    The reflection terms cancel pathwise, so a constant field integrates to
    exactly zero, and for smooth fields the mean converges to
    -int div field (X_r) dr as h_t -> 0.
    """
    s, t = _span(path, s_idx, t_idx)
    left = np.asarray(field(path.states[s:t]), dtype=float)
    right = np.asarray(field(path.states[s + 1 : t + 1]), dtype=float)
    dB = path.brownian_increments[s:t]
    fwd = np.einsum("jd,jd->", left, dB)
    bwd = np.einsum(
        "jd,jd->",
        right,
        -dB - 2.0 * path.local_time_increments[s:t, None] * path.reflection_normals[s:t],
    )
    corr = 2.0 * np.einsum(
        "jd,jd->", right, path.local_time_increments[s:t, None] * path.reflection_normals[s:t]
    )
    return float(fwd + bwd + corr)


def weight_factors(path: PathGrid, q, lam: float = 0.0, mu: float = 0.0) -> np.ndarray:
    """Per-node weights w_j = exp(lam t_j + mu L_{t_j} + int_0^{t_j} q(X) ds).

    The time integral in the exponent uses the left-endpoint rule; L is the
    reported (sigma-normalized) local time.
    """
    n = path.n_steps
    w = np.empty(n + 1)
    if n == 0:
        w[0] = 1.0
        return w
    qv = np.asarray(q(path.states[:-1]), dtype=float)
    expo = np.zeros(n + 1)
    np.cumsum(qv * path.h_t, out=expo[1:])
    expo += lam * path.times + mu * path.local_time
    np.exp(expo, out=w)
    return w


def time_quadrature(path: PathGrid, f) -> float:
    """Left-endpoint quadrature of int f(X_r) dr over the whole path."""
    if path.n_steps == 0:
        return 0.0
    return float(np.sum(np.asarray(f(path.states[:-1]), dtype=float)) * path.h_t)


def local_time_integral(path: PathGrid, f) -> float:
    """sum f(X_{j+1}) dL_j (boundary values at the projection feet)."""
    if path.n_steps == 0:
        return 0.0
    vals = np.asarray(f(path.states[1:]), dtype=float)
    return float(np.sum(vals * path.local_time_increments))


# ---------------------------------------------------------------------------
# batch engine


class StepContext:
    """Per-step arrays handed to observers (views into engine state).

    Attributes: j (step index), t (time at the step start), h, x_prev, x_new,
    dB, push (raw overshoot), dl (reported local-time increment), hit mask,
    normal (inward unit normal at the foot; zero rows off the boundary).
    """

    __slots__ = ("j", "t", "h", "x_prev", "x_new", "dB", "push", "dl", "hit", "normal")


class PathObserver:
    """Accumulates path functionals over a batch run.

    Engine contract: ``start_chunk(indices, x0)`` once per chunk of paths,
    ``step(ctx)`` once per time step, ``end_chunk(x_final)`` at the horizon.
    """

    def start_chunk(self, indices, x0):  # pragma: no cover - trivial default
        pass

    def step(self, ctx: StepContext):  # pragma: no cover - trivial default
        pass

    def end_chunk(self, x_final):  # pragma: no cover - trivial default
        pass


class LocalTimeObserver(PathObserver):
    """Collects the terminal reported local time L_T of every path."""

    def __init__(self):
        self.samples: list = []
        self._acc = None

    def start_chunk(self, indices, x0):
        self._acc = np.zeros(len(indices))

    def step(self, ctx):
        self._acc += ctx.dl

    def end_chunk(self, x_final):
        self.samples.append(self._acc)

    def estimate(self) -> Estimate:
        return Estimate.from_samples(np.concatenate(self.samples))


class StarObserver(PathObserver):
    """Star integral of a fixed vector field over [0, t_end]."""

    def __init__(self, field, n_end: int | None = None):
        self.field = field
        self.n_end = n_end
        self.samples: list = []
        self._acc = None
        self._prev = None

    def start_chunk(self, indices, x0):
        self._acc = np.zeros(len(indices))
        self._prev = np.asarray(self.field(x0), dtype=float)

    def step(self, ctx):
        if self.n_end is not None and ctx.j >= self.n_end:
            return
        cur = np.asarray(self.field(ctx.x_new), dtype=float)
        self._acc -= np.einsum("pd,pd->p", cur - self._prev, ctx.dB)
        self._prev = cur

    def end_chunk(self, x_final):
        self.samples.append(self._acc)

    def estimate(self) -> Estimate:
        return Estimate.from_samples(np.concatenate(self.samples))


def run_paths(
    domain: Domain,
    n_paths: int,
    T: float,
    h_t: float,
    seed: int,
    observers,
    x0=None,
    chunk_size: int = 2048,
    block: int = 2048,
) -> int:
    """Drive observers over ``n_paths`` reflecting paths; returns the step count.

    Paths are simulated in chunks, vectorized across the chunk; every path
    uses its own (seed, index)-keyed stream, so results do not depend on
    ``chunk_size`` or ``block``.  ``x0`` is a fixed start point or None for
    uniform starts.
    """
    _check_step(domain, T, h_t)
    n_steps = int(round(T / h_t)) if T > 0 else 0
    d = domain.dim
    sqh = math.sqrt(h_t)
    ctx = StepContext()
    ctx.h = h_t
    fixed = None if x0 is None else np.asarray(x0, dtype=float)
    for c0 in range(0, n_paths, chunk_size):
        idx = np.arange(c0, min(c0 + chunk_size, n_paths))
        gens = [_path_generator(seed, int(i)) for i in idx]
        if fixed is None:
            starts = np.stack([_draw_start(domain, g) for g in gens])
        else:
            starts = np.broadcast_to(fixed, (len(idx), d)).copy()
        for obs in observers:
            obs.start_chunk(idx, starts)
        x = starts
        j = 0
        while j < n_steps:
            nb = min(block, n_steps - j)
            noise = np.stack([g.standard_normal((nb, d)) for g in gens])
            for jj in range(nb):
                dB = noise[:, jj, :] * sqh
                x_new, push, hit, normal = _reflect(domain, x + dB)
                ctx.j = j
                ctx.t = j * h_t
                ctx.x_prev = x
                ctx.x_new = x_new
                ctx.dB = dB
                ctx.push = push
                ctx.dl = LOCAL_TIME_FACTOR * push
                ctx.hit = hit
                ctx.normal = normal
                for obs in observers:
                    obs.step(ctx)
                x = x_new
                j += 1
        for obs in observers:
            obs.end_chunk(x)
    return n_steps
