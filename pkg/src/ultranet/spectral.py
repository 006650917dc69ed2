"""Closed-form evolution of a network density in the wavelet basis.

The density is carried as one constant coefficient per basin plus one
complex coefficient per wavelet index. The constants are coupled
through the basin matrix and evolve by its exponential; every wavelet
coefficient decays independently at the exact rate

    s_{a,r} = symbol_value(w_a, r) - loss_total_a / p

which is the eigenvalue of the full generator on that mode. Evaluating
the density is synthesis; everything else (absorbing times, long-term
limits, decay tables) is bookkeeping on this finite mode stack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericError, UsageError, ValidationError
from .kernels import symbol_value
from .network import NetworkSpec, aggregate_rates, build_basin_matrix
from .padic import CellAddress, enumerate_cells
from .wavelets import (
    CellFunction,
    Expansion,
    enumerate_wavelets,
    expand,
    wavelet_matrix,
)

MAX_EXP_DIM = 16
_TAYLOR_TERMS = 24
_MAX_GRID_STEPS = 2_000_000


def matrix_exponential(M: np.ndarray, t: float = 1.0) -> np.ndarray:
    """e^{tM} by scaling and squaring of a truncated power series.

    Plain and self-contained on purpose: this is the only matrix
    exponential the solver path uses, so it has to be checkable against
    the power series directly (small norm) and against itself through
    the squaring identity (large norm).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError(f"matrix must be square, got shape {M.shape}")
    if M.shape[0] > MAX_EXP_DIM:
        raise UsageError(f"dimension {M.shape[0]} exceeds the cap {MAX_EXP_DIM}")
    if not np.all(np.isfinite(M)) or not math.isfinite(t):
        raise UsageError("matrix exponential needs finite entries")
    A = M * t
    norm = np.abs(A).sum(axis=1).max()
    squarings = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0
    A = A / 2**squarings
    n = A.shape[0]
    out = np.eye(n)
    term = np.eye(n)
    for k in range(1, _TAYLOR_TERMS + 1):
        term = term @ A / k
        out = out + term
    for _ in range(squarings):
        out = out @ out
    return out


@dataclass(frozen=True)
class DecayRate:
    basin: int
    r: int
    s: float
    sigma4: float  # second-order-response reading: 4 / (-s)
    sigma1: float  # bare reciprocal: 1 / (-s)


def decay_rates(spec: NetworkSpec, R: int) -> list:
    """The per-(basin, scale) coefficient rates, with both time-constant
    readings (factor 4 and factor 1) labeled side by side."""
    agg = aggregate_rates(spec)
    out = []
    for i, a in enumerate(spec.basins):
        for r in range(-1, -R - 1, -1):
            s = symbol_value(spec.w_kernels[a], r) - agg.loss_total[i] / spec.p
            if s > 1e-12:
                raise NumericError(f"positive wavelet rate s={s} at basin {a}, r={r}")
            s = min(s, 0.0)
            out.append(
                DecayRate(
                    basin=a,
                    r=r,
                    s=s,
                    sigma4=math.inf if s == 0 else 4.0 / -s,
                    sigma1=math.inf if s == 0 else 1.0 / -s,
                )
            )
    return out


def _decay_vector(spec: NetworkSpec, R: int, basin: int) -> np.ndarray:
    """s_{a,r} aligned with enumerate_wavelets order for one basin."""
    agg = aggregate_rates(spec)
    i = spec.basin_index(basin)
    per_scale = {
        r: symbol_value(spec.w_kernels[basin], r) - agg.loss_total[i] / spec.p
        for r in range(-1, -R - 1, -1)
    }
    return np.array([per_scale[idx.r] for idx in enumerate_wavelets(spec.p, R)])


@dataclass(frozen=True)
class SpectralState:
    spec: NetworkSpec
    convention: str
    R: int
    t: float
    c0: np.ndarray  # one real constant coefficient per basin, basin order
    coeffs: dict  # basin -> complex ndarray in enumerate_wavelets order


def init(
    spec: NetworkSpec,
    datum: CellFunction,
    R: int | None = None,
    probabilistic: bool = True,
    convention: str | None = None,
) -> SpectralState:
    """Expand an initial datum; depth must be exactly R + 1."""
    if datum.p != spec.p:
        raise ValidationError(f"datum has p={datum.p}, network has p={spec.p}")
    if set(datum.basins) != set(spec.basins):
        raise ValidationError(
            f"datum covers basins {datum.basins}, network has {list(spec.basins)}"
        )
    if R is None:
        R = datum.depth - 1
    if datum.depth != R + 1:
        raise UsageError(
            f"datum depth {datum.depth} must equal R+1 = {R + 1}; "
            "data that are not locally constant at that depth are not accepted"
        )
    if R < 1:
        raise UsageError("the expansion needs R >= 1 (datum depth >= 2)")
    if probabilistic:
        for b in datum.basins:
            lo, hi = datum.table[b].min(), datum.table[b].max()
            if lo < -1e-12 or hi > 1 + 1e-12:
                raise ValidationError(
                    f"datum values in basin {b} span [{lo}, {hi}], outside [0, 1]"
                )
    ex = expand(datum, R)
    order = enumerate_wavelets(spec.p, R)
    return SpectralState(
        spec=spec,
        convention=convention or spec.convention,
        R=R,
        t=0.0,
        c0=np.array([ex.c0[b] for b in spec.basins]),
        coeffs={
            b: np.array([ex.coeffs[b][idx] for idx in order]) for b in spec.basins
        },
    )


def evolve(state: SpectralState, t: float, convention: str | None = None) -> SpectralState:
    """Advance by t: constants through the basin-matrix exponential,
    each wavelet coefficient by its own exponential."""
    if t < 0:
        raise UsageError(f"time increment must be >= 0, got {t}")
    spec = state.spec
    convention = convention or state.convention
    lam = build_basin_matrix(spec, convention).entries
    c0 = matrix_exponential(lam, t) @ state.c0
    coeffs = {
        b: state.coeffs[b] * np.exp(_decay_vector(spec, state.R, b) * t)
        for b in spec.basins
    }
    return replace(state, t=state.t + t, c0=c0, coeffs=coeffs, convention=convention)


def _to_expansion(state: SpectralState) -> Expansion:
    order = enumerate_wavelets(state.spec.p, state.R)
    return Expansion(
        p=state.spec.p,
        R=state.R,
        c0={b: float(state.c0[i]) for i, b in enumerate(state.spec.basins)},
        coeffs={
            b: dict(zip(order, state.coeffs[b].tolist())) for b in state.spec.basins
        },
    )


def eval_density(state: SpectralState, t: float = 0.0, depth: int | None = None) -> CellFunction:
    """Synthesize the density at state.t + t on depth cells (default R+1)."""
    if t:
        state = evolve(state, t)
    depth = state.R + 1 if depth is None else depth
    p = state.spec.p
    W = wavelet_matrix(p, state.R, depth)
    values = {}
    for i, b in enumerate(state.spec.basins):
        values[b] = p**0.5 * state.c0[i] + (state.coeffs[b][:, None] * W).real.sum(
            axis=0
        )
    return CellFunction(p, depth, values)


def long_term_limit(spec: NetworkSpec, state: SpectralState) -> np.ndarray:
    """Limiting constant density value per basin: sqrt(p) lim e^{tL} c0.

    Zero when the basin matrix is strictly stable; the null-space
    projection when zero eigenvalues are semisimple and the rest decay.
    Growing, oscillating, or defective spectra are not supported.
    """
    lam = build_basin_matrix(spec, state.convention).entries
    scale = max(np.abs(lam).max(), 1.0)
    theta, V = np.linalg.eig(lam)
    tol = 1e-10 * scale
    if np.linalg.cond(V) > 1e10:
        raise NumericError("defective basin-matrix spectrum; limit not supported")
    if theta.real.max() > tol:
        raise NumericError("growing spectral mode; no long-term limit")
    zero = np.abs(theta) <= tol
    oscillating = (np.abs(theta.real) <= tol) & (np.abs(theta.imag) > tol)
    if oscillating.any():
        raise NumericError("purely oscillating spectral mode; limit not supported")
    if not zero.any():
        return np.zeros(len(spec.basins))
    proj = (V * np.where(zero, 1.0, 0.0)) @ np.linalg.inv(V)
    return spec.p**0.5 * (proj @ state.c0).real


@dataclass(frozen=True)
class AbsorbingResult:
    tau: float  # math.inf when no sustained crossing occurs
    threshold: float
    crossing_cell: CellAddress | None
    mode_basin: int | None
    mode_index: object  # WaveletIndex, or None when the constant term dominates
    dt: float
    t_max: float


class _ModeStack:
    """Closed-form cell values: density(t) = Re(exp(t theta) @ A).

    Rows of A are modes (constant-block eigenmodes first, then live
    wavelet modes), columns are the depth-(R+1) cells of every basin in
    order. Only built when the basin matrix is diagonalizable; the
    caller falls back to stepping otherwise.
    """

    def __init__(self, state: SpectralState, convention: str):
        spec = state.spec
        p = spec.p
        self.basins = spec.basins
        self.depth = state.R + 1
        self.cells = enumerate_cells(p, self.depth)
        n_cells = len(self.cells)
        lam = build_basin_matrix(spec, convention).entries
        dim = len(spec.basins)
        theta, V = np.linalg.eig(lam)
        self.diagonalizable = bool(
            np.all(np.isfinite(V)) and np.linalg.cond(V) < 1e10
        )
        if not self.diagonalizable:
            return
        weights = np.linalg.solve(V, state.c0.astype(complex))
        W = wavelet_matrix(p, state.R, self.depth)
        rows, thetas, labels = [], [], []
        for k in range(dim):
            row = np.zeros(dim * n_cells, dtype=complex)
            for i in range(dim):
                row[i * n_cells : (i + 1) * n_cells] = p**0.5 * V[i, k] * weights[k]
            rows.append(row)
            thetas.append(theta[k])
            labels.append(None)
        for i, b in enumerate(spec.basins):
            decay = _decay_vector(spec, state.R, b)
            for m, idx in enumerate(enumerate_wavelets(p, state.R)):
                c = state.coeffs[b][m]
                if c == 0:
                    continue
                row = np.zeros(dim * n_cells, dtype=complex)
                row[i * n_cells : (i + 1) * n_cells] = c * W[m]
                rows.append(row)
                thetas.append(decay[m] + 0j)
                labels.append((b, idx))
        self.A = np.array(rows)
        self.theta = np.array(thetas)
        self.labels = labels

    def max_over(self, ts: np.ndarray) -> np.ndarray:
        E = np.exp(np.outer(ts, self.theta))
        return (E @ self.A).real.max(axis=1)

    def max_at(self, t: float) -> float:
        return float(self.max_over(np.array([t]))[0])

    def report_at(self, t: float):
        """Peak cell at time t plus the dominating mode label there."""
        vals = (np.exp(t * self.theta) @ self.A).real
        j = int(vals.argmax())
        n_cells = len(self.cells)
        cell = CellAddress(self.basins[j // n_cells], self.cells[j % n_cells])
        contributions = (np.exp(t * self.theta) * self.A[:, j]).real
        label = self.labels[int(np.abs(contributions).argmax())]
        if label is None:
            return cell, cell.basin, None
        return cell, label[0], label[1]


def _rate_pool(spec: NetworkSpec, R: int, convention: str) -> np.ndarray:
    lam = np.abs(build_basin_matrix(spec, convention).entries).ravel()
    s = np.abs([d.s for d in decay_rates(spec, R)])
    pool = np.concatenate([lam, s])
    return pool[pool > 0]


def _no_crossing(threshold, dt, t_max) -> AbsorbingResult:
    return AbsorbingResult(
        tau=math.inf, threshold=threshold, crossing_cell=None,
        mode_basin=None, mode_index=None, dt=dt, t_max=t_max,
    )


def _scan_for_crossing(max_over, threshold: float, dt: float, steps: int):
    """First grid index k >= 1 with below at k-1 and at-or-above at both
    k and k+1. Returns None when no such sustained upward crossing
    exists on the grid (the final point alone cannot qualify)."""
    chunk = 131072
    k0 = 0
    tail = None  # above-flags of the last two points of the previous chunk
    while k0 <= steps:
        ks = np.arange(k0, min(k0 + chunk, steps + 1))
        above = max_over(ks * dt) >= threshold
        if tail is not None:
            above = np.concatenate([tail, above])
            ks = np.arange(k0 - 2, min(k0 + chunk, steps + 1))
        hits = np.flatnonzero(~above[:-2] & above[1:-1] & above[2:])
        if hits.size:
            return int(ks[hits[0] + 1])
        tail = above[-2:]
        k0 = ks[-1] + 1
    return None


def absorbing_time(
    spec: NetworkSpec,
    datum: CellFunction,
    threshold: float = 1.0,
    t_max: float | None = None,
    dt: float | None = None,
    convention: str | None = None,
) -> AbsorbingResult:
    """First t > 0 where the density's maximum reaches the threshold.

    The crossing is upward (a strictly-below point must precede it) and
    must hold for one grid step to count, so dt bounds the detectable
    crossing width. The grid hit is then sharpened by bisection to
    relative 1e-9. No sustained crossing before t_max yields an
    inf-valued result; a datum already at the threshold that stays
    there reports tau = 0.
    """
    if threshold <= 0:
        raise UsageError(f"threshold must be > 0, got {threshold}")
    convention = convention or spec.convention
    state = init(spec, datum, probabilistic=True, convention=convention)
    rates = _rate_pool(spec, state.R, convention)
    if rates.size == 0:
        # nothing moves; the initial maximum is the maximum forever
        return _no_crossing(threshold, 0.0, 0.0)
    if dt is None:
        dt = 1e-3 / rates.max()
    if t_max is None:
        t_max = 100.0 / rates.min()
    if dt <= 0 or t_max <= 0:
        raise UsageError("dt and t_max must be > 0")
    steps = int(math.ceil(t_max / dt))
    if steps > _MAX_GRID_STEPS:
        dt = t_max / _MAX_GRID_STEPS
        steps = _MAX_GRID_STEPS

    stack = _ModeStack(state, convention)
    if stack.diagonalizable:
        max_over = stack.max_over
    else:
        max_over = _stepping_max_over(state, convention, dt)

    if max_over(np.array([0.0]))[0] >= threshold:
        # already at the threshold: absorbed immediately if it sustains
        if np.all(max_over(np.array([dt, 2 * dt])) >= threshold):
            if stack.diagonalizable:
                cell, mb, mi = stack.report_at(0.0)
            else:
                cell, mb, mi = None, None, None
            return AbsorbingResult(
                tau=0.0, threshold=threshold, crossing_cell=cell,
                mode_basin=mb, mode_index=mi, dt=dt, t_max=t_max,
            )

    hit = _scan_for_crossing(max_over, threshold, dt, steps)
    if hit is None:
        return _no_crossing(threshold, dt, t_max)

    def max_at(t):
        return float(max_over(np.array([t]))[0])

    lo, hi = (hit - 1) * dt, hit * dt
    while hi - lo > 1e-9 * max(hi, dt):
        mid = 0.5 * (lo + hi)
        if max_at(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    tau = hi
    if stack.diagonalizable:
        cell, mode_basin, mode_index = stack.report_at(tau)
    else:
        dens = eval_density(evolve(state, tau, convention))
        cell = max(
            (CellAddress(b, digits) for b in dens.basins for digits in enumerate_cells(spec.p, dens.depth)),
            key=dens.value_at,
        )
        mode_basin, mode_index = cell.basin, None
    return AbsorbingResult(
        tau=tau, threshold=threshold, crossing_cell=cell,
        mode_basin=mode_basin, mode_index=mode_index, dt=dt, t_max=t_max,
    )


def _stepping_max_over(state: SpectralState, convention: str, dt: float):
    """Fallback evaluator for non-diagonalizable basin matrices.

    The constant block is advanced by repeated application of the exact
    one-step exponential (a semigroup identity, so only rounding drift
    accumulates); the wavelet part stays closed-form.
    """
    spec = state.spec
    p = spec.p
    lam = build_basin_matrix(spec, convention).entries
    W = wavelet_matrix(p, state.R, state.R + 1)
    decay = {b: _decay_vector(spec, state.R, b) for b in spec.basins}
    E_dt = matrix_exponential(lam, dt)

    def max_over(ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        c0s = np.empty((len(ts), len(spec.basins)))
        if len(ts) == 1:
            c0s[0] = matrix_exponential(lam, float(ts[0])) @ state.c0
        else:
            v = matrix_exponential(lam, float(ts[0])) @ state.c0
            for i in range(len(ts)):
                c0s[i] = v
                v = E_dt @ v
        best = np.full(len(ts), -np.inf)
        for i, b in enumerate(spec.basins):
            Ew = np.exp(np.outer(ts, decay[b]))
            vals = p**0.5 * c0s[:, i : i + 1] + ((Ew * state.coeffs[b]) @ W).real
            np.maximum(best, vals.max(axis=1), out=best)
        return best

    return max_over
