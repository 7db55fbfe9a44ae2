"""Measurements of regularity: ball averages, excess and its decay, blow-up
rescaling, truncation, difference quotients, cutoff H^2 energies,
classification of regular points and box-counting dimension.

A ball ``B(x, r)`` is realised as the set of grid cells whose centers lie
within distance ``r`` of ``x``.  Averages over a ball weight every such cell
equally (the grid is uniform).  All functions are pure in their inputs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve

from .energy import Field, Grid, cell_gradients, cell_means
from .errors import BallOutsideDomain, StepTooLarge, TooFewCells

REGULAR = "Regular"
SUSPECT = "Suspect"
SKIPPED = "Skipped"
MAX_TAU = 0.125
_GEOM_TOL = 1e-12


# ---------------------------------------------------------------------------
# balls


def _check_ball(grid, x, r):
    x = np.asarray(x, dtype=float).reshape(grid.n)
    if r < 2.0 * max(grid.h) * (1.0 - _GEOM_TOL):
        raise TooFewCells(f"radius {r!r} is below two grid steps ({2.0 * max(grid.h)!r})")
    lo = np.asarray(grid.origin)
    hi = np.asarray(grid.upper)
    slack = _GEOM_TOL * (1.0 + np.abs(hi - lo))
    if np.any(x - r < lo - slack) or np.any(x + r > hi + slack):
        raise BallOutsideDomain(f"ball of radius {r!r} around {x.tolist()} leaves the grid box")
    return x


def _ball_cells(grid, x, r):
    """Index slices of the cells near ``x`` and the in-ball mask over that window."""
    sl, axes = [], []
    for ax in range(grid.n):
        o, h, nc = grid.origin[ax], grid.h[ax], grid.shape[ax] - 1
        i0 = max(int(math.floor((x[ax] - r - o) / h - 1)), 0)
        i1 = min(int(math.ceil((x[ax] + r - o) / h + 1)), nc)
        sl.append(slice(i0, i1))
        axes.append(o + h * (np.arange(i0, i1) + 0.5) - x[ax])
    d2 = sum(np.meshgrid(*[a * a for a in axes], indexing="ij"))
    return tuple(sl), d2 <= r * r


def _gathered(field, x, r):
    grid = field.grid
    x = _check_ball(grid, x, r)
    sl, mask = _ball_cells(grid, x, r)
    grads = cell_gradients(grid, field.values)[sl][mask]
    vals = cell_means(grid, field.values)[sl][mask]
    return vals, grads


def ball_means(field, x, r):
    """``((u)_{x,r}, (Du)_{x,r})`` as a ``k``-vector and a ``k x n`` matrix."""
    vals, grads = _gathered(field, x, r)
    return vals.mean(axis=0), grads.mean(axis=0)


# ---------------------------------------------------------------------------
# excess


@dataclass
class ExcessReport:
    center: np.ndarray
    radii: list
    excess: list
    r_half_term: list
    deviation: list
    u_means: list
    Du_means: list

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "E", "r_half_term", "deviation"])
            for row in zip(self.radii, self.excess, self.r_half_term, self.deviation):
                w.writerow([repr(float(v)) for v in row])


def excess_at(field, x, r):
    """``(E, r^(1/2), deviation, (u)_{x,r}, (Du)_{x,r})`` for one radius."""
    vals, grads = _gathered(field, x, r)
    mean_grad = grads.mean(axis=0)
    dev = float(np.mean(np.sum((grads - mean_grad) ** 2, axis=(-2, -1))))
    root = math.sqrt(r)
    return root + dev, root, dev, vals.mean(axis=0), mean_grad


def excess(field, x, radii):
    rows = [excess_at(field, x, r) for r in radii]
    return ExcessReport(
        np.asarray(x, dtype=float),
        [float(r) for r in radii],
        [e[0] for e in rows],
        [e[1] for e in rows],
        [e[2] for e in rows],
        [e[3] for e in rows],
        [e[4] for e in rows],
    )


def _check_tau(tau):
    if not 0.0 < tau <= MAX_TAU:
        raise ValueError(f"tau must lie in (0, 1/8], got {tau!r}")


def decay_sweep(field, x, r, tau):
    """Measured ``E(x, tau r) / (tau^(1/2) E(x, r))``."""
    _check_tau(tau)
    big = excess_at(field, x, r)[0]
    small = excess_at(field, x, tau * r)[0]
    return small / (math.sqrt(tau) * big)


def dyadic_radii(r0, levels):
    return [r0 / 2 ** i for i in range(levels)]


# ---------------------------------------------------------------------------
# transforms


def blowup_rescale(field, x, r, lam, nodes=None):
    """``z -> (u(x + r z) - a - r A z) / (lam r)`` sampled on ``[-1, 1]^n``.

    ``a`` and ``A`` are the ball means of ``u`` and ``Du`` on ``B(x, r)``;
    values come from multilinear interpolation of ``u``.  By default the
    output grid has the same physical resolution as the input.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    grid = field.grid
    a, A = ball_means(field, x, r)
    x = np.asarray(x, dtype=float).reshape(grid.n)
    if nodes is None:
        nodes = 2 * int(math.ceil(r / min(grid.h))) + 1
    out_grid = Grid((nodes,) * grid.n, 2.0 / (nodes - 1), (-1.0,) * grid.n)
    z = out_grid.coords()
    interp = RegularGridInterpolator(grid.axes(), field.values, method="linear")
    pts = np.clip(x + r * z, grid.origin, grid.upper)
    u = interp(pts.reshape(-1, grid.n)).reshape(z.shape[:-1] + (field.k,))
    v = (u - a - r * np.einsum("ia,...a->...i", A, z)) / (lam * r)
    return Field(out_grid, v)


def clamp_truncate(field, M):
    """Clamp every component into ``[-M, M]``."""
    if not M > 0:
        raise ValueError("M must be positive")
    return field.with_values(np.clip(field.values, -M, M))


def difference_quotient(field, axis, h_steps):
    """``(u(x + s h e_k) - u(x)) / (s h)`` on the nodes where both values exist.

    Negative ``h_steps`` give the backward quotient ``D_k^{-h}``, whose
    output grid starts ``|s|`` nodes further in.
    """
    grid = field.grid
    s = int(h_steps)
    if not 1 <= abs(s) < grid.shape[axis]:
        raise StepTooLarge(f"step {h_steps!r} not in [1, {grid.shape[axis] - 1}] along axis {axis}")
    m = abs(s)
    n_out = grid.shape[axis] - m
    hi = [slice(None)] * grid.n
    lo = [slice(None)] * grid.n
    hi[axis] = slice(m, None)
    lo[axis] = slice(0, n_out)
    diff = (field.values[tuple(hi)] - field.values[tuple(lo)]) / (m * grid.h[axis])
    origin = list(grid.origin)
    if s < 0:
        origin[axis] += m * grid.h[axis]
    shape = list(grid.shape)
    shape[axis] = n_out
    if n_out < 2:
        raise StepTooLarge("difference quotient leaves fewer than two nodes")
    out = Grid(tuple(shape), grid.h, tuple(origin))
    return Field(out, diff)


# ---------------------------------------------------------------------------
# H^2 surrogate


@dataclass
class H2Report:
    inner_frac: float
    outer_frac: float
    h_steps: list
    h_values: list
    energies: np.ndarray  # shape (n_axes, len(h_steps))
    stability_ratio: float

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["axis", "h_steps", "h", "energy"])
            for ax, row in enumerate(self.energies):
                for s, h, e in zip(self.h_steps, self.h_values[ax], row):
                    w.writerow([ax, s, repr(float(h)), repr(float(e))])


def cutoff(grid, points, inner_frac, outer_frac):
    """Piecewise-linear cutoff in the box's normalized sup-distance from its center."""
    c = np.asarray(grid.origin) + 0.5 * np.asarray(grid.lengths)
    half = 0.5 * np.asarray(grid.lengths)
    t = np.max(np.abs(points - c) / half, axis=-1)
    return np.clip((outer_frac - t) / (outer_frac - inner_frac), 0.0, 1.0)


def h2_estimate(field, inner_frac, outer_frac, h_steps_list):
    """``int xi^2 |D_k^h Du|^2`` per axis ``k`` and step, with ``Du`` the cell gradients."""
    if not 0.0 < inner_frac < outer_frac < 1.0:
        raise ValueError("need 0 < inner_frac < outer_frac < 1")
    grid = field.grid
    du = cell_gradients(grid, field.values)
    centers = grid.cell_centers()
    xi2 = cutoff(grid, centers, inner_frac, outer_frac) ** 2
    steps = [int(s) for s in h_steps_list]
    energies = np.zeros((grid.n, len(steps)))
    hvals = []
    for ax in range(grid.n):
        hv = []
        for j, s in enumerate(steps):
            if not 1 <= s < grid.shape[ax] - 1:
                raise StepTooLarge(f"step {s} too large for axis {ax}")
            hi = [slice(None)] * grid.n
            lo = [slice(None)] * grid.n
            hi[ax] = slice(s, None)
            lo[ax] = slice(0, -s)
            dq = (du[tuple(hi)] - du[tuple(lo)]) / (s * grid.h[ax])
            energies[ax, j] = grid.cell_volume * float(np.sum(xi2[tuple(lo)] * np.sum(dq * dq, axis=(-2, -1))))
            hv.append(s * grid.h[ax])
        hvals.append(hv)
    ratio = _stability(energies)
    return H2Report(float(inner_frac), float(outer_frac), steps, hvals, energies, ratio)


def _stability(energies):
    ratios = []
    for row in energies:
        lo, hi = row.min(), row.max()
        if hi == 0.0:
            ratios.append(1.0)
        elif lo <= 0.0:
            ratios.append(math.inf)
        else:
            ratios.append(hi / lo)
    return float(max(ratios))


# ---------------------------------------------------------------------------
# all-node ball statistics


def _node_ball_stencil(grid, r):
    """Cells whose centers lie within ``r`` of a node, as offsets from the node index."""
    reach = [int(math.ceil(r / h)) for h in grid.h]
    axes = [h * (np.arange(-R - 1, R + 1) + 0.5) for R, h in zip(reach, grid.h)]
    d2 = sum(np.meshgrid(*[a * a for a in axes], indexing="ij"))
    lo = np.array([-R - 1 for R in reach])
    return lo, (d2 <= r * r).astype(float)


def _node_ball_average(grid, cell_values, r):
    """Average of ``cell_values`` (cell shape + trailing) over ``B(node, r)`` for every node.

    Entries for nodes whose ball leaves the box are meaningless and must be
    masked by the caller.
    """
    lo, S = _node_ball_stencil(grid, r)
    count = S.sum()
    kernel = S[(slice(None, None, -1),) * grid.n]
    trail = cell_values.shape[grid.n:]
    flat = cell_values.reshape(grid.cell_shape + (-1,))
    out = np.empty(grid.shape + (flat.shape[-1],))
    start = [l + t - 1 for l, t in zip(lo, S.shape)]
    for j in range(flat.shape[-1]):
        full = fftconvolve(flat[..., j], kernel, mode="full")
        pad = [(max(0, -s), max(0, s + n - full.shape[a])) for a, (s, n) in enumerate(zip(start, grid.shape))]
        full = np.pad(full, pad)
        idx = tuple(slice(s + p[0], s + p[0] + n) for s, p, n in zip(start, pad, grid.shape))
        out[..., j] = full[idx] / count
    return out.reshape(grid.shape + trail)


def _fits(grid, r):
    """Nodes whose cube ``x +- r`` stays inside the box."""
    coords = grid.coords()
    lo = np.asarray(grid.origin)
    hi = np.asarray(grid.upper)
    slack = _GEOM_TOL * (1.0 + hi - lo)
    return np.all((coords - r >= lo - slack) & (coords + r <= hi + slack), axis=-1)


def node_excess(field, r):
    """``E(x, r)``, ``(u)_{x,r}`` and ``(Du)_{x,r}`` at every node (NaN where the ball does not fit)."""
    grid = field.grid
    if r < 2.0 * max(grid.h) * (1.0 - _GEOM_TOL):
        raise TooFewCells(f"radius {r!r} is below two grid steps")
    du = cell_gradients(grid, field.values)
    um = _node_ball_average(grid, cell_means(grid, field.values), r)
    dm = _node_ball_average(grid, du, r)
    sq = _node_ball_average(grid, np.sum(du * du, axis=(-2, -1)), r)
    dev = np.maximum(sq - np.sum(dm * dm, axis=(-2, -1)), 0.0)
    E = math.sqrt(r) + dev
    ok = _fits(grid, r)
    E = np.where(ok, E, np.nan)
    return E, um, dm, ok


# ---------------------------------------------------------------------------
# classification


@dataclass
class BoxDimension:
    dimension: float
    scales: list
    counts: list
    empty: bool = False

    @property
    def flag(self):
        return "EmptySet" if self.empty else ""


def box_dimension(mask, scale_list):
    """Least-squares slope of ``log(count)`` against ``log(1/scale)``.

    Each scale ``s`` (in node steps) must divide ``shape - 1`` on every
    axis; boxes are ``s`` steps wide and the last node of an axis joins the
    last box, so a full grid has exactly ``((shape-1)/s)^n`` boxes.
    """
    mask = np.asarray(mask, dtype=bool)
    scales = [int(s) for s in scale_list]
    if len(scales) < 3:
        raise ValueError("need at least three scales")
    for s in scales:
        if s < 1 or any((m - 1) % s for m in mask.shape):
            raise ValueError(f"scale {s} does not divide the grid size {tuple(m - 1 for m in mask.shape)}")
    idx = np.argwhere(mask)
    if idx.size == 0:
        return BoxDimension(0.0, scales, [0] * len(scales), empty=True)
    counts = []
    last = np.array(mask.shape) - 1
    for s in scales:
        boxes = np.minimum(idx // s, last // s - 1)
        counts.append(int(len(np.unique(boxes, axis=0))))
    slope = np.polyfit(np.log(1.0 / np.array(scales, dtype=float)), np.log(counts), 1)[0]
    return BoxDimension(float(slope), scales, counts)


def default_scales(shape):
    """Powers of two dividing every ``shape - 1``."""
    g = math.gcd(*[s - 1 for s in shape])
    out, s = [], 1
    while g % s == 0 and s <= g:
        out.append(s)
        s *= 2
    return out


@dataclass
class RegularityReport:
    status: np.ndarray  # grid-shaped array of REGULAR / SUSPECT / SKIPPED
    reasons: dict
    thresholds: dict
    dimension: BoxDimension
    coords: np.ndarray = dc_field(repr=False, default=None)

    @property
    def suspect_mask(self):
        return self.status == SUSPECT

    @property
    def regular_mask(self):
        return self.status == REGULAR

    def to_csv(self, path):
        n = self.coords.shape[-1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["node"] + [f"x{i}" for i in range(n)] + ["status", "reason"])
            flat = self.coords.reshape(-1, n)
            for i, st in enumerate(self.status.ravel()):
                w.writerow([i] + [repr(float(c)) for c in flat[i]] + [st, self.reasons.get(i, "")])


def _check_classify_args(grid, tau, eta, r0):
    _check_tau(tau)
    if not eta > 0:
        raise ValueError("eta must be positive")
    if r0 < 4.0 * max(grid.h) * (1.0 - _GEOM_TOL):
        raise TooFewCells(f"r0 = {r0!r} must be at least four grid steps")


def _levels(grid, tau, r0):
    out, r = [], tau * r0
    while r >= 2.0 * max(grid.h) * (1.0 - _GEOM_TOL):
        out.append(r)
        r *= tau
    return out


def classify_regular(field, f, L, tau, eta, r0, ratio_cap=10.0, scales=None):
    """Label every node whose ``r0`` ball fits as Regular or Suspect.

    A node is Regular when ``|(u)|``, ``|f((u))|`` and ``|(Du)|`` at radius
    ``r0`` are at most ``L``, ``E(x, r0) <= eta`` and
    ``E(x, tau^l r0) <= (ratio_cap tau^(1/2))^l eta`` at every level the
    grid resolves.  Nodes too close to the boundary are Skipped.
    """
    grid = field.grid
    _check_classify_args(grid, tau, eta, r0)
    E0, um, dm, ok = node_excess(field, r0)
    k = field.k
    with np.errstate(all="ignore"):
        fu = np.asarray(f.value(np.where(ok[..., None], um, 0.0).reshape(-1, k)), dtype=float).reshape(grid.shape)
    tests = [
        ("L:u", np.linalg.norm(um, axis=-1) <= L),
        ("L:f", np.abs(fu) <= L),
        ("L:Du", np.sqrt(np.sum(dm * dm, axis=(-2, -1))) <= L),
        ("excess", E0 <= eta),
    ]
    cap = ratio_cap * math.sqrt(tau)
    for lvl, r in enumerate(_levels(grid, tau, r0), start=1):
        El = node_excess(field, r)[0]
        tests.append((f"decay:{lvl}", El <= cap ** lvl * eta))
    status = np.full(grid.shape, SKIPPED, dtype=object)
    regular = ok.copy()
    reasons = {}
    flat_ok = ok.ravel()
    failed = [(name, ~passed & ok) for name, passed in tests]
    for name, bad in failed:
        regular &= ~bad
    status[ok] = SUSPECT
    status[regular] = REGULAR
    for i in np.flatnonzero(flat_ok & ~regular.ravel()):
        reasons[int(i)] = ";".join(name for name, bad in failed if bad.ravel()[i])
    status = status.astype(str)
    scales = default_scales(grid.shape) if scales is None else scales
    suspect = status == SUSPECT
    dim = box_dimension(suspect, scales) if len(scales) >= 3 else BoxDimension(math.nan, list(scales), [], not suspect.any())
    thresholds = {"L": float(L), "tau": float(tau), "eta": float(eta), "r0": float(r0), "ratio_cap": float(ratio_cap)}
    return RegularityReport(status, reasons, thresholds, dim, grid.coords())


@dataclass
class Calibration:
    L: float
    eta: float
    ratio_cap: float
    max_abs_u: float
    max_abs_f: float
    max_abs_Du: float
    max_excess: float
    max_ratio: float

    def as_dict(self):
        return dict(self.__dict__)


def calibrate(field, f, tau, r0, safety=2.0):
    """Measure the classifier statistics of a field known to be smooth.

    Returns thresholds equal to ``safety`` times the largest values seen,
    so that the calibration field itself classifies as Regular everywhere.
    """
    grid = field.grid
    _check_classify_args(grid, tau, 1.0, r0)
    E0, um, dm, ok = node_excess(field, r0)
    k = field.k
    fu = np.asarray(f.value(um[ok].reshape(-1, k)), dtype=float)
    max_u = float(np.linalg.norm(um[ok], axis=-1).max())
    max_f = float(np.abs(fu).max())
    max_du = float(np.sqrt(np.sum(dm[ok] ** 2, axis=(-2, -1))).max())
    max_e = float(np.nanmax(E0[ok]))
    ratio = 0.0
    prev = E0
    for r in _levels(grid, tau, r0):
        El = node_excess(field, r)[0]
        ratio = max(ratio, float(np.nanmax(El[ok] / (math.sqrt(tau) * prev[ok]))))
        prev = El
    return Calibration(
        L=safety * max(max_u, max_f, max_du),
        eta=safety * max_e,
        ratio_cap=safety * max(ratio, 1.0),
        max_abs_u=max_u,
        max_abs_f=max_f,
        max_abs_Du=max_du,
        max_excess=max_e,
        max_ratio=ratio,
    )
