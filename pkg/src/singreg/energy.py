"""Grid discretization of ``I[v] = int_U F(v, Dv) + f(v) dx`` on boxes.

Each cell carries one gradient, the forward differences from its lower
corner, and the density ``F`` is evaluated there at the mean of the cell's
corner values.  The potential ``f`` is integrated with trapezoid weights on
the nodes.  :func:`energy_gradient` is the exact derivative of
:func:`energy_value` with respect to the free (non-boundary) node values.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import BoundaryContact, LosesCoercivity


@dataclass(frozen=True)
class Grid:
    """Uniform grid on the box ``origin + [0, (shape-1) h]``."""

    shape: tuple
    h: tuple
    origin: tuple = None

    def __post_init__(self):
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        h = tuple(float(x) for x in np.broadcast_to(np.atleast_1d(self.h), (len(shape),)))
        origin = (0.0,) * len(shape) if self.origin is None else self.origin
        origin = tuple(float(x) for x in np.broadcast_to(np.atleast_1d(origin), (len(shape),)))
        if not 1 <= len(shape) <= 3:
            raise ValueError("only 1, 2 or 3 space dimensions are supported")
        if min(shape) < 2:
            raise ValueError(f"need at least 2 nodes per axis, got {shape}")
        if min(h) <= 0:
            raise ValueError("grid spacing must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def unit(cls, n, nodes):
        """``nodes`` points per axis on the unit cube ``[0, 1]^n``."""
        return cls((nodes,) * n, 1.0 / (nodes - 1))

    @property
    def n(self):
        return len(self.shape)

    @property
    def cell_shape(self):
        return tuple(s - 1 for s in self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    @property
    def lengths(self):
        return tuple((s - 1) * h for s, h in zip(self.shape, self.h))

    @property
    def upper(self):
        return tuple(o + L for o, L in zip(self.origin, self.lengths))

    def axes(self):
        return [o + h * np.arange(s) for o, h, s in zip(self.origin, self.h, self.shape)]

    def coords(self):
        """Node coordinates, shape ``shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cell_centers(self):
        axes = [o + h * (np.arange(s - 1) + 0.5) for o, h, s in zip(self.origin, self.h, self.shape)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def node_weights(self):
        """Trapezoid weights; they sum to the box volume."""
        w = np.full(self.shape, self.cell_volume)
        for ax in range(self.n):
            edge = [slice(None)] * self.n
            for i in (0, -1):
                edge[ax] = i
                w[tuple(edge)] *= 0.5
        return w

    def face_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.n):
            edge = [slice(None)] * self.n
            for i in (0, -1):
                edge[ax] = i
                mask[tuple(edge)] = True
        return mask


@dataclass(frozen=True, eq=False)
class Field:
    """Map from grid nodes into R^k with Dirichlet nodes marked in ``boundary_mask``."""

    grid: Grid
    values: np.ndarray
    boundary_mask: np.ndarray = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape == self.grid.shape:
            vals = vals[..., None]
        if vals.shape[:-1] != self.grid.shape:
            raise ValueError(f"values of shape {vals.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        mask = self.grid.face_mask() if self.boundary_mask is None else np.array(self.boundary_mask, dtype=bool)
        if mask.shape != self.grid.shape:
            raise ValueError("boundary mask does not match the grid")
        vals.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "boundary_mask", mask)

    @property
    def k(self):
        return self.values.shape[-1]

    @property
    def interior_mask(self):
        return ~self.boundary_mask

    def with_values(self, values):
        return Field(self.grid, values, self.boundary_mask)

    @classmethod
    def from_function(cls, grid, func, boundary_mask=None):
        """Sample ``func`` (coordinates ``(..., n)`` -> values ``(..., k)``) at every node."""
        return cls(grid, func(grid.coords()), boundary_mask)


# ---------------------------------------------------------------------------
# discrete calculus


def _shift(n, ax=None):
    """Slices selecting lower cell corners, shifted by one along ``ax``."""
    sl = [slice(0, -1)] * n
    if ax is not None:
        sl[ax] = slice(1, None)
    return tuple(sl)


def cell_gradients(grid, values):
    """Forward-difference gradient per cell, shape ``cell_shape + (k, n)``."""
    lo = values[_shift(grid.n)]
    cols = [(values[_shift(grid.n, ax)] - lo) / grid.h[ax] for ax in range(grid.n)]
    return np.stack(cols, axis=-1)


def gradient_field(field):
    return cell_gradients(field.grid, field.values)


def _corner_slices(n):
    for offs in itertools.product((0, 1), repeat=n):
        yield tuple(slice(o, None) if o else slice(0, -1) for o in offs)


def cell_means(grid, values):
    """Average of the ``2^n`` corner values of every cell."""
    acc = sum(values[sl] for sl in _corner_slices(grid.n))
    return acc / 2 ** grid.n


def h1_norm(grid, values):
    """Discrete H^1 norm: trapezoid L^2 part plus cell-gradient part."""
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        values = values[..., None]
    l2 = float(np.sum(grid.node_weights()[..., None] * values ** 2))
    d = cell_gradients(grid, values)
    return math.sqrt(l2 + grid.cell_volume * float(np.sum(d ** 2)))


def h1_distance(a, b):
    return h1_norm(a.grid, a.values - b.values)


# ---------------------------------------------------------------------------
# densities F(z, P)


class EnergyDensity:
    """Interface for ``F(z, P)`` with ``z`` of shape ``(..., k)`` and ``P`` of shape ``(..., k, n)``.

    ``dP2(z, P, R)`` is the action of the P-Hessian on a direction ``R``.
    ``convexity_modulus`` is the ``gamma`` of ``R^T D^2F R >= gamma |R|^2``
    (0 when not declared), ``dz_lipschitz`` the constant in
    ``|F(z,P) - F(y,P)| <= C (1 + |P|^2) |z - y|`` and ``coercivity`` the pair
    ``(gamma, C)`` with ``gamma |P|^2 <= F + C``.
    """

    convexity_modulus = 0.0
    dz_lipschitz = 0.0
    coercivity = (0.0, 0.0)

    def value(self, z, P):
        raise NotImplementedError

    def dP(self, z, P):
        raise NotImplementedError

    def dz(self, z, P):
        return np.zeros(np.shape(z))

    def dP2(self, z, P, R):
        raise NotImplementedError


def _sq(P):
    return np.sum(P * P, axis=(-2, -1))


class DirichletDensity(EnergyDensity):
    """``scale * |P|^2``."""

    def __init__(self, scale=1.0):
        self.scale = float(scale)
        self.convexity_modulus = 2.0 * self.scale
        self.coercivity = (self.scale, 0.0)

    def value(self, z, P):
        return self.scale * _sq(P)

    def dP(self, z, P):
        return 2.0 * self.scale * P

    def dP2(self, z, P, R):
        return 2.0 * self.scale * R + 0.0 * P


class QuadraticDensity(EnergyDensity):
    """``1/2 P : C : P`` for a coefficient tensor ``C`` of shape ``(k, n, k, n)``."""

    def __init__(self, coeff):
        C = np.asarray(coeff, dtype=float)
        if C.ndim != 4 or C.shape[:2] != C.shape[2:]:
            raise ValueError("coefficient tensor must have shape (k, n, k, n)")
        k, n = C.shape[:2]
        flat = C.reshape(k * n, k * n)
        flat = 0.5 * (flat + flat.T)
        self.coeff = flat.reshape(k, n, k, n)
        self.matrix = flat
        lo = float(np.linalg.eigvalsh(flat).min())
        self.convexity_modulus = max(lo, 0.0)
        self.legendre_min = lo
        self.coercivity = (0.5 * self.convexity_modulus, 0.0)

    def value(self, z, P):
        return 0.5 * np.einsum("...ia,iajb,...jb->...", P, self.coeff, P)

    def dP(self, z, P):
        return np.einsum("iajb,...jb->...ia", self.coeff, P)

    def dP2(self, z, P, R):
        return np.einsum("iajb,...jb->...ia", self.coeff, R)


class ConvexGrowthDensity(EnergyDensity):
    """``|P|^2 + alpha (sqrt(1 + |P|^2) - 1)``: smooth, non-quadratic, uniformly convex."""

    def __init__(self, alpha=0.5):
        if alpha < 0:
            raise ValueError("alpha must be non-negative")
        self.alpha = float(alpha)
        self.convexity_modulus = 2.0
        self.coercivity = (1.0, 0.0)

    def value(self, z, P):
        s2 = _sq(P)
        return s2 + self.alpha * (np.sqrt(1.0 + s2) - 1.0)

    def dP(self, z, P):
        s = np.sqrt(1.0 + _sq(P))[..., None, None]
        return 2.0 * P + self.alpha * P / s

    def dP2(self, z, P, R):
        s = np.sqrt(1.0 + _sq(P))[..., None, None]
        pr = np.sum(P * R, axis=(-2, -1))[..., None, None]
        return 2.0 * R + self.alpha * (R / s - pr * P / s ** 3)


class SineWeight:
    """``w(z) = sin(u . z)`` for a unit vector ``u``: bounded by 1 and 1-Lipschitz."""

    def __init__(self, direction):
        u = np.asarray(direction, dtype=float)
        self.u = u / np.linalg.norm(u)

    def value(self, z):
        return np.sin(np.asarray(z) @ self.u)

    def gradient(self, z):
        return np.cos(np.asarray(z) @ self.u)[..., None] * self.u


class ZDependentDensity(EnergyDensity):
    """``(1 + beta w(z)) |P|^2`` with ``|w| <= 1`` and ``Lip(w) <= 1``."""

    def __init__(self, beta, weight):
        if abs(beta) >= 1.0:
            raise LosesCoercivity(f"|beta| must be < 1, got {beta!r}")
        self.beta = float(beta)
        self.weight = weight
        self.convexity_modulus = 2.0 * (1.0 - abs(self.beta))
        self.dz_lipschitz = 2.0 * abs(self.beta)
        self.coercivity = (1.0 - abs(self.beta), 0.0)

    def _factor(self, z):
        return 1.0 + self.beta * self.weight.value(z)

    def value(self, z, P):
        return self._factor(z) * _sq(P)

    def dP(self, z, P):
        return 2.0 * self._factor(z)[..., None, None] * P

    def dz(self, z, P):
        return self.beta * self.weight.gradient(z) * _sq(P)[..., None]

    def dP2(self, z, P, R):
        return 2.0 * self._factor(z)[..., None, None] * R


def z_dependent_density(beta, w=None, k=1):
    return ZDependentDensity(beta, SineWeight(np.eye(k)[0]) if w is None else w)


class RescaledDensity(EnergyDensity):
    """``(F(A + lam P) - F(A) - lam DF(A) : P) / lam^2`` for a z-independent ``F``."""

    def __init__(self, base, A, lam):
        if lam <= 0:
            raise ValueError("lambda must be positive")
        if base.dz_lipschitz != 0.0:
            raise ValueError("rescaling is defined for densities that do not depend on z")
        self.base = base
        self.A = np.asarray(A, dtype=float)
        self.lam = float(lam)
        self.convexity_modulus = base.convexity_modulus
        self.coercivity = (0.5 * base.convexity_modulus, 0.0)

    def _at(self, z, P):
        z0 = np.zeros(np.shape(P)[:-2] + (self.A.shape[0],)) if z is None else z
        A = np.broadcast_to(self.A, np.shape(P))
        return z0, A

    def value(self, z, P):
        z0, A = self._at(z, P)
        lam = self.lam
        dFA = self.base.dP(z0, A)
        return (
            self.base.value(z0, A + lam * P) - self.base.value(z0, A) - lam * np.sum(dFA * P, axis=(-2, -1))
        ) / lam ** 2

    def dP(self, z, P):
        z0, A = self._at(z, P)
        return (self.base.dP(z0, A + self.lam * P) - self.base.dP(z0, A)) / self.lam

    def dP2(self, z, P, R):
        z0, A = self._at(z, P)
        return self.base.dP2(z0, A + self.lam * P, R)


def rescaled_density(F, A, lam):
    return RescaledDensity(F, A, lam)


# ---------------------------------------------------------------------------
# energy


@dataclass(frozen=True, eq=False)
class DiscreteEnergy:
    density: EnergyDensity
    potential: object
    grid: Grid
    _weights: np.ndarray = dc_field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_weights", self.grid.node_weights())

    def _potential_values(self, values):
        k = values.shape[-1]
        return self.potential.value(values.reshape(-1, k)).reshape(self.grid.shape)

    def value(self, values):
        fv = self._potential_values(values)
        if not np.all(np.isfinite(fv)):
            return math.inf
        P = cell_gradients(self.grid, values)
        zbar = cell_means(self.grid, values)
        # Exact summation keeps energy differences resolvable near the optimum.
        elastic = self.grid.cell_volume * math.fsum(np.ravel(self.density.value(zbar, P)))
        return elastic + math.fsum(np.ravel(self._weights * fv))

    def gradient(self, values, mask):
        """Derivative with respect to node values; entries on ``mask`` are zeroed."""
        grid, k = self.grid, values.shape[-1]
        flat = values.reshape(-1, k)
        if getattr(self.potential, "singular", False):
            if np.any(~(self.potential.margin(flat) > 0)):
                raise BoundaryContact("a node lies on or outside the boundary of K")
        P = cell_gradients(grid, values)
        zbar = cell_means(grid, values)
        vol = grid.cell_volume
        out = np.zeros_like(values)
        dP = vol * self.density.dP(zbar, P)
        lo = _shift(grid.n)
        for ax in range(grid.n):
            flux = dP[..., ax] / grid.h[ax]
            out[_shift(grid.n, ax)] += flux
            out[lo] -= flux
        dz = self.density.dz(zbar, P)
        if np.any(dz):
            share = vol * dz / 2 ** grid.n
            for sl in _corner_slices(grid.n):
                out[sl] += share
        out += self._weights[..., None] * self.potential.gradient(flat).reshape(values.shape)
        out[mask] = 0.0
        return out


def energy_value(de, field):
    return de.value(field.values)


def energy_gradient(de, field):
    return de.gradient(field.values, field.boundary_mask)


# ---------------------------------------------------------------------------
# snapshot files


def _fmt(x):
    return repr(float(x))


def write_field(path, field):
    """Write ``n k shape... h... origin...`` then one line of k values per node (C order)."""
    g = field.grid
    header = [str(g.n), str(field.k)] + [str(s) for s in g.shape] + [_fmt(x) for x in g.h + g.origin]
    lines = [" ".join(header)]
    lines.extend(" ".join(_fmt(x) for x in row) for row in field.values.reshape(-1, field.k))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_field(path, boundary_mask=None):
    with open(path) as fh:
        head = fh.readline().split()
        n, k = int(head[0]), int(head[1])
        shape = tuple(int(s) for s in head[2 : 2 + n])
        h = tuple(float(x) for x in head[2 + n : 2 + 2 * n])
        origin = tuple(float(x) for x in head[2 + 2 * n : 2 + 3 * n])
        data = np.loadtxt(fh, ndmin=2)
    grid = Grid(shape, h, origin)
    return Field(grid, data.reshape(shape + (k,)), boundary_mask)
