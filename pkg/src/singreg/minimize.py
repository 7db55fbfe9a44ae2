"""Interior-preserving descent on the discrete energy, the eta-homotopy and
the constant-coefficient elliptic solve.

Both descent methods measure steepness in a metric built from the discrete
Dirichlet stiffness matrix (the Hessian of ``sum |cell| |P|^2`` on the free
nodes).  By default the convex part of the potential's node-wise Hessian is
added and the metric is refactorized every iteration, which keeps the
iteration count low even when nodes sit close to the boundary of K.  A trial step is
first shortened until every node keeps at least ``(1 - theta)`` of its
current margin, then backtracked until the Armijo condition holds.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg, splu

from .energy import DiscreteEnergy, Field, QuadraticDensity, h1_distance
from .errors import BoundaryContact, InfeasibleStart, NotElliptic
from .potentials import ZeroPotential, regularize

CONVERGED = "Converged"
NOT_CONVERGED = "NotConverged"
# Steps accepted only because the energy could no longer resolve a decrease.
_MAX_FLOOR_STEPS = 50


@dataclass(frozen=True)
class SolveOptions:
    tol: float = 1e-8
    max_iter: int = 5000
    backtrack: float = 0.5
    armijo: float = 1e-4
    fraction_to_boundary: float = 0.95
    method: str = "gd"
    memory: int = 8
    metric: str = "curvature"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0.0 < self.fraction_to_boundary < 1.0:
            raise ValueError("fraction_to_boundary must lie in (0, 1)")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtrack must lie in (0, 1)")
        if not 0.0 < self.armijo < 0.5:
            raise ValueError("armijo constant must lie in (0, 1/2)")
        if self.method not in ("gd", "lbfgs"):
            raise ValueError(f"unknown method {self.method!r}; use 'gd' or 'lbfgs'")
        if self.metric not in ("curvature", "stiffness"):
            raise ValueError(f"unknown metric {self.metric!r}; use 'curvature' or 'stiffness'")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")


@dataclass
class SolveReport:
    status: str
    iterations: int
    grad_norm: float
    energy: float
    min_margin: float
    energy_trace: list = dc_field(default_factory=list)
    reason: str = ""

    @property
    def converged(self):
        return self.status == CONVERGED

    def rows(self):
        """``(key, value)`` pairs with floats in shortest round-trip form."""
        return [
            ("status", self.status),
            ("reason", self.reason),
            ("iterations", self.iterations),
            ("grad_norm", repr(float(self.grad_norm))),
            ("energy", repr(float(self.energy))),
            ("min_margin", repr(float(self.min_margin))),
        ]

    def to_text(self):
        return "".join(f"{k}: {v}\n" for k, v in self.rows())

    def write_text(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "energy"])
            for i, e in enumerate(self.energy_trace):
                w.writerow([i, repr(float(e))])


# ---------------------------------------------------------------------------
# preconditioner


def stiffness_matrix(grid):
    """Sparse ``D^T |cell| D`` for scalar nodal fields (D = cell forward differences)."""
    idx = np.arange(int(np.prod(grid.shape))).reshape(grid.shape)
    lo = idx[tuple(slice(0, -1) for _ in range(grid.n))].ravel()
    ncell = lo.size
    blocks = []
    for ax in range(grid.n):
        sl = [slice(0, -1)] * grid.n
        sl[ax] = slice(1, None)
        hi = idx[tuple(sl)].ravel()
        rows = np.concatenate([np.arange(ncell), np.arange(ncell)])
        cols = np.concatenate([hi, lo])
        vals = np.concatenate([np.full(ncell, 1.0 / grid.h[ax]), np.full(ncell, -1.0 / grid.h[ax])])
        blocks.append(sp.csr_matrix((vals, (rows, cols)), shape=(ncell, idx.size)))
    D = sp.vstack(blocks).tocsr()
    return (grid.cell_volume * (D.T @ D)).tocsc()


class _Preconditioner:
    """Factorized ``scale * K_free (x) I_k + blockdiag(w_i H_i)`` acting on ``(nodes, k)`` arrays."""

    def __init__(self, stiff, free, scale, k, node_blocks=None, weights=None, shift=0.0):
        f = np.flatnonzero(free.ravel())
        M = sp.kron(scale * stiff[f][:, f], sp.identity(k), format="csc")
        diag = np.zeros((f.size, k, k))
        if shift:
            diag += shift * np.eye(k)
        if node_blocks is not None:
            diag += node_blocks
        if weights is not None:
            diag *= weights.ravel()[f][:, None, None]
        if np.any(diag):
            M = M + sp.block_diag(list(diag), format="csc")
        self._lu = splu(M.tocsc())

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        return self._lu.solve(rhs.ravel()).reshape(rhs.shape)


def _psd_part(blocks):
    """Clip the eigenvalues of symmetric ``(..., k, k)`` blocks at zero; non-finite blocks become 0."""
    blocks = np.where(np.isfinite(blocks).all(axis=(-1, -2))[..., None, None], blocks, 0.0)
    blocks = 0.5 * (blocks + np.swapaxes(blocks, -1, -2))
    w, v = np.linalg.eigh(blocks)
    return np.einsum("...ij,...j,...kj->...ik", v, np.maximum(w, 0.0), v)


class _Metric:
    """Descent metric: Dirichlet stiffness plus, optionally, the local curvature of ``f``."""

    def __init__(self, de, free, k, curvature):
        self.de, self.free, self.k, self.curvature = de, free, k, curvature
        self.stiff = stiffness_matrix(de.grid)
        self.scale = de.density.convexity_modulus or 2.0
        self.weights = de.grid.node_weights()
        self.shift = self.scale if not np.any(~free) else 0.0
        self._fixed = None

    def at(self, values):
        if not self.curvature:
            if self._fixed is None:
                self._fixed = self._build(None)
            return self._fixed
        pts = values[self.free].reshape(-1, self.k)
        with np.errstate(all="ignore"):
            blocks = _psd_part(self.de.potential.hessian(pts))
        return self._build(blocks)

    def _build(self, blocks):
        if blocks is None and self.shift:
            blocks = np.zeros((int(self.free.sum()), self.k, self.k))
        return _Preconditioner(self.stiff, self.free, self.scale, self.k, blocks, self.weights, self.shift)


# ---------------------------------------------------------------------------
# descent


def _node_margins(potential, values):
    k = values.shape[-1]
    return np.asarray(potential.margin(values.reshape(-1, k)), dtype=float).reshape(values.shape[:-1])


def minimize(de, initial, opts=None):
    """Minimize ``de`` over fields sharing ``initial``'s boundary values.

    Returns ``(field, report)``.  When ``max_iter`` runs out, or the line
    search can make no further progress, the best iterate comes back with
    status ``NotConverged``.
    """
    opts = SolveOptions() if opts is None else opts
    pot = de.potential
    singular = bool(getattr(pot, "singular", False))
    free = initial.interior_mask
    v = np.array(initial.values, dtype=float)
    k = v.shape[-1]

    energy = de.value(v)
    margins = _node_margins(pot, v)
    if not math.isfinite(energy) or (singular and np.any(~(margins > 0))):
        raise InfeasibleStart("initial field has infinite energy or a node outside K")

    if not np.any(free):
        report = SolveReport(CONVERGED, 0, 0.0, energy, float(margins.min()), [energy])
        return initial, report

    metric = _Metric(de, free, k, opts.metric == "curvature")
    grad = de.gradient(v, initial.boundary_mask)[free]
    gnorm = float(np.linalg.norm(grad))
    trace = [energy]
    pairs = deque(maxlen=opts.memory)
    theta = opts.fraction_to_boundary
    status, reason = NOT_CONVERGED, "iteration limit reached"
    alpha_prev = 1.0
    floor_steps = 0
    it = 0

    while True:
        if gnorm <= opts.tol:
            status, reason = CONVERGED, "gradient norm below tolerance"
            break
        if it >= opts.max_iter:
            break

        precond = metric.at(v)
        if opts.method == "lbfgs" and pairs:
            d = -_two_loop(grad, pairs, precond)
            if float(np.sum(d * grad)) >= 0:
                pairs.clear()
                d = -precond.solve(grad)
        else:
            d = -precond.solve(grad)
        slope = float(np.sum(d * grad))

        if opts.method == "lbfgs" or opts.metric == "curvature":
            alpha = 1.0
        else:
            alpha = min(1.0, 4.0 * alpha_prev)
        step = np.zeros_like(v)
        accepted = False
        while alpha > 1e-20:
            step[free] = alpha * d
            trial = v + step
            if singular:
                tm = _node_margins(pot, trial)
                if np.any(~(tm[free] >= (1.0 - theta) * margins[free])):
                    alpha *= opts.backtrack
                    continue
            e_new = de.value(trial)
            if not math.isfinite(e_new):
                alpha *= opts.backtrack
                continue
            if e_new - energy <= opts.armijo * alpha * slope:
                accepted = True
                break
            # Round-off regime: the energy can no longer resolve the Armijo
            # decrease, so accept a non-increasing step that shrinks the gradient.
            if e_new <= energy and abs(e_new - energy) <= 64 * np.finfo(float).eps * (1.0 + abs(energy)):
                g_try = de.gradient(trial, initial.boundary_mask)[free]
                if np.linalg.norm(g_try) < gnorm:
                    accepted = True
                    floor_steps += 1
                    break
            alpha *= opts.backtrack
        if not accepted:
            reason = "line search made no progress"
            break
        if floor_steps > _MAX_FLOOR_STEPS:
            reason = "energy at round-off floor"
            break

        new_grad = de.gradient(trial, initial.boundary_mask)[free]
        if opts.method == "lbfgs":
            s, y = alpha * d, new_grad - grad
            sy = float(np.sum(s * y))
            if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)):
                pairs.append((s, y, 1.0 / sy))
        v, energy, grad = trial, e_new, new_grad
        gnorm = float(np.linalg.norm(grad))
        if singular:
            margins = _node_margins(pot, v)
            assert np.all(margins > 0), "iterate left the interior of K"
        trace.append(energy)
        alpha_prev = alpha
        it += 1

    margins = _node_margins(pot, v)
    report = SolveReport(status, it, gnorm, energy, float(margins.min()), trace, reason)
    return initial.with_values(v), report


def _two_loop(grad, pairs, precond):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(np.sum(s * q))
        alphas.append(a)
        q -= a * y
    r = precond.solve(q)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(np.sum(y * r))
        r += (a - b) * s
    return r


# ---------------------------------------------------------------------------
# homotopy


@dataclass
class HomotopyStage:
    eta: float
    field: Field
    h1_increment: float
    report: SolveReport


def geometric_schedule(eta0, count, ratio=0.5):
    return [eta0 * ratio ** i for i in range(count)]


def homotopy_minimize(de, eta_schedule, initial, opts=None):
    """Solve the regularized problems along a decreasing eta schedule with warm starts.

    ``h1_increment`` of each stage is the discrete H^1 distance to the
    previous stage (NaN for the first one).  The final field must lie
    strictly inside K.
    """
    etas = [float(e) for e in eta_schedule]
    if not etas:
        raise ValueError("eta schedule is empty")
    if any(b >= a for a, b in zip(etas, etas[1:])):
        raise ValueError("eta schedule must be strictly decreasing")
    stages = []
    current = initial
    for eta in etas:
        reg = DiscreteEnergy(de.density, regularize(de.potential, eta), de.grid)
        sol, report = minimize(reg, current, opts)
        inc = h1_distance(sol, current) if stages else math.nan
        stages.append(HomotopyStage(eta, sol, inc, report))
        current = sol
    if np.any(~(_node_margins(de.potential, current.values) > 0)):
        raise BoundaryContact("final homotopy stage has a node on or outside the boundary of K")
    return stages


def write_homotopy_csv(path, stages):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eta", "h1_increment", "energy", "grad_norm", "iterations", "min_margin", "status"])
        for s in stages:
            r = s.report
            w.writerow([repr(s.eta), repr(float(s.h1_increment)), repr(float(r.energy)),
                        repr(float(r.grad_norm)), r.iterations, repr(float(r.min_margin)), r.status])


# ---------------------------------------------------------------------------
# constant-coefficient systems


def solve_linear_elliptic(A_coeff, grid, boundary, tol=1e-12, max_iter=None):
    """Minimize ``sum_cells |cell| P : A P / 2`` with the Dirichlet data of ``boundary``.

    Matrix-free conjugate gradients on the free nodes, preconditioned by
    the scalar stiffness matrix.  Returns ``(field, residual_norm)``.
    """
    density = QuadraticDensity(A_coeff)
    if density.legendre_min <= 0:
        raise NotElliptic(f"coefficient tensor fails the Legendre condition (min eigenvalue {density.legendre_min:.3e})")
    k = density.coeff.shape[0]
    if boundary.k != k or grid.shape != boundary.grid.shape:
        raise ValueError("boundary field does not match the coefficient tensor or grid")
    de = DiscreteEnergy(density, ZeroPotential(k), grid)
    mask = boundary.boundary_mask
    free = ~mask
    base = np.where(mask[..., None], boundary.values, 0.0)
    nfree = int(free.sum()) * k
    if nfree == 0:
        return boundary, 0.0

    def apply(x):
        vals = np.zeros_like(base)
        vals[free] = x.reshape(-1, k)
        return de.gradient(vals, mask)[free].ravel()

    rhs = -de.gradient(base, mask)[free].ravel()
    pre = _Preconditioner(stiffness_matrix(grid), free, float(np.linalg.eigvalsh(density.matrix).max()), k)
    op = LinearOperator((nfree, nfree), matvec=apply, dtype=float)
    M = LinearOperator((nfree, nfree), matvec=pre.solve, dtype=float)
    x = np.zeros(nfree)
    limit = max_iter or 10 * nfree
    for _ in range(5):
        x, _info = cg(op, rhs, x0=x, rtol=0.0, atol=0.5 * tol, maxiter=limit, M=M)
        resid = float(np.linalg.norm(apply(x) - rhs))
        if resid <= tol:
            break
    vals = base.copy()
    vals[free] = x.reshape(-1, k)
    return boundary.with_values(vals), resid
