"""Convex potentials that blow up at the boundary of a convex body K.

Every potential works on arrays of points with shape ``(..., k)``.  The
shipped singular potentials are written as ``f(z) = phi(margin(z))`` with a
convex decreasing profile ``phi`` and a concave margin, which is what
:func:`regularize` needs.  The Ball-Majumdar entropy is the exception and is
evaluated through its dual exponential-family problem.
"""

from __future__ import annotations

import functools
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp

from . import qtensor as qt
from .errors import (
    DualDiverged,
    EmptySublevel,
    InvalidEta,
    NearBoundary,
    NotMarginForm,
    OutsideDomain,
    ProjectionFailed,
)
from .sphere_quadrature import product_rule

BM_MIN_MARGIN = 1e-6


def _points(z, dim):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != dim:
        raise ValueError(f"expected points with last axis {dim}, got shape {z.shape}")
    return z


class Potential:
    """Interface shared by all potentials.

    Subclasses provide ``value``, ``gradient``, ``hessian`` and ``margin``
    on arrays of shape ``(..., dim)``.  ``singular`` tells the minimizer
    whether iterates must stay strictly inside ``margin > 0``.
    """

    dim: int
    singular = True

    @property
    def interior_anchor(self):
        raise NotImplementedError

    def value(self, z):
        raise NotImplementedError

    def gradient(self, z):
        raise NotImplementedError

    def hessian(self, z):
        raise NotImplementedError

    def margin(self, z):
        raise NotImplementedError

    def bounding_box(self):
        raise NotImplementedError

    def _check_inside(self, z):
        m = self.margin(z)
        if np.any(~(m > 0)):
            raise OutsideDomain("point lies on or outside the boundary of K")
        return m


class ZeroPotential(Potential):
    """``f = 0`` on all of R^k."""

    singular = False

    def __init__(self, dim):
        self.dim = int(dim)

    @property
    def interior_anchor(self):
        return np.zeros(self.dim)

    def value(self, z):
        z = _points(z, self.dim)
        return np.zeros(z.shape[:-1])

    def gradient(self, z):
        return np.zeros_like(_points(z, self.dim))

    def hessian(self, z):
        z = _points(z, self.dim)
        return np.zeros(z.shape + (self.dim,))

    def margin(self, z):
        z = _points(z, self.dim)
        return np.full(z.shape[:-1], np.inf)

    def bounding_box(self):
        return -np.ones(self.dim), np.ones(self.dim)


# ---------------------------------------------------------------------------
# margins and profiles


class BallMargin:
    """``1 - |z|`` on the unit ball of R^k (concave, non-smooth at 0)."""

    max_margin = 1.0

    def __init__(self, dim):
        self.dim = int(dim)

    @property
    def anchor(self):
        return np.zeros(self.dim)

    def bounding_box(self):
        return -np.ones(self.dim), np.ones(self.dim)

    def value(self, z):
        return 1.0 - np.linalg.norm(_points(z, self.dim), axis=-1)

    def gradient(self, z):
        z = _points(z, self.dim)
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        # 0 is the minimal-norm supergradient at the apex.
        return np.where(r > 0, -z / np.where(r > 0, r, 1.0), 0.0)

    def hessian(self, z):
        z = _points(z, self.dim)
        r = np.linalg.norm(z, axis=-1)[..., None, None]
        safe = np.where(r > 0, r, 1.0)
        zh = z[..., :, None] / safe
        proj = np.eye(self.dim) - zh * np.swapaxes(zh, -1, -2)
        return np.where(r > 0, -proj / safe, np.nan)


class LogProfile:
    """``phi(t) = -log t``."""

    def phi(self, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t > 0, -np.log(np.where(t > 0, t, 1.0)), np.inf)

    def dphi(self, t):
        return -1.0 / t

    def d2phi(self, t):
        return 1.0 / (t * t)


class InverseSquareProfile:
    """``phi(t) = gamma / t^2``."""

    def __init__(self, gamma):
        self.gamma = float(gamma)

    def phi(self, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(t > 0, self.gamma / np.where(t > 0, t, 1.0) ** 2, np.inf)

    def dphi(self, t):
        return -2.0 * self.gamma / t ** 3

    def d2phi(self, t):
        return 6.0 * self.gamma / t ** 4


class MarginFormPotential(Potential):
    """``f(z) = phi(margin(z))``, infinite where the margin is non-positive."""

    def __init__(self, profile, margin_oracle):
        self.profile = profile
        self.margin_oracle = margin_oracle
        self.dim = margin_oracle.dim

    @property
    def interior_anchor(self):
        return self.margin_oracle.anchor

    def bounding_box(self):
        return self.margin_oracle.bounding_box()

    def margin(self, z):
        return self.margin_oracle.value(z)

    def value(self, z):
        return self.profile.phi(self.margin(z))

    def gradient(self, z):
        m = self._check_inside(z)
        return self.profile.dphi(m)[..., None] * self.margin_oracle.gradient(z)

    def hessian(self, z):
        m = self._check_inside(z)
        g = self.margin_oracle.gradient(z)
        h = self.margin_oracle.hessian(z)
        return (
            self.profile.d2phi(m)[..., None, None] * g[..., :, None] * g[..., None, :]
            + self.profile.dphi(m)[..., None, None] * h
        )


class CoredLogProfile(LogProfile):
    """``-log t`` near the boundary, a quadratic in ``1 - t`` inside.

    The splice sits at ``t = 1 - core_radius`` and matches value and slope;
    for ``core_radius = 1/2`` it matches the second derivative too.  A core
    radius of zero gives the bare ``-log t``.
    """

    def __init__(self, core_radius):
        rho = float(core_radius)
        if not 0.0 <= rho < 1.0:
            raise ValueError("core_radius must lie in [0, 1)")
        self.core_radius = rho
        if rho > 0:
            self.b = 1.0 / (2.0 * rho * (1.0 - rho))
            self.a = -math.log(1.0 - rho) - self.b * rho * rho
        else:
            self.b = self.a = 0.0

    def _in_core(self, t):
        return (1.0 - t) < self.core_radius

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(self._in_core(t), self.a + self.b * (1.0 - t) ** 2, super().phi(t))

    def dphi(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(self._in_core(t), -2.0 * self.b * (1.0 - t), -1.0 / t)

    def d2phi(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(self._in_core(t), 2.0 * self.b, 1.0 / (t * t))


class LogBallPotential(MarginFormPotential):
    """``-log(1 - |z|)`` on the unit ball with an optional smooth core.

    Outside the core radius the derivatives are

        f_a   = z_a / (|z| (1 - |z|))
        f_ab  = delta_ab / (|z| (1 - |z|)) + z_a z_b / (|z|^2 (1 - |z|)^2) (2 - 1/|z|).

    Inside the core the radial profile is ``a + b |z|^2``, which keeps the
    function smooth at the origin.
    """

    def __init__(self, dim, core_radius=0.5):
        super().__init__(CoredLogProfile(core_radius), BallMargin(dim))
        self.core_radius = self.profile.core_radius

    def _radius(self, z):
        z = _points(z, self.dim)
        return z, np.linalg.norm(z, axis=-1)

    def gradient(self, z):
        z, r = self._radius(z)
        if np.any(r >= 1.0):
            raise OutsideDomain("log_ball gradient requested outside the open unit ball")
        safe = np.where(r > 0, r, 1.0)
        ratio = np.where(r < self.core_radius, 2.0 * self.profile.b, 1.0 / (safe * (1.0 - r)))
        ratio = np.where(r > 0, ratio, 2.0 * self.profile.b)
        return ratio[..., None] * z

    def hessian(self, z):
        z, r = self._radius(z)
        if np.any(r >= 1.0):
            raise OutsideDomain("log_ball Hessian requested outside the open unit ball")
        if self.core_radius == 0.0 and np.any(r == 0.0):
            raise OutsideDomain("log_ball without a core is not twice differentiable at 0")
        eye = np.eye(self.dim)
        safe = np.where(r > 0, r, 1.0)[..., None, None]
        one_m = (1.0 - r)[..., None, None]
        outer = z[..., :, None] * z[..., None, :]
        shell = eye / (safe * one_m) + outer / (safe ** 2 * one_m ** 2) * (2.0 - 1.0 / safe)
        core = 2.0 * self.profile.b * eye
        in_core = (r < self.core_radius)[..., None, None]
        return np.where(in_core, core + 0.0 * outer, shell)


def log_ball(dim, core_radius=0.5):
    """Unit-ball log barrier in R^dim.

    ``core_radius=0`` gives ``-log(1 - |z|)`` everywhere (a cone point at 0).
    """
    if int(dim) < 1:
        raise ValueError("dim must be >= 1")
    return LogBallPotential(int(dim), core_radius)


def inverse_square(margin_oracle, gamma):
    """``gamma / margin(z)^2``; pass :class:`BallMargin` or :class:`~singreg.qtensor.QTensorMargin`."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return MarginFormPotential(InverseSquareProfile(gamma), margin_oracle)


# ---------------------------------------------------------------------------
# Landau-de Gennes polynomial bulk term


class LdgPolynomial(Potential):
    """``a/2 tr Q^2 + b/3 tr Q^3 + c/4 (tr Q^2)^2`` in the five coordinates."""

    singular = False
    dim = 5

    def __init__(self, a, b, c):
        if c <= 0:
            raise ValueError("the quartic coefficient c must be positive")
        self.a, self.b, self.c = float(a), float(b), float(c)

    @property
    def interior_anchor(self):
        return np.zeros(5)

    def bounding_box(self):
        return qt.QTensorMargin().bounding_box()

    def margin(self, z):
        z = _points(z, 5)
        return np.full(z.shape[:-1], np.inf)

    def value(self, z):
        m = qt.matrices_from_components(_points(z, 5))
        m2 = m @ m
        t2 = np.trace(m2, axis1=-2, axis2=-1)
        t3 = np.einsum("...ij,...ji->...", m2, m)
        return 0.5 * self.a * t2 + self.b * t3 / 3.0 + 0.25 * self.c * t2 * t2

    def _matrix_gradient(self, m):
        m2 = m @ m
        t2 = np.trace(m2, axis1=-2, axis2=-1)
        return self.a * m + self.b * m2 + self.c * t2[..., None, None] * m

    def gradient(self, z):
        m = qt.matrices_from_components(_points(z, 5))
        return np.einsum("...ab,jab->...j", self._matrix_gradient(m), qt.BASIS)

    def hessian(self, z):
        m = qt.matrices_from_components(_points(z, 5))
        t2 = np.trace(m @ m, axis1=-2, axis2=-1)[..., None, None, None]
        B = qt.BASIS
        mB = np.einsum("...ab,ibc->...iac", m, B)
        sym = mB + np.swapaxes(mB, -1, -2)
        qB = np.einsum("...ab,iab->...i", m, B)
        dG = (
            self.a * B
            + self.b * sym
            + self.c * (2.0 * qB[..., :, None, None] * m[..., None, :, :] + t2 * B)
        )
        return np.einsum("...iab,jab->...ij", dG, B)


def ldg_polynomial(a, b, c):
    return LdgPolynomial(a, b, c)


# ---------------------------------------------------------------------------
# Ball-Majumdar entropy


@functools.lru_cache(maxsize=1)
def default_rule():
    return product_rule()


@functools.lru_cache(maxsize=16)
def _features(rule):
    # F[n, j] = p_n^T B_j p_n
    return np.einsum("na,jab,nb->nj", rule.nodes, qt.BASIS, rule.nodes)


@dataclass(frozen=True, eq=False)
class BMSolution:
    """Result of the dual entropy solve.

    ``multiplier`` is the traceless matrix ``Lambda`` with optimal density
    ``rho = exp(p^T Lambda p) / Z`` on the rule's nodes.
    """

    multiplier: qt.QTensor
    psi: float
    iterations: int
    residual: float
    density: np.ndarray
    covariance: np.ndarray

    @property
    def lam(self):
        return self.multiplier.q

    def primal_entropy(self, rule):
        rho = self.density
        return float(rule.integrate(rho * np.log(rho)))


def _dual_state(lam, feats, logw, b):
    s = feats @ lam
    log_z = logsumexp(s + logw)
    return float(b @ lam - log_z), s - log_z


def bm_dual_solve(Q, rule=None, tol=1e-10, max_iter=100, initial=None):
    """Entropy ``psi(Q)`` through Newton ascent on the concave dual.

    Maximizes ``g(Lambda) = Lambda : Q - log Z(Lambda)`` over traceless
    symmetric ``Lambda`` with ``Z(Lambda) = sum_n w_n exp(p_n^T Lambda p_n)``;
    ``psi(Q) = max g``.  Iteration stops once the Frobenius norm of the
    second-moment residual of the implied density drops below ``tol``.
    """
    Q = qt._as_qtensor(Q)
    rule = default_rule() if rule is None else rule
    margin = Q.membership().margin
    if margin < BM_MIN_MARGIN:
        raise NearBoundary(f"eigenvalue margin {margin:.3e} is below {BM_MIN_MARGIN:g}")
    feats = _features(rule)
    logw = np.log(rule.weights)
    b = qt.GRAM @ Q.q
    target = Q.matrix + np.eye(3) / 3.0
    lam = np.zeros(5) if initial is None else np.array(initial, dtype=float)

    def state(lam):
        g, log_rho = _dual_state(lam, feats, logw, b)
        rho = np.exp(log_rho)
        resid = float(np.linalg.norm(rule.second_moment(rho) - target))
        return g, rho, resid

    g, rho, resid = state(lam)
    it = 0
    while resid > tol:
        if it >= max_iter:
            raise DualDiverged(
                f"dual Newton did not converge in {max_iter} iterations (residual {resid:.3e})",
                residual=resid,
                iterations=it,
            )
        wr = rule.weights * rho
        mean = wr @ feats
        cen = feats - mean
        cov = cen.T @ (wr[:, None] * cen)
        grad = b - mean
        try:
            step = np.linalg.solve(cov, grad)
        except np.linalg.LinAlgError:
            step = np.full(5, np.nan)
        if not np.all(np.isfinite(step)):
            raise DualDiverged(
                f"singular moment covariance: the rule cannot resolve this Q (residual {resid:.3e})",
                residual=resid,
                iterations=it,
            )
        slope = float(grad @ step)
        t = 1.0
        while True:
            g_new, rho_new, resid_new = state(lam + t * step)
            if g_new >= g + 1e-4 * t * slope or resid_new < resid:
                break
            t *= 0.5
            if t < 1e-12:
                raise DualDiverged(
                    f"line search failed in the dual Newton iteration (residual {resid:.3e})",
                    residual=resid,
                    iterations=it,
                )
        lam = lam + t * step
        g, rho, resid = g_new, rho_new, resid_new
        it += 1
    wr = rule.weights * rho
    mean = wr @ feats
    cen = feats - mean
    cov = cen.T @ (wr[:, None] * cen)
    return BMSolution(qt.QTensor(lam), g, it, resid, rho, cov)


class BallMajumdarPotential(Potential):
    """``T psi(Q) - kappa |Q|^2`` on the five coordinates.

    Gradients come from the envelope identity ``d psi / dQ = Lambda``; the
    Hessian of ``psi`` is ``G C^{-1} G`` with ``C`` the covariance of the
    features ``p^T B_j p`` under the optimal density.  ``T psi - kappa |Q|^2``
    is convex only for small enough ``kappa``; see :func:`midpoint_convexity`.
    """

    dim = 5

    def __init__(self, rule=None, kappa=0.0, T=1.0, tol=1e-11, cache_size=4096):
        if T <= 0:
            raise ValueError("T must be positive")
        self.rule = default_rule() if rule is None else rule
        self.kappa = float(kappa)
        self.T = float(T)
        self.tol = float(tol)
        self._cache = OrderedDict()
        self._cache_size = cache_size
        self._margin = qt.QTensorMargin()

    @property
    def interior_anchor(self):
        return np.zeros(5)

    def bounding_box(self):
        return self._margin.bounding_box()

    def margin(self, z):
        return self._margin.value(z)

    def solve(self, q):
        q = np.asarray(q, dtype=float)
        key = q.tobytes()
        sol = self._cache.get(key)
        if sol is None:
            sol = bm_dual_solve(qt.QTensor(q), self.rule, tol=self.tol)
            self._cache[key] = sol
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        return sol

    def _each(self, z, fn, tail):
        z = _points(z, 5)
        flat = z.reshape(-1, 5)
        out = np.empty((flat.shape[0],) + tail)
        for i, q in enumerate(flat):
            out[i] = fn(q)
        return out.reshape(z.shape[:-1] + tail)

    def _value_one(self, q):
        if qt.component_margin(q) <= 0:
            return np.inf
        return self.T * self.solve(q).psi - self.kappa * float(q @ qt.GRAM @ q)

    def _gradient_one(self, q):
        sol = self.solve(q)
        return qt.GRAM @ (self.T * sol.lam - 2.0 * self.kappa * q)

    def _hessian_one(self, q):
        sol = self.solve(q)
        G = qt.GRAM
        return self.T * G @ np.linalg.solve(sol.covariance, G) - 2.0 * self.kappa * G

    def value(self, z):
        return self._each(z, self._value_one, ())

    def gradient(self, z):
        self._check_inside(z)
        return self._each(z, self._gradient_one, (5,))

    def hessian(self, z):
        self._check_inside(z)
        return self._each(z, self._hessian_one, (5, 5))


def bm_potential(rule=None, kappa=0.0, T=1.0, tol=1e-11):
    return BallMajumdarPotential(rule, kappa, T, tol)


def midpoint_convexity(f, n_pairs=1000, seed=0, min_margin=1e-3, tol=1e-9):
    """Worst midpoint gap ``(f(a)+f(b))/2 - f((a+b)/2)`` over random interior pairs.

    Returns ``(worst_gap, ok)``; a negative gap below ``-tol`` flags a
    convexity violation.
    """
    rng = np.random.default_rng(seed)
    a = sample_interior(f, 2 * n_pairs, rng, min_margin=min_margin)
    a, b = a[:n_pairs], a[n_pairs:]
    gap = 0.5 * (f.value(a) + f.value(b)) - f.value(0.5 * (a + b))
    worst = float(gap.min())
    return worst, worst >= -tol


# ---------------------------------------------------------------------------
# regularization, sublevel projection, growth condition


class RegularizedPotential(Potential):
    """Finite, convex, C^1 modification of a margin-form potential.

    ``f_eta = phi_eta(margin)`` where ``phi_eta`` equals ``phi`` for margins at
    least ``eta`` and continues linearly (tangent at ``eta``) below it.
    """

    singular = False

    def __init__(self, base, eta):
        self.base = base
        self.eta = float(eta)
        self.dim = base.dim
        prof = base.profile
        self._phi_eta = float(prof.phi(np.array(self.eta)))
        self._dphi_eta = float(prof.dphi(np.array(self.eta)))

    @property
    def interior_anchor(self):
        return self.base.interior_anchor

    def bounding_box(self):
        return self.base.bounding_box()

    def margin(self, z):
        return self.base.margin(z)

    def _split(self, z):
        z = _points(z, self.dim)
        m = self.base.margin(z)
        return z, m, m >= self.eta

    def value(self, z):
        z, m, core = self._split(z)
        lin = self._phi_eta + self._dphi_eta * (m - self.eta)
        out = np.array(lin, dtype=float)
        if np.any(core):
            out[core] = self.base.value(z[core])
        return out

    def gradient(self, z):
        z, m, core = self._split(z)
        out = self._dphi_eta * self.base.margin_oracle.gradient(z)
        if np.any(core):
            out[core] = self.base.gradient(z[core])
        return out

    def hessian(self, z):
        z, m, core = self._split(z)
        out = np.zeros(z.shape + (self.dim,))
        if np.any(~core):
            out[~core] = self._dphi_eta * self.base.margin_oracle.hessian(z[~core])
        if np.any(core):
            out[core] = self.base.hessian(z[core])
        return out


def regularize(f, eta):
    if not (hasattr(f, "profile") and hasattr(f, "margin_oracle")):
        raise NotMarginForm(f"{type(f).__name__} is not written as phi(margin)")
    m_max = f.margin_oracle.max_margin
    if not 0.0 < eta < m_max:
        raise InvalidEta(f"eta must lie in (0, {m_max}), got {eta!r}")
    return RegularizedPotential(f, eta)


def _prox_newton(f, z, mu, w0, tol=1e-13, max_iter=200):
    """Minimize ``|w - z|^2 / 2 + mu f(w)`` by damped Newton from feasible ``w0``.

    Needs ``f`` twice differentiable along the path; raises
    :class:`ProjectionFailed` when the iteration stalls.
    """
    k = f.dim
    w = np.array(w0, dtype=float)

    def obj(w):
        return 0.5 * float(np.sum((w - z) ** 2)) + mu * float(f.value(w))

    cur = obj(w)
    for _ in range(max_iter):
        g = w - z + mu * f.gradient(w)
        if np.linalg.norm(g) <= tol * (1.0 + np.linalg.norm(z) + mu):
            return w
        with np.errstate(all="ignore"):
            H = np.eye(k) + mu * f.hessian(w)
        if not np.all(np.isfinite(H)):
            # Non-smooth point of the margin (degenerate eigenvalues).
            H = np.eye(k)
        d = -np.linalg.solve(H, g)
        t = 1.0
        while True:
            trial = w + t * d
            val = obj(trial)
            if val <= cur + 1e-4 * t * float(g @ d):
                break
            # Below round-off in the objective, fall back on the gradient norm.
            if np.isfinite(val) and abs(val - cur) <= 1e-14 * (1.0 + abs(cur)):
                g_new = trial - z + mu * f.gradient(trial)
                if np.linalg.norm(g_new) < 0.5 * np.linalg.norm(g):
                    break
            t *= 0.5
            if t < 1e-16:
                raise ProjectionFailed(
                    f"proximal Newton line search stalled at mu = {mu:.3e} "
                    f"(stationarity {np.linalg.norm(g):.3e}); f may be non-smooth here"
                )
        w, cur = trial, val
    raise ProjectionFailed(f"proximal Newton did not converge in {max_iter} steps at mu = {mu:.3e}")


def project_sublevel(f, eta, z, tol=1e-10):
    """Euclidean projection of ``z`` onto the closure of ``{f < eta}``.

    Solves the KKT system ``w + mu grad f(w) = z``, ``f(w) = eta`` by
    root-finding in the multiplier ``mu``; each ``w(mu)`` is a damped Newton
    solve of the proximal problem.
    """
    z = np.asarray(z, dtype=float)
    fz = float(f.value(z))
    # Points within the constraint tolerance are already projections.
    if fz <= eta + tol:
        return z.copy()
    anchor = np.asarray(f.interior_anchor, dtype=float)
    if float(f.value(anchor)) >= eta:
        w_min = _prox_newton(f, anchor, 1e8, anchor)
        if float(f.value(w_min)) >= eta:
            raise EmptySublevel(f"sublevel set {{f < {eta}}} is empty")
        anchor = w_min

    # Start on the segment towards z, away from the (possibly degenerate) anchor.
    start = anchor
    for t in 0.5 ** np.arange(1, 60):
        trial = anchor + t * (z - anchor)
        if float(f.value(trial)) < np.inf:
            start = trial
            break
    last = {"w": start}

    def w_of(mu):
        w = _prox_newton(f, z, mu, last["w"])
        last["w"] = w
        return w

    def h(mu):
        return float(f.value(w_of(mu))) - eta

    # Initial multiplier scaled so the first prox step moves a fraction of |z - start|.
    mu_lo, mu_hi = None, float(np.linalg.norm(z - start) / (1.0 + np.linalg.norm(f.gradient(start))))
    if h(mu_hi) > 0:
        mu_lo = mu_hi
        while True:
            mu_hi *= 2.0
            if mu_hi > 1e30:
                raise ProjectionFailed("could not bracket the KKT multiplier from above")
            if h(mu_hi) <= 0:
                break
            mu_lo = mu_hi
    else:
        mu_lo = mu_hi
        while h(mu_lo) <= 0:
            mu_hi = mu_lo
            mu_lo *= 0.5
            if mu_lo < 1e-300:
                raise ProjectionFailed("could not bracket the KKT multiplier from below")
    last["w"] = w_of(mu_hi)
    try:
        mu = brentq(h, mu_lo, mu_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (RuntimeError, ValueError) as exc:
        raise ProjectionFailed(f"multiplier root-finding failed on [{mu_lo}, {mu_hi}]: {exc}") from exc
    w = w_of(mu)
    resid = abs(float(f.value(w)) - eta)
    if resid > tol:
        raise ProjectionFailed(f"constraint residual {resid:.3e} exceeds {tol:g} (mu = {mu:.6e})")
    return w


def sample_interior(f, n, rng, min_margin=1e-4, max_margin=np.inf):
    """Uniform samples of ``{min_margin <= margin <= max_margin}`` by rejection."""
    lo, hi = f.bounding_box()
    out = []
    have = 0
    while have < n:
        batch = rng.uniform(lo, hi, size=(max(4 * (n - have), 256), len(lo)))
        m = f.margin(batch)
        keep = batch[(m >= min_margin) & (m <= max_margin)]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


@dataclass(frozen=True)
class GrowthLogReport:
    gamma: float
    c_const: float
    n_samples: int
    worst_violation: float
    worst_point: tuple
    worst_direction: tuple

    @property
    def passed(self):
        return self.worst_violation >= 0.0


def check_growth_log(f, gamma, c_const, n_samples=2000, seed=0, min_margin=1e-4, max_margin=np.inf):
    """Sample ``C|y|^2 + y^T D^2f(z) y - gamma |Df(z).y|^2`` over K.

    Points are uniform on ``{min_margin <= margin <= max_margin}`` and ``y``
    is uniform on the unit sphere.  A negative ``worst_violation`` is a
    counterexample; a non-negative one is evidence, not proof.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    z = sample_interior(f, n_samples, rng, min_margin, max_margin)
    y = rng.standard_normal(z.shape)
    y /= np.linalg.norm(y, axis=1, keepdims=True)
    H = f.hessian(z)
    g = f.gradient(z)
    lhs = c_const + np.einsum("ni,nij,nj->n", y, H, y)
    rhs = gamma * np.einsum("ni,ni->n", g, y) ** 2
    slack = lhs - rhs
    i = int(np.argmin(slack))
    return GrowthLogReport(
        float(gamma), float(c_const), int(n_samples), float(slack[i]), tuple(z[i]), tuple(y[i])
    )
