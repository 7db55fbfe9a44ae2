"""Product quadrature on the unit sphere.

Gauss-Legendre nodes in ``cos(theta)`` crossed with equispaced azimuths
(offset by half a step).  With an even number of azimuths the node set is
closed under ``p -> -p``, which the head-to-tail symmetric integrands of the
Ball-Majumdar potential rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RuleTooCoarse

DEFAULT_N_THETA = 24
DEFAULT_N_PHI = 48


@dataclass(frozen=True, eq=False)
class SphereRule:
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        for arr in (self.nodes, self.weights):
            arr.setflags(write=False)

    def __len__(self):
        return len(self.weights)

    def integrate(self, values):
        """Integrate sampled values; the node axis must come first."""
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))

    def integrate_function(self, func):
        return self.integrate(func(self.nodes))

    def second_moment(self, density=None):
        """``sum_i w_i rho_i p_i p_i^T`` (``rho = 1`` when omitted)."""
        w = self.weights if density is None else self.weights * density
        return np.einsum("i,ia,ib->ab", w, self.nodes, self.nodes)


def product_rule(n_theta=DEFAULT_N_THETA, n_phi=DEFAULT_N_PHI):
    """Gauss-Legendre x trapezoid rule with ``n_theta * n_phi`` nodes.

    Exact for spherical polynomials of degree below ``min(2 n_theta, n_phi)``.
    """
    n_theta, n_phi = int(n_theta), int(n_phi)
    if n_theta < 2 or n_phi < 4:
        raise RuleTooCoarse(f"need n_theta >= 2 and n_phi >= 4, got ({n_theta}, {n_phi})")
    if n_phi % 2:
        raise RuleTooCoarse(f"n_phi must be even for antipodal symmetry, got {n_phi}")
    x, wx = np.polynomial.legendre.leggauss(n_theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    s = np.sqrt(1.0 - x * x)
    nodes = np.stack(
        [
            np.outer(s, np.cos(phi)).ravel(),
            np.outer(s, np.sin(phi)).ravel(),
            np.repeat(x, n_phi),
        ],
        axis=1,
    )
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    weights = np.repeat(wx, n_phi) * (2.0 * np.pi / n_phi)
    return SphereRule(nodes, weights)
