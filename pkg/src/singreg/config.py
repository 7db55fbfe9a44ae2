"""Experiment configuration: an INI file with four sections plus dotted overrides.

Example::

    [problem]
    n = 1
    nodes = 65
    k = 1
    density = dirichlet
    potential = log_ball
    boundary = ramp
    boundary.start = -0.5
    boundary.end = 0.5

    [solver]
    tol = 1e-8

Component parameters live next to the component name as ``name.param``
keys.  ``--set problem.boundary.end=0.9`` overrides one key.
"""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass

import numpy as np

from .energy import (
    ConvexGrowthDensity,
    DirichletDensity,
    Field,
    Grid,
    z_dependent_density,
)
from .errors import ConfigError
from .minimize import SolveOptions, geometric_schedule
from .potentials import BallMargin, ZeroPotential, bm_potential, inverse_square, ldg_polynomial, log_ball
from .qtensor import components_from_matrices
from .sphere_quadrature import product_rule

SECTIONS = ("problem", "solver", "diagnostics", "output")

DEFAULTS = {
    "problem": {
        "n": "1",
        "nodes": "65",
        "length": "1.0",
        "k": "1",
        "density": "dirichlet",
        "potential": "log_ball",
        "boundary": "ramp",
        "coefficient": "identity",
    },
    "solver": {
        "tol": "1e-8",
        "max_iter": "5000",
        "method": "gd",
        "metric": "curvature",
        "fraction_to_boundary": "0.95",
        "backtrack": "0.5",
        "armijo": "1e-4",
        "memory": "8",
        "eta0": "0.2",
        "eta_count": "7",
        "eta_ratio": "0.5",
    },
    "diagnostics": {
        "centers": "",
        "radii": "0.25,0.125,0.0625",
        "tau": "0.125",
        "L": "10.0",
        "eta": "1.0",
        "r0": "0.25",
        "ratio_cap": "10.0",
        "h_steps": "1,2,4",
        "inner_frac": "0.3",
        "outer_frac": "0.6",
        "box_scales": "",
        "growth_r": "0.75",
        "growth_gamma": "auto",
        "growth_c": "0.0",
        "growth_samples": "2000",
        "psi_steps": "21",
        "psi_min_margin": "0.02",
        "calibration_safety": "2.0",
    },
    "output": {"dir": "out", "seed": "0"},
}


# ---------------------------------------------------------------------------
# registries: name -> (factory, default parameters)


def _dirichlet(k, n, scale):
    return DirichletDensity(scale)


def _convex_growth(k, n, alpha):
    return ConvexGrowthDensity(alpha)


def _z_dependent(k, n, beta):
    return z_dependent_density(beta, k=k)


DENSITIES = {
    "dirichlet": (_dirichlet, {"scale": 1.0}),
    "convex_growth": (_convex_growth, {"alpha": 0.5}),
    "z_dependent": (_z_dependent, {"beta": 0.5}),
}


def _log_ball(k, core_radius):
    return log_ball(k, core_radius)


def _inverse_square_ball(k, gamma):
    return inverse_square(BallMargin(k), gamma)


def _ldg(k, a, b, c):
    if k != 5:
        raise ConfigError("problem.k: the ldg potential needs k = 5")
    return ldg_polynomial(a, b, c)


def _ball_majumdar(k, n_theta, n_phi, kappa, T):
    if k != 5:
        raise ConfigError("problem.k: the ball_majumdar potential needs k = 5")
    return bm_potential(product_rule(int(n_theta), int(n_phi)), kappa, T)


def _zero(k):
    return ZeroPotential(k)


POTENTIALS = {
    "log_ball": (_log_ball, {"core_radius": 0.5}),
    "inverse_square_ball": (_inverse_square_ball, {"gamma": 0.1}),
    "ldg": (_ldg, {"a": -0.2, "b": -1.0, "c": 1.0}),
    "ball_majumdar": (_ball_majumdar, {"n_theta": 24, "n_phi": 48, "kappa": 0.0, "T": 1.0}),
    "zero": (_zero, {}),
}


def _affine(x, k, slope, offset):
    n = x.shape[-1]
    A = np.resize(np.asarray(slope, dtype=float), k * n).reshape(k, n)
    b = np.resize(np.asarray(offset, dtype=float), k)
    return x @ A.T + b


def _sinusoidal(x, k, amplitude, frequency):
    t = frequency * x.sum(axis=-1)
    return np.stack([amplitude * np.sin(t + 0.5 * i) for i in range(k)], axis=-1)


def _ramp(x, k, start, end):
    """Linear in the first coordinate from ``start`` to ``end`` in component 0."""
    t = (x[..., 0] - x[..., 0].min()) / max(np.ptp(x[..., 0]), 1e-300)
    out = np.zeros(x.shape[:-1] + (k,))
    out[..., 0] = start + (end - start) * t
    return out


def _harmonic(x, k):
    out = np.zeros(x.shape[:-1] + (k,))
    y = x[..., 1] if x.shape[-1] > 1 else 0.0
    out[..., 0] = x[..., 0] ** 2 - y ** 2
    return out


def _uniaxial_rotation(x, k, s, turns):
    if k != 5:
        raise ConfigError("problem.boundary: uniaxial_rotation needs k = 5")
    ang = 2.0 * math.pi * turns * x[..., 0]
    d = np.stack([np.sin(ang), np.zeros_like(ang), np.cos(ang)], axis=-1)
    m = s * (d[..., :, None] * d[..., None, :] - np.eye(3) / 3.0)
    return components_from_matrices(m)


BOUNDARIES = {
    "affine": (_affine, {"slope": 0.3, "offset": 0.0}),
    "sinusoidal": (_sinusoidal, {"amplitude": 0.5, "frequency": 3.0}),
    "ramp": (_ramp, {"start": -0.5, "end": 0.5}),
    "harmonic": (_harmonic, {}),
    "uniaxial_rotation": (_uniaxial_rotation, {"s": 0.5, "turns": 0.25}),
}

COEFFICIENTS = ("identity", "coupled")


# ---------------------------------------------------------------------------
# parsing


def _floats(text):
    text = text.strip()
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()] if text else []


def _value(text):
    vals = _floats(text)
    return vals[0] if len(vals) == 1 else vals


@dataclass
class ExperimentConfig:
    sections: dict

    # -- access ------------------------------------------------------------

    def get(self, section, key):
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"missing key {section}.{key}") from None

    def number(self, section, key, kind=float):
        raw = self.get(section, key)
        try:
            return kind(float(raw)) if kind is int else kind(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: cannot read {raw!r} as {kind.__name__}") from None

    def numbers(self, section, key):
        try:
            return _floats(self.get(section, key))
        except ValueError:
            raise ConfigError(f"{section}.{key}: expected a comma-separated list of numbers") from None

    def to_text(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for sec in SECTIONS:
            cp[sec] = dict(sorted(self.sections[sec].items()))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @property
    def seed(self):
        return self.number("output", "seed", int)

    @property
    def out_dir(self):
        return self.get("output", "dir")

    # -- assembly -----------------------------------------------------------

    def _params(self, slot, registry):
        name = self.get("problem", slot)
        if name not in registry:
            raise ConfigError(f"problem.{slot}: unknown name {name!r} (known: {', '.join(sorted(registry))})")
        factory, defaults = registry[name]
        params = dict(defaults)
        prefix = f"{slot}."
        for key, raw in self.sections["problem"].items():
            if key.startswith(prefix):
                pname = key[len(prefix):]
                if pname not in defaults:
                    raise ConfigError(f"problem.{key}: {name!r} has no parameter {pname!r}")
                try:
                    params[pname] = _value(raw)
                except ValueError:
                    raise ConfigError(f"problem.{key}: cannot read {raw!r}") from None
        return factory, params

    @property
    def k(self):
        return self.number("problem", "k", int)

    def grid(self):
        n = self.number("problem", "n", int)
        nodes = [int(v) for v in self.numbers("problem", "nodes")]
        if len(nodes) == 1:
            nodes = nodes * n
        if len(nodes) != n:
            raise ConfigError("problem.nodes: give one count or one per axis")
        length = self.number("problem", "length")
        try:
            return Grid(tuple(nodes), tuple(length / (m - 1) for m in nodes))
        except ValueError as exc:
            raise ConfigError(f"problem.nodes: {exc}") from None

    def density(self):
        factory, params = self._params("density", DENSITIES)
        return factory(self.k, self.number("problem", "n", int), **params)

    def potential(self):
        factory, params = self._params("potential", POTENTIALS)
        return factory(self.k, **params)

    def boundary_field(self, grid=None):
        grid = self.grid() if grid is None else grid
        factory, params = self._params("boundary", BOUNDARIES)
        vals = factory(grid.coords(), self.k, **params)
        return Field(grid, vals)

    def coefficient(self):
        name = self.get("problem", "coefficient")
        k, n = self.k, self.number("problem", "n", int)
        eye = np.einsum("ij,ab->iajb", np.eye(k), np.eye(n))
        if name == "identity":
            return eye
        if name == "coupled":
            c = float(self.sections["problem"].get("coefficient.coupling", "0.3"))
            cross = np.zeros((k, n, k, n))
            for i in range(k):
                for j in range(k):
                    if i != j:
                        cross[i, :, j, :] = np.eye(n)
            return eye + c * cross
        raise ConfigError(f"problem.coefficient: unknown name {name!r} (known: {', '.join(COEFFICIENTS)})")

    def solve_options(self):
        try:
            return SolveOptions(
                tol=self.number("solver", "tol"),
                max_iter=self.number("solver", "max_iter", int),
                backtrack=self.number("solver", "backtrack"),
                armijo=self.number("solver", "armijo"),
                fraction_to_boundary=self.number("solver", "fraction_to_boundary"),
                method=self.get("solver", "method"),
                metric=self.get("solver", "metric"),
                memory=self.number("solver", "memory", int),
            )
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from None

    def eta_schedule(self):
        return geometric_schedule(
            self.number("solver", "eta0"), self.number("solver", "eta_count", int), self.number("solver", "eta_ratio")
        )

    def centers(self, grid):
        raw = self.get("diagnostics", "centers").strip()
        if not raw:
            mid = np.asarray(grid.origin) + 0.5 * np.asarray(grid.lengths)
            return [mid]
        out = []
        for chunk in raw.split(";"):
            pt = _floats(chunk.replace(" ", ","))
            if len(pt) != grid.n:
                raise ConfigError(f"diagnostics.centers: point {chunk.strip()!r} needs {grid.n} coordinates")
            out.append(np.array(pt))
        return out


def _known(section, key):
    if key in DEFAULTS[section]:
        return True
    if section == "problem":
        head = key.split(".", 1)[0]
        return "." in key and head in ("density", "potential", "boundary", "coefficient")
    return False


def _apply(sections, section, key, value):
    if section not in SECTIONS:
        raise ConfigError(f"{section}.{key}: unknown section {section!r}")
    if not _known(section, key):
        raise ConfigError(f"{section}.{key}: unknown key")
    sections[section][key] = value.strip()


def load_config(path=None, overrides=(), text=None):
    """Defaults, then the file (or ``text``), then ``section.key=value`` overrides."""
    sections = {s: dict(v) for s, v in DEFAULTS.items()}
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        if path is not None:
            with open(path) as fh:
                cp.read_file(fh)
        elif text is not None:
            cp.read_string(text)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    for sec in cp.sections():
        for key, value in cp[sec].items():
            _apply(sections, sec, key, value)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        lhs, value = item.split("=", 1)
        if "." not in lhs:
            raise ConfigError(f"override {lhs!r} must be a dotted key section.key")
        section, key = lhs.strip().split(".", 1)
        _apply(sections, section, key, value)
    return ExperimentConfig(sections)
