import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import coordinate_descent
from singreg.energy import DirichletDensity, DiscreteEnergy, Field, Grid, QuadraticDensity, h1_distance
from singreg.errors import BoundaryContact, InfeasibleStart, NotElliptic
from singreg.minimize import (
    CONVERGED,
    NOT_CONVERGED,
    SolveOptions,
    geometric_schedule,
    homotopy_minimize,
    minimize,
    solve_linear_elliptic,
    stiffness_matrix,
    write_homotopy_csv,
)
from singreg.potentials import ZeroPotential, log_ball


def line_problem(nodes, left, right, potential=None, density=None):
    grid = Grid.unit(1, nodes)
    de = DiscreteEnergy(density or DirichletDensity(), potential or log_ball(1), grid)
    x = grid.axes()[0]
    start = Field(grid, left + (right - left) * x)
    return de, start


def disk_problem(nodes=17, radius=0.95):
    """2-D, k=2: boundary data winds once around the circle of the given radius."""
    grid = Grid.unit(2, nodes)
    de = DiscreteEnergy(DirichletDensity(), log_ball(2), grid)
    x = grid.coords() - 0.5
    angle = np.arctan2(x[..., 1], x[..., 0])
    data = radius * np.stack([np.cos(angle), np.sin(angle)], axis=-1)
    vals = np.where(grid.face_mask()[..., None], data, 0.0)
    return de, Field(grid, vals)


def _random_start(field, rng, radius):
    v = rng.normal(size=field.values.shape)
    v *= radius * rng.uniform(0, 1, size=v.shape[:-1] + (1,)) / np.linalg.norm(v, axis=-1, keepdims=True)
    return field.with_values(np.where(field.boundary_mask[..., None], field.values, v))


def _assert_contracts(report, tol):
    assert report.status == CONVERGED
    assert report.grad_norm <= tol
    assert report.min_margin > 0
    assert np.all(np.diff(report.energy_trace) <= 0)


# -- options and reports ------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [dict(tol=0), dict(fraction_to_boundary=1.0), dict(fraction_to_boundary=0.0), dict(backtrack=1.0),
     dict(armijo=0.5), dict(method="newton"), dict(metric="mass"), dict(max_iter=-1)],
)
def test_options_validation(kwargs):
    with pytest.raises(ValueError):
        SolveOptions(**kwargs)


def test_report_serialization(tmp_path):
    de, start = line_problem(9, -0.5, 0.5)
    _, rep = minimize(de, start)
    text = rep.to_text()
    assert text.splitlines()[0] == "status: Converged"
    keys = [line.split(":")[0] for line in text.splitlines()]
    assert keys == ["status", "reason", "iterations", "grad_norm", "energy", "min_margin"]
    rep.write_trace_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,energy" and len(lines) == len(rep.energy_trace) + 1
    assert float(lines[-1].split(",")[1]) == rep.energy


# -- one-dimensional problems -----------------------------------------------------------


def test_harmonic_line_is_linear():
    de, start = line_problem(33, 0.0, 1.0, potential=ZeroPotential(1))
    rough = start.with_values(start.values + np.where(start.interior_mask, 0.3, 0.0)[:, None])
    field, rep = minimize(de, rough, SolveOptions(tol=1e-10))
    assert rep.converged and rep.grad_norm <= 1e-10
    assert np.allclose(field.values, start.values, atol=1e-10)
    assert rep.energy == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("method", ["gd", "lbfgs"])
@pytest.mark.parametrize("metric", ["curvature", "stiffness"])
def test_log_ball_line_is_odd(method, metric):
    de, start = line_problem(65, -0.5, 0.5)
    field, rep = minimize(de, start, SolveOptions(method=method, metric=metric))
    _assert_contracts(rep, 1e-8)
    u = field.values[:, 0]
    assert np.max(np.abs(u + u[::-1])) <= 1e-8
    # reflected problem solved independently
    mirrored, _ = minimize(de, start.with_values(-start.values[::-1]), SolveOptions(method=method, metric=metric))
    assert np.max(np.abs(mirrored.values[::-1, 0] + u)) <= 1e-8


def test_boundary_nodes_never_move():
    de, start = line_problem(17, -0.9, 0.3)
    field, _ = minimize(de, start)
    assert np.array_equal(field.values[[0, -1]], start.values[[0, -1]])
    assert field.grid is start.grid
    assert np.array_equal(field.boundary_mask, start.boundary_mask)


def test_grid_refinement_is_second_order():
    fields, energies = {}, {}
    for nodes in (65, 129, 257, 513):
        de, start = line_problem(nodes, -0.5, 0.5)
        fields[nodes], rep = minimize(de, start, SolveOptions(tol=1e-11))
        energies[nodes] = rep.energy
    coarse = Grid.unit(1, 65)

    def on_coarse(nodes):
        return fields[nodes].values[:: (nodes - 1) // 64]

    d1 = h1_distance(Field(coarse, on_coarse(65)), Field(coarse, on_coarse(129)))
    d2 = h1_distance(Field(coarse, on_coarse(129)), Field(coarse, on_coarse(257)))
    assert d1 / d2 == pytest.approx(4.0, rel=0.05)
    e = [energies[n] for n in (65, 129, 257, 513)]
    ratios = [(e[i] - e[i + 1]) / (e[i + 1] - e[i + 2]) for i in range(2)]
    assert ratios == pytest.approx([4.0, 4.0], rel=0.05)


def test_matches_coordinate_descent_oracle():
    de, start = line_problem(7, -0.9, 0.7)
    field, rep = minimize(de, start, SolveOptions(tol=1e-12))

    def energy(x):
        return de.value(np.concatenate([[-0.9], x, [0.7]])[:, None])

    x = coordinate_descent(energy, np.linspace(-0.9, 0.7, 7)[1:-1], [-0.999999] * 5, [0.999999] * 5)
    assert abs(energy(x) - rep.energy) <= 1e-8
    assert np.allclose(field.values[1:-1, 0], x, atol=1e-5)


def test_infeasible_start():
    de, start = line_problem(9, -0.5, 0.5)
    bad = start.values.copy()
    bad[4] = 1.0
    with pytest.raises(InfeasibleStart):
        minimize(de, start.with_values(bad))


def test_iteration_limit_returns_best_iterate():
    de, start = disk_problem(9)
    field, rep = minimize(de, start, SolveOptions(max_iter=2, metric="stiffness"))
    assert rep.status == NOT_CONVERGED and rep.iterations == 2
    assert len(rep.energy_trace) == 3
    assert de.value(field.values) == rep.energy < rep.energy_trace[0]


def test_no_free_nodes():
    de, start = line_problem(2, -0.5, 0.5)
    field, rep = minimize(de, start)
    assert rep.converged and rep.iterations == 0 and field is start


@settings(max_examples=15)
@given(st.floats(-0.99, 0.99), st.floats(-0.99, 0.99))
def test_line_solutions_stay_interior(left, right):
    de, start = line_problem(33, left, right)
    field, rep = minimize(de, start)
    _assert_contracts(rep, 1e-8)
    assert np.all(np.abs(field.values) < 1)


# -- two-dimensional problem --------------------------------------------------------------


@pytest.mark.parametrize("method", ["gd", "lbfgs"])
def test_disk_problem_uniqueness(method):
    de, start = disk_problem(17)
    rng = np.random.default_rng(21)
    opts = SolveOptions(method=method)
    sols = []
    for _ in range(2):
        field, rep = minimize(de, _random_start(start, rng, 0.9), opts)
        _assert_contracts(rep, 1e-8)
        sols.append(field)
    assert h1_distance(*sols) <= 1e-6


# -- homotopy -------------------------------------------------------------------------------


def test_schedule_helpers_and_validation():
    assert geometric_schedule(0.2, 3) == [0.2, 0.1, 0.05]
    de, start = line_problem(9, -0.5, 0.5)
    with pytest.raises(ValueError):
        homotopy_minimize(de, [0.1, 0.2], start)
    with pytest.raises(ValueError):
        homotopy_minimize(de, [0.1, 0.1], start)
    with pytest.raises(ValueError):
        homotopy_minimize(de, [], start)


def test_homotopy_inactive_when_far_from_boundary(tmp_path):
    de, start = line_problem(33, -0.3, 0.3)
    direct, _ = minimize(de, start, SolveOptions(tol=1e-10))
    assert (1 - np.abs(direct.values)).min() > 0.2
    stages = homotopy_minimize(de, [0.2, 0.1], start, SolveOptions(tol=1e-10))
    assert math.isnan(stages[0].h1_increment)
    assert stages[1].h1_increment <= 1e-9
    assert h1_distance(stages[-1].field, direct) <= 1e-9
    write_homotopy_csv(tmp_path / "h.csv", stages)
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0].startswith("eta,h1_increment") and len(rows) == 3


def test_homotopy_final_field_must_be_interior():
    # boundary data on the sphere of K itself: every regularized stage succeeds
    # but the last field still touches the boundary
    grid = Grid.unit(1, 9)
    de = DiscreteEnergy(DirichletDensity(), log_ball(1), grid)
    start = Field(grid, np.linspace(0.0, 1.0, 9))
    with pytest.raises(BoundaryContact):
        homotopy_minimize(de, [0.2, 0.1], start)


# -- constant-coefficient elliptic systems ---------------------------------------------------


def test_elliptic_harmonic_polynomial():
    grid = Grid.unit(2, 33)
    data = Field.from_function(grid, lambda x: (x[..., 0] ** 2 - x[..., 1] ** 2)[..., None])
    field, resid = solve_linear_elliptic(np.eye(2).reshape(1, 2, 1, 2), grid, data)
    assert resid <= 1e-12
    assert np.abs(field.values - data.values).max() <= 1e-3


def test_elliptic_affine_exact():
    rng = np.random.default_rng(31)
    grid = Grid((9, 7), (0.125, 0.2))
    M = rng.normal(size=(4, 4))
    coeff = (M @ M.T + 4 * np.eye(4)).reshape(2, 2, 2, 2)
    a, A = rng.normal(size=2), rng.normal(size=(2, 2))
    data = Field.from_function(grid, lambda x: a + x @ A.T)
    start = data.with_values(np.where(data.boundary_mask[..., None], data.values, 0.0))
    field, _ = solve_linear_elliptic(coeff, grid, start)
    assert np.abs(field.values - data.values).max() <= 1e-12


def test_elliptic_matches_minimize_on_coupled_system():
    coeff = np.zeros((2, 2, 2, 2))
    coeff[0, 0, 0, 0] = coeff[1, 1, 1, 1] = 2.0
    coeff[0, 1, 0, 1] = coeff[1, 0, 1, 0] = 1.5
    coeff[0, 0, 1, 1] = coeff[1, 1, 0, 0] = 0.8
    grid = Grid.unit(2, 13)
    rng = np.random.default_rng(32)
    data = Field(grid, np.where(grid.face_mask()[..., None], rng.normal(size=(13, 13, 2)), 0.0))
    field, _ = solve_linear_elliptic(coeff, grid, data, tol=1e-13)
    de = DiscreteEnergy(QuadraticDensity(coeff), ZeroPotential(2), grid)
    ref, rep = minimize(de, data, SolveOptions(tol=1e-12, metric="stiffness", method="lbfgs"))
    assert rep.converged
    assert np.abs(field.values - ref.values).max() <= 1e-10


def test_elliptic_rejects_indefinite():
    grid = Grid.unit(2, 5)
    data = Field(grid, np.zeros((5, 5, 1)))
    coeff = np.diag([1.0, -0.1]).reshape(1, 2, 1, 2)
    with pytest.raises(NotElliptic):
        solve_linear_elliptic(coeff, grid, data)


def test_stiffness_matrix_annihilates_constants():
    K = stiffness_matrix(Grid((5, 4), (0.2, 0.3)))
    assert abs(K @ np.ones(20)).max() <= 1e-12
    assert abs(K - K.T).max() == 0
