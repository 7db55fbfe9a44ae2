import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from singreg.energy import Field, Grid
from singreg.errors import BallOutsideDomain, StepTooLarge, TooFewCells
from singreg.potentials import log_ball
from singreg.regularity import (
    REGULAR,
    SKIPPED,
    ball_means,
    blowup_rescale,
    box_dimension,
    calibrate,
    clamp_truncate,
    classify_regular,
    cutoff,
    decay_sweep,
    default_scales,
    difference_quotient,
    dyadic_radii,
    excess,
    excess_at,
    h2_estimate,
    node_excess,
)


def affine_field(grid, a, A):
    return Field.from_function(grid, lambda x: np.asarray(a) + x @ np.asarray(A).T)


def smooth_field(grid, seed):
    """Sum of a few random plane waves, k = 2."""
    rng = np.random.default_rng(seed)
    freq = rng.normal(size=(3, grid.n)) * 2
    amp = rng.normal(size=(3, 2)) * 0.3
    phase = rng.uniform(0, 2 * np.pi, size=3)
    return Field.from_function(grid, lambda x: np.sin(x @ freq.T + phase) @ amp)


# -- ball means and excess -------------------------------------------------------------


def test_ball_means_of_affine_and_constant():
    grid = Grid.unit(2, 33)
    A = np.array([[1.0, -2.0], [0.5, 0.25]])
    a = np.array([0.3, -0.1])
    x = np.array([0.5, 0.4])
    um, Dum = ball_means(affine_field(grid, a, A), x, 0.2)
    assert np.allclose(Dum, A, atol=1e-12)
    centers = grid.cell_centers()
    inside = np.sum((centers - x) ** 2, axis=-1) <= 0.04
    assert np.allclose(um, a + A @ centers[inside].mean(axis=0), atol=1e-12)
    cm, cD = ball_means(Field(grid, np.full((33, 33, 2), 1.5)), x, 0.2)
    assert np.allclose(cm, 1.5) and not np.any(cD)


def test_ball_mean_of_sine():
    grid = Grid.unit(1, 513)
    field = Field.from_function(grid, lambda x: np.sin(np.pi * x[..., 0]))
    um, _ = ball_means(field, [0.5], 0.25)
    exact = quad(lambda t: np.sin(np.pi * t), 0.25, 0.75)[0] / 0.5
    assert abs(um[0] - exact) <= 1e-4


def test_ball_errors():
    field = Field(Grid.unit(2, 17), np.zeros((17, 17)))
    with pytest.raises(TooFewCells):
        ball_means(field, [0.5, 0.5], 0.1)
    with pytest.raises(BallOutsideDomain):
        ball_means(field, [0.2, 0.5], 0.25)


def test_affine_excess_is_root_r():
    grid = Grid.unit(2, 65)
    field = affine_field(grid, [0.1], [[2.0, -1.0]])
    rep = excess(field, [0.5, 0.5], dyadic_radii(0.4, 4))
    assert rep.radii == [0.4, 0.2, 0.1, 0.05]
    assert np.allclose(rep.deviation, 0.0, atol=1e-12)
    assert np.allclose(rep.excess, np.sqrt(rep.radii), rtol=0, atol=1e-12)


def sampled_half_width(grid, x, r):
    """Half the length covered by the 1-D cells whose centers lie in ``[x - r, x + r]``."""
    centers = grid.cell_centers()[..., 0]
    return 0.5 * grid.h[0] * np.count_nonzero(np.abs(centers - x) <= r)


def test_quadratic_deviation_is_second_moment():
    # Balls are quantized to whole cells, so the closed form uses the sampled half-width.
    grid = Grid.unit(1, 1025)
    field = Field.from_function(grid, lambda x: 0.5 * x[..., 0] ** 2)
    for r in (0.4, 0.2, 0.1):
        _, _, dev, _, _ = excess_at(field, [0.5], r)
        rq = sampled_half_width(grid, 0.5, r)
        assert abs(rq - r) <= grid.h[0] / 2
        assert dev == pytest.approx(rq * rq / 3, abs=grid.h[0] ** 2)


def test_smooth_field_deviation_decreases():
    field = smooth_field(Grid.unit(2, 129), 3)
    rep = excess(field, [0.5, 0.5], dyadic_radii(0.4, 5))
    assert np.all(np.diff(rep.deviation) < 0)


@settings(max_examples=20)
@given(st.integers(0, 10**6), st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_excess_properties(seed, coeffs):
    grid = Grid.unit(2, 33)
    field = smooth_field(grid, seed)
    shifted = field.with_values(field.values + affine_field(grid, coeffs[:2], np.reshape(coeffs[2:], (2, 2))).values)
    for r in (0.3, 0.15):
        e, root, dev, _, _ = excess_at(field, [0.45, 0.55], r)
        assert dev >= 0 and e >= root == math.sqrt(r)
        assert excess_at(shifted, [0.45, 0.55], r)[2] == pytest.approx(dev, abs=1e-12)


def test_excess_csv(tmp_path):
    rep = excess(smooth_field(Grid.unit(2, 33), 1), [0.5, 0.5], [0.25, 0.125])
    rep.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "r,E,r_half_term,deviation" and len(lines) == 3
    assert float(lines[1].split(",")[1]) == rep.excess[0]


def test_node_excess_matches_single_ball():
    field = smooth_field(Grid.unit(2, 41), 7)
    r = 0.2
    E, um, dm, ok = node_excess(field, r)
    coords = field.grid.coords()
    for idx in [(20, 20), (8, 8), (32, 12), (15, 27)]:
        e, _, _, u, D = excess_at(field, coords[idx], r)
        assert ok[idx]
        assert E[idx] == pytest.approx(e, abs=1e-12)
        assert np.allclose(um[idx], u, atol=1e-12) and np.allclose(dm[idx], D, atol=1e-12)
    assert not ok[2, 20] and math.isnan(E[2, 20])


# -- decay ---------------------------------------------------------------------------------


def test_decay_of_affine_field_is_one():
    field = affine_field(Grid.unit(2, 129), [0.0, 1.0], [[1.0, 2.0], [3.0, 4.0]])
    assert decay_sweep(field, [0.5, 0.5], 0.4, 0.125) == pytest.approx(1.0, abs=1e-10)


def test_decay_tau_range():
    field = smooth_field(Grid.unit(2, 65), 2)
    for tau in (0.0, 0.2, -0.1):
        with pytest.raises(ValueError):
            decay_sweep(field, [0.5, 0.5], 0.4, tau)


# -- transforms ------------------------------------------------------------------------------


def test_blowup_of_affine_is_zero():
    field = affine_field(Grid.unit(2, 65), [0.2, 0.1], [[1.0, -0.5], [0.3, 0.7]])
    out = blowup_rescale(field, [0.5, 0.5], 0.25, 0.1)
    assert out.grid.origin == (-1.0, -1.0) and out.grid.upper == pytest.approx((1.0, 1.0))
    assert np.abs(out.values).max() <= 1e-11


def test_blowup_of_quadratic_matches_closed_form():
    grid = Grid.unit(1, 2049)
    field = Field.from_function(grid, lambda x: 0.5 * x ** 2)
    r, lam = 0.2, 0.5
    out = blowup_rescale(field, [0.5], r, lam)
    z = out.grid.axes()[0]
    rq = sampled_half_width(grid, 0.5, r)
    expected = (r * r * z ** 2 / 2 - rq * rq / 6) / (lam * r)
    assert np.abs(out.values[:, 0] - expected).max() <= 1e-4


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_blowup_has_zero_means(seed):
    field = smooth_field(Grid.unit(2, 129), seed)
    out = blowup_rescale(field, [0.5, 0.5], 0.3, 1.0)
    um, Dum = ball_means(out, [0.0, 0.0], 1.0)
    assert np.abs(um).max() <= 1e-3 and np.abs(Dum).max() <= 1e-3
    with pytest.raises(ValueError):
        blowup_rescale(field, [0.5, 0.5], 0.3, 0.0)


def test_clamp_truncate():
    grid = Grid.unit(1, 9)
    field = Field(grid, np.linspace(-0.5, 0.5, 9))
    assert np.array_equal(clamp_truncate(field, 1.0).values, field.values)
    assert np.all(clamp_truncate(Field(grid, np.full(9, 4.0)), 2.0).values == 2.0)
    rng = np.random.default_rng(4)
    a, b = Field(grid, rng.normal(size=9) * 3), Field(grid, rng.normal(size=9) * 3)
    ca = clamp_truncate(a, 1.5)
    assert np.array_equal(clamp_truncate(ca, 1.5).values, ca.values)
    assert np.all(np.abs(ca.values - clamp_truncate(b, 1.5).values) <= np.abs(a.values - b.values))
    with pytest.raises(ValueError):
        clamp_truncate(a, 0.0)


def test_difference_quotient_of_affine():
    grid = Grid((9, 7), (0.125, 0.25))
    A = np.array([[2.0, -1.0], [0.5, 3.0]])
    for ax in (0, 1):
        for s in (1, 2, -3):
            dq = difference_quotient(affine_field(grid, [1.0, 1.0], A), ax, s)
            assert np.allclose(dq.values, A[:, ax], atol=1e-12)
            assert dq.grid.shape[ax] == grid.shape[ax] - abs(s)
    with pytest.raises(StepTooLarge):
        difference_quotient(affine_field(grid, [0, 0], A), 1, 7)
    with pytest.raises(StepTooLarge):
        difference_quotient(affine_field(grid, [0, 0], A), 0, 0)
    with pytest.raises(StepTooLarge):
        difference_quotient(affine_field(grid, [0, 0], A), 0, 8)


@pytest.mark.parametrize("s", [1, 2, 4])
def test_summation_by_parts(s):
    rng = np.random.default_rng(s)
    grid = Grid((33, 17), (1 / 32, 1 / 16))
    a = Field(grid, rng.normal(size=(33, 17, 2)))
    bvals = rng.normal(size=(33, 17, 2))
    bvals[:s] = 0.0
    bvals[-s:] = 0.0
    b = Field(grid, bvals)
    lhs = np.sum(difference_quotient(a, 0, s).values * b.values[: 33 - s])
    rhs = -np.sum(a.values[s:] * difference_quotient(b, 0, -s).values)
    assert abs(lhs - rhs) <= 1e-12 * np.sum(np.abs(a.values)) * np.abs(bvals).max() / (s * grid.h[0])


def test_backward_of_forward_is_second_difference():
    grid = Grid.unit(1, 17)
    u = np.random.default_rng(5).normal(size=17)
    h = grid.h[0]
    dd = difference_quotient(difference_quotient(Field(grid, u), 0, 1), 0, -1)
    assert dd.grid.origin[0] == pytest.approx(h)
    assert np.allclose(dd.values[:, 0], (u[2:] - 2 * u[1:-1] + u[:-2]) / h ** 2, rtol=1e-12)


# -- H^2 estimate ------------------------------------------------------------------------------


def test_h2_of_affine_is_zero():
    rep = h2_estimate(affine_field(Grid.unit(2, 33), [0.0], [[1.0, 2.0]]), 0.3, 0.6, [1, 2, 4])
    assert np.all(np.abs(rep.energies) <= 1e-18)
    assert rep.stability_ratio == 1.0


def test_h2_of_sine_matches_integral(tmp_path):
    grid = Grid.unit(1, 1025)
    field = Field.from_function(grid, lambda x: np.sin(np.pi * x))
    inner, outer = 0.4, 0.8
    rep = h2_estimate(field, inner, outer, [1, 2, 4])

    def xi(x):
        return float(cutoff(grid, np.array([[x]]), inner, outer)[0])

    exact = quad(lambda x: xi(x) ** 2 * np.pi ** 4 * np.sin(np.pi * x) ** 2, 0, 1, points=[0.1, 0.3, 0.7, 0.9])[0]
    assert np.allclose(rep.energies[0], exact, rtol=0.05)
    assert rep.stability_ratio <= 1.05
    rep.to_csv(tmp_path / "h2.csv")
    lines = (tmp_path / "h2.csv").read_text().splitlines()
    assert lines[0] == "axis,h_steps,h,energy" and len(lines) == 4


def test_h2_validation():
    field = Field(Grid.unit(1, 9), np.zeros(9))
    with pytest.raises(ValueError):
        h2_estimate(field, 0.6, 0.3, [1])
    with pytest.raises(StepTooLarge):
        h2_estimate(field, 0.3, 0.6, [8])


def test_cutoff_shape():
    grid = Grid.unit(2, 5)
    pts = np.array([[0.5, 0.5], [0.5, 0.7], [0.5, 0.85], [0.95, 0.5]])
    assert np.allclose(cutoff(grid, pts, 0.4, 0.8), [1.0, 1.0, 0.25, 0.0])


# -- box dimension --------------------------------------------------------------------------------


def test_box_dimension_examples():
    scales = [1, 2, 4, 8]
    full = np.ones((65, 65), dtype=bool)
    assert box_dimension(full, scales).dimension == pytest.approx(2.0, abs=1e-12)
    single = np.zeros((65, 65), dtype=bool)
    single[20, 41] = True
    assert box_dimension(single, scales).dimension == pytest.approx(0.0, abs=1e-12)
    line = np.zeros((65, 65), dtype=bool)
    line[30, :] = True
    dim = box_dimension(line, scales)
    assert dim.dimension == pytest.approx(1.0, abs=1e-12)
    assert dim.counts == [64, 32, 16, 8]
    empty = box_dimension(np.zeros((65, 65), dtype=bool), scales)
    assert empty.dimension == 0.0 and empty.flag == "EmptySet"
    assert default_scales((65, 33)) == [1, 2, 4, 8, 16, 32]


def test_box_dimension_validation():
    with pytest.raises(ValueError):
        box_dimension(np.ones((9, 9)), [1, 2])
    with pytest.raises(ValueError):
        box_dimension(np.ones((9, 9)), [1, 3, 4])


# -- classification ---------------------------------------------------------------------------------


def pinned_field(nodes=65, plateau=0.1, margin=1e-9):
    """Scalar field at 0.2 with a disk of radius ``plateau`` held at ``1 - margin``."""
    grid = Grid.unit(2, nodes)
    x = grid.coords()
    d = np.linalg.norm(x - 0.5, axis=-1)
    return Field(grid, np.where(d <= plateau, 1.0 - margin, 0.2))


def test_affine_field_is_regular():
    grid = Grid.unit(2, 65)
    field = affine_field(grid, [0.1], [[0.2, -0.1]])
    rep = classify_regular(field, log_ball(1), L=2.0, tau=0.125, eta=1.0, r0=0.25)
    assert not rep.suspect_mask.any()
    assert set(np.unique(rep.status)) == {REGULAR, SKIPPED}
    assert rep.dimension.flag == "EmptySet"
    coords = grid.coords()
    inner = np.all((coords >= 0.25 - 1e-12) & (coords <= 0.75 + 1e-12), axis=-1)
    assert np.array_equal(rep.regular_mask, inner)


def test_pinned_field_is_locally_suspect(tmp_path):
    field = pinned_field()
    rep = classify_regular(field, log_ball(1), L=5.0, tau=0.125, eta=1.0, r0=0.0625)
    assert rep.suspect_mask.any()
    d = np.linalg.norm(field.grid.coords() - 0.5, axis=-1)
    # plateau radius plus r0 plus one cell diagonal
    assert d[rep.suspect_mask].max() <= 0.1 + 0.0625 + math.sqrt(2) / 64
    assert "L:f" in rep.reasons[np.ravel_multi_index((32, 32), field.grid.shape)]
    rep.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "node,x0,x1,status,reason" and len(lines) == 65 * 65 + 1


def test_classification_is_deterministic_and_monotone_in_eta():
    field = smooth_field(Grid.unit(2, 65), 11)
    args = dict(L=10.0, tau=0.125, r0=0.25)
    a = classify_regular(field, log_ball(2), eta=0.9, **args)
    b = classify_regular(field, log_ball(2), eta=0.9, **args)
    assert np.array_equal(a.status, b.status) and a.reasons == b.reasons
    previous = None
    for eta in (0.5, 0.6, 0.8, 1.0, 2.0):
        reg = classify_regular(field, log_ball(2), eta=eta, **args).regular_mask
        if previous is not None:
            assert np.all(reg >= previous)
        previous = reg


def test_classify_validation():
    field = smooth_field(Grid.unit(2, 33), 0)
    with pytest.raises(ValueError):
        classify_regular(field, log_ball(2), L=1, tau=0.2, eta=1, r0=0.25)
    with pytest.raises(ValueError):
        classify_regular(field, log_ball(2), L=1, tau=0.1, eta=0, r0=0.25)
    with pytest.raises(TooFewCells):
        classify_regular(field, log_ball(2), L=1, tau=0.1, eta=1, r0=0.1)


def test_calibrated_thresholds_leave_smooth_field_regular():
    field = smooth_field(Grid.unit(2, 65), 12)
    field = field.with_values(0.3 * field.values)
    cal = calibrate(field, log_ball(2), 0.125, 0.25)
    assert cal.eta == pytest.approx(2 * cal.max_excess)
    rep = classify_regular(field, log_ball(2), L=cal.L, tau=0.125, eta=cal.eta, r0=0.25, ratio_cap=cal.ratio_cap)
    assert not rep.suspect_mask.any() and rep.regular_mask.any()
