"""Grid distances, closed-form Gaussian distances, and rate fitting."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lapmc.metrics import (
    GridSpec,
    ZeroMassError,
    fit_rate,
    gaussian_hellinger,
    hellinger_numeric,
    read_rate_csv,
    tv_numeric,
    write_rate_csv,
)

# frozen closed-form values for spot checks
DH_UNIT_SHIFT = 0.4847743751796389  # N(0,1) vs N(1,1), sqrt(2 - 2 exp(-1/8))
DH_SCALE_FOUR = 0.4595058410947224  # N(0,1) vs N(0,4)
DH_DIAG_HALF_TWO = 0.33820395745152554  # N(0,diag(1/2,2)) vs N(0,I)


def _gauss_log(mean, var):
    return lambda pts: -0.5 * (np.atleast_2d(pts)[:, 0] - mean) ** 2 / var


# ---------------------------------------------------------------------------
# closed form


def test_gaussian_hellinger_frozen_values():
    assert gaussian_hellinger([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(
        DH_UNIT_SHIFT, abs=1e-15
    )
    assert gaussian_hellinger([0.0], [[1.0]], [0.0], [[4.0]]) == pytest.approx(
        DH_SCALE_FOUR, abs=1e-15
    )
    got = gaussian_hellinger(
        [0.0, 0.0], np.diag([0.5, 2.0]), [0.0, 0.0], np.eye(2)
    )
    assert got == pytest.approx(DH_DIAG_HALF_TWO, abs=1e-15)


def test_gaussian_hellinger_is_scale_invariant_in_n():
    # dividing both covariances by n leaves the distance unchanged
    for n in (1.0, 100.0, 1e6):
        got = gaussian_hellinger(
            [0.0, 0.0], np.diag([0.5, 2.0]) / n, [0.0, 0.0], np.eye(2) / n
        )
        assert got == pytest.approx(DH_DIAG_HALF_TWO, abs=1e-12)


def test_gaussian_hellinger_basic_properties():
    a, ca = [0.3, -1.0], [[1.0, 0.2], [0.2, 2.0]]
    b, cb = [-0.5, 0.4], [[0.5, 0.0], [0.0, 0.7]]
    d_ab = gaussian_hellinger(a, ca, b, cb)
    d_ba = gaussian_hellinger(b, cb, a, ca)
    assert d_ab == pytest.approx(d_ba, rel=1e-14)
    assert 0.0 < d_ab < np.sqrt(2.0)
    assert gaussian_hellinger(a, ca, a, ca) == 0.0
    # far apart means the bound sqrt(2) is approached
    assert gaussian_hellinger([0.0], [[1.0]], [1e6], [[1.0]]) == pytest.approx(
        np.sqrt(2.0)
    )


def test_gaussian_hellinger_survives_tiny_covariances():
    # log-space determinants keep extreme scales from under/overflowing
    got = gaussian_hellinger([0.0], [[1e-300]], [0.0], [[4e-300]])
    assert got == pytest.approx(DH_SCALE_FOUR, rel=1e-10)


def test_gaussian_hellinger_rejects_indefinite_inputs():
    with pytest.raises(ValueError):
        gaussian_hellinger([0.0], [[-1.0]], [0.0], [[1.0]])


# ---------------------------------------------------------------------------
# numeric distances


def test_hellinger_numeric_matches_closed_form_1d():
    grid = GridSpec.uniform([(-12.0, 13.0)], 4001)
    got = hellinger_numeric(_gauss_log(0.0, 1.0), _gauss_log(1.0, 1.0), grid)
    assert got == pytest.approx(DH_UNIT_SHIFT, abs=1e-10)


def test_hellinger_numeric_matches_closed_form_2d():
    grid = GridSpec.uniform([(-10.0, 10.0), (-10.0, 10.0)], 801)

    def log_p(pts):
        pts = np.atleast_2d(pts)
        return -0.5 * (pts[:, 0] ** 2 / 0.5 + pts[:, 1] ** 2 / 2.0)

    def log_q(pts):
        pts = np.atleast_2d(pts)
        return -0.5 * np.sum(pts**2, axis=1)

    got = hellinger_numeric(log_p, log_q, grid)
    assert got == pytest.approx(DH_DIAG_HALF_TWO, abs=1e-8)


@given(offset_p=st.floats(-200.0, 200.0), offset_q=st.floats(-200.0, 200.0))
@settings(max_examples=25, deadline=None)
def test_hellinger_numeric_ignores_constant_offsets(offset_p, offset_q):
    """Unnormalized inputs: shifting either log density must not matter."""
    grid = GridSpec.uniform([(-8.0, 8.0)], 1001)
    base_p, base_q = _gauss_log(0.0, 1.0), _gauss_log(0.7, 1.3)
    ref = hellinger_numeric(base_p, base_q, grid)
    got = hellinger_numeric(
        lambda x: base_p(x) + offset_p, lambda x: base_q(x) + offset_q, grid
    )
    assert got == pytest.approx(ref, abs=1e-12)


def test_identical_densities_have_zero_distance():
    grid = GridSpec.uniform([(-5.0, 5.0)], 501)
    f = _gauss_log(0.2, 0.7)
    assert hellinger_numeric(f, f, grid) < 1e-12
    assert tv_numeric(f, f, grid) < 1e-14


def test_tv_numeric_matches_closed_form():
    from scipy.special import ndtr

    grid = GridSpec.uniform([(-12.0, 12.0)], 6001)
    m = 1.4
    got = tv_numeric(_gauss_log(0.0, 1.0), _gauss_log(m, 1.0), grid)
    expected = 2.0 * ndtr(m / 2.0) - 1.0  # equal-variance normal TV
    # |p - q| has a kink where the densities cross, so the trapezoid rule
    # converges slower there than for smooth integrands
    assert got == pytest.approx(expected, abs=1e-5)


def test_tv_hellinger_inequalities():
    grid = GridSpec.uniform([(-12.0, 12.0)], 4001)
    p, q = _gauss_log(0.0, 1.0), _gauss_log(0.9, 1.8)
    dh = hellinger_numeric(p, q, grid)
    tv = tv_numeric(p, q, grid)
    assert dh**2 / 2.0 <= tv + 1e-12
    assert tv <= dh + 1e-12


def test_zero_mass_raises():
    grid = GridSpec.uniform([(-1.0, 1.0)], 11)
    dead = lambda pts: np.full(np.atleast_2d(pts).shape[0], -np.inf)
    with pytest.raises(ZeroMassError):
        hellinger_numeric(dead, _gauss_log(0.0, 1.0), grid)
    with pytest.raises(ZeroMassError):
        tv_numeric(_gauss_log(0.0, 1.0), dead, grid)


# ---------------------------------------------------------------------------
# GridSpec


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec([np.array([0.0, 1.0])])  # too few points
    with pytest.raises(ValueError):
        GridSpec([np.array([0.0, 1.0, 1.0])])  # not strictly increasing
    with pytest.raises(ValueError):
        GridSpec.uniform([(-1, 1)] * 3, 300)  # 2.7e7 points, over budget


def test_gridspec_chunks_cover_the_grid():
    grid = GridSpec.uniform([(-1.0, 2.0), (0.0, 1.0)], [7, 5])
    pts = []
    total_weight = 0.0
    for block, w in grid.chunks():
        pts.append(block)
        total_weight += float(np.sum(w))
    pts = np.vstack(pts)
    assert pts.shape == (35, 2)
    assert total_weight == pytest.approx(3.0 * 1.0, rel=1e-12)  # box volume
    assert grid.dim == 2 and grid.npoints == 35


def test_gridspec_nonuniform_weights_integrate_polynomials():
    axis = np.concatenate([np.linspace(0.0, 1.0, 11), np.linspace(1.05, 2.0, 40)])
    grid = GridSpec([axis])
    total = sum(float(w @ pts[:, 0]) for pts, w in grid.chunks())
    assert total == pytest.approx(2.0, rel=1e-3)  # integral of x over [0,2]


# ---------------------------------------------------------------------------
# rate fitting and CSV round trip


def test_fit_rate_recovers_exact_power_law():
    ns = np.array([10.0, 100.0, 1000.0, 10000.0])
    errs = 3.7 * ns**-0.5
    rep = fit_rate(ns, errs)
    assert rep.slope == pytest.approx(-0.5, abs=1e-12)
    assert np.exp(rep.intercept) == pytest.approx(3.7, rel=1e-12)
    assert rep.r_squared == pytest.approx(1.0, abs=1e-12)
    assert rep.dropped == 0


@given(
    slope=st.floats(-3.0, 3.0),
    log_c=st.floats(-10.0, 10.0),
)
@settings(max_examples=50, deadline=None)
def test_fit_rate_property(slope, log_c):
    ns = np.array([4.0, 16.0, 64.0, 256.0, 1024.0])
    errs = np.exp(log_c) * ns**slope
    rep = fit_rate(ns, errs)
    assert rep.slope == pytest.approx(slope, abs=1e-9)
    assert rep.intercept == pytest.approx(log_c, abs=1e-8)


def test_fit_rate_drops_prefix_and_nonpositive_errors():
    ns = [1.0, 10.0, 100.0, 1000.0, 10000.0]
    errs = [999.0, 1.0, 0.1, 0.0, 0.001]
    rep = fit_rate(ns, errs, drop_first=1)
    assert rep.dropped == 1  # the zero entry
    assert rep.ns.size == 3
    assert rep.slope == pytest.approx(-1.0, abs=1e-9)


def test_fit_rate_needs_three_points():
    with pytest.raises(ValueError):
        fit_rate([10.0, 100.0], [1.0, 0.1])
    with pytest.raises(ValueError):
        fit_rate([10.0, 100.0, 1000.0], [1.0, -1.0, 0.1])
    with pytest.raises(ValueError):
        fit_rate([10.0, 100.0, 1000.0], [[1.0, 0.5, 0.1]])  # wrong shape


def test_rate_csv_round_trip(tmp_path):
    path = tmp_path / "rates.csv"
    ns = np.array([1e2, 1e3, 1e4])
    errs = np.array([0.123456789012345678, 3.2e-7, 1.0 / 3.0])
    rep = fit_rate(ns, errs)
    write_rate_csv(path, ns, errs, rep)
    ns2, errs2, fit = read_rate_csv(path)
    np.testing.assert_array_equal(ns, ns2)  # repr round trip is bit exact
    np.testing.assert_array_equal(errs, errs2)
    assert fit == (rep.slope, rep.intercept, rep.r_squared)


def test_rate_csv_without_fit_block(tmp_path):
    path = tmp_path / "plain.csv"
    write_rate_csv(path, [1.0, 2.0], [0.5, 0.25])
    ns, errs, fit = read_rate_csv(path)
    assert fit is None
    np.testing.assert_array_equal(ns, [1.0, 2.0])
    np.testing.assert_array_equal(errs, [0.5, 0.25])


def test_read_rate_csv_rejects_foreign_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_rate_csv(path)
