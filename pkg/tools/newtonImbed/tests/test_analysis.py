"""
Tests for the mesa construction, its energies and the composition probes.
"""

import logging
import math

import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.optimize import bisect

from ..analysis import (
    DeltaTooSmall,
    MesaSpec,
    RadialTestFunction,
    build_partition,
    bump_cutoff,
    bump_sequence_probe,
    membership_verdict,
    mesa_gradient,
    mesa_h1_norm_sq,
    mesa_profile,
    mesa_slope,
    mesa_value,
    mollifier_profile,
    oscillation_probe,
    weak_derivative_check,
    _mesa_pieces,
)
from ..grid import DomainSpec, Grid, sphere_area
from ..nonlinearity import Nonlinearity, make_arccot, make_constant


def identity() -> Nonlinearity:
    return Nonlinearity(
        f=lambda x: np.asarray(x, dtype=float),
        fp=lambda x: np.ones(np.shape(x)),
        fpp=lambda x: np.zeros(np.shape(x)),
        bound_M=math.inf,
        name="identity",
    )


def log_simpson(func, lo: float, hi: float, points: int = 2001) -> float:
    """int_lo^hi func(r) dr by Simpson's rule in log r."""
    x = np.linspace(math.log(lo), math.log(hi), points)
    r = np.exp(x)
    return float(simpson(func(r) * r, x=x))


class TestMesaSpec:
    """Test mesa parameter validation."""

    @pytest.mark.parametrize("kwargs", [
        {"n": 2},
        {"a": 2.0, "b": 1.0},
        {"T": 0.0},
        {"alpha": 0.0},
        {"alpha": 2.0},
        {"depth": 0},
    ])
    def test_invalid(self, kwargs):
        """Test rejected parameters."""
        params = dict(a=0.0, b=1.0, T=1.0, alpha=0.25, n=3, depth=4)
        params.update(kwargs)
        with pytest.raises(ValueError):
            MesaSpec(**params)

    def test_critical_exponent(self):
        """Test (n - 2)/2 and the subcritical flag."""
        spec = MesaSpec(0.0, 1.0, 1.0, 0.4, n=3)
        assert spec.critical_alpha == 0.5
        assert spec.subcritical
        assert not MesaSpec(0.0, 1.0, 1.0, 0.6, n=3).subcritical
        assert MesaSpec(0.0, 1.0, 1.0, 0.9, n=4).subcritical


class TestPartition:
    """Test the nested radii of the mesa levels."""

    def setup_method(self):
        """Set up the reference mesa."""
        self.spec = MesaSpec(a=0.0, b=1.0, T=1.0, alpha=0.25, depth=8)
        self.part = build_partition(self.spec)

    def test_first_level(self):
        """Test r_1^+ = T/2 and s_1^+ against a bisection root."""
        assert self.part.r_plus[0] == 0.5
        root = bisect(lambda s: s ** -0.25 - 0.5 ** -0.25 - 1.0, 1e-12, 0.5, xtol=1e-18, rtol=1e-15)
        assert self.part.s_plus[0] == pytest.approx(root, rel=1e-12)
        assert self.part.s_plus[0] == pytest.approx(0.04354, abs=1e-5)

    def test_defining_equations(self):
        """Test the gap equations and halvings at every level."""
        alpha, gap = self.spec.alpha, self.spec.b - self.spec.a
        p = self.part
        for m in range(p.depth):
            assert p.s_plus[m] ** -alpha - p.r_plus[m] ** -alpha == pytest.approx(gap, rel=1e-12)
            assert p.s_minus[m] == p.s_plus[m] / 2
            assert p.r_minus[m] ** -alpha - p.s_minus[m] ** -alpha == pytest.approx(gap, rel=1e-12)
            assert p.r_plus[m + 1] == p.r_minus[m] / 2
            assert p.r_plus[m + 1] <= self.spec.T / 2 ** (m + 2)

    def test_strict_nesting(self):
        """Test r_m^+ > s_m^+ > s_m^- > r_m^- > r_(m+1)^+."""
        radii = []
        for m, rp, sp, sm, rm in self.part.rows():
            radii += [rp, sp, sm, rm]
        radii.append(self.part.r_inner)
        assert np.all(np.diff(radii) < 0)
        assert radii[-1] > 0

    def test_depth_override(self):
        """Test a shallower partition of the same mesa."""
        shallow = build_partition(self.spec, depth=3)
        assert shallow.depth == 3
        np.testing.assert_array_equal(shallow.s_plus, self.part.s_plus[:3])


class TestMesaFunction:
    """Test values and derivatives of the mesa function."""

    def setup_method(self):
        """Set up a mesa with positive plateaus."""
        self.spec = MesaSpec(a=0.5, b=1.5, T=1.0, alpha=0.25, depth=4)
        self.part = build_partition(self.spec)

    def test_landmarks(self):
        """Test U at T, s_1^-, r_1^- and the center."""
        assert mesa_value(self.spec, self.part, 1.0) == 0.0
        assert mesa_value(self.spec, self.part, 2.0) == 0.0
        assert mesa_value(self.spec, self.part, float(self.part.s_minus[0])) == pytest.approx(1.5)
        assert mesa_value(self.spec, self.part, float(self.part.r_minus[0])) == pytest.approx(0.5)
        assert mesa_value(self.spec, self.part, 0.0) == 0.5
        assert mesa_value(self.spec, self.part, 0.5) == pytest.approx(0.5)

    def test_continuity(self):
        """Test that adjacent pieces agree at their common radius."""
        pieces = _mesa_pieces(self.spec, self.part)
        for inner, outer in zip(pieces, pieces[1:]):
            assert inner.hi == outer.lo
            gap = abs(float(inner.value(inner.hi)) - float(outer.value(outer.lo)))
            assert gap <= 1e-12 * (abs(self.spec.a) + abs(self.spec.b) + 1)

    def test_range(self):
        """Test a <= U <= b inside r_1^+ and 0 <= U <= max(2a, b) overall."""
        radii = np.concatenate((np.linspace(0.0, 1.2, 50_000), np.geomspace(1e-12, 1.0, 50_000)))
        values = mesa_profile(self.spec, self.part, radii)
        inside = radii <= self.part.r_plus[0]
        assert np.all(values[inside] >= 0.5 - 1e-12) and np.all(values[inside] <= 1.5 + 1e-12)
        assert np.all(values >= -1e-12) and np.all(values <= 1.5 + 1e-12)

    def test_profile_matches_pointwise(self):
        """Test the vectorized profile against mesa_value."""
        radii = np.geomspace(1e-6, 0.99, 200)
        expected = [mesa_value(self.spec, self.part, r) for r in radii]
        np.testing.assert_allclose(mesa_profile(self.spec, self.part, radii), expected, rtol=0, atol=1e-14)

    def test_gradient_on_ramp(self):
        """Test DU = -alpha (x - c) / r^(alpha + 2) on an inner ramp."""
        r = 0.5 * (self.part.s_plus[0] + self.part.r_plus[0])
        x = np.array([0.0, r, 0.0])
        expected = -0.25 * x / r ** 2.25
        np.testing.assert_allclose(mesa_gradient(self.spec, self.part, x), expected, rtol=1e-12)

    def test_gradient_on_plateau_and_outer_ramp(self):
        """Test zero slope on plateaus and -2a/T on the outer ramp."""
        sm, sp = self.part.s_minus[0], self.part.s_plus[0]
        assert np.all(mesa_gradient(self.spec, self.part, [0.5 * (sm + sp), 0.0, 0.0]) == 0.0)
        assert mesa_slope(self.spec, self.part, 0.75) == pytest.approx(-1.0)
        assert np.all(mesa_gradient(self.spec, self.part, [0.0, 0.0, 0.0]) == 0.0)

    def test_inner_piece_at_junction(self):
        """Test that the plateau below s_1^+ wins at the junction."""
        assert mesa_slope(self.spec, self.part, float(self.part.s_plus[0])) == 0.0

    def test_slope_dominated_by_envelope(self):
        """Test |U'| <= alpha r^(-alpha-1) inside r_1^+."""
        for r in np.geomspace(self.part.r_inner * 1.001, self.part.r_plus[0] * 0.999, 400):
            assert abs(mesa_slope(self.spec, self.part, r)) <= 0.25 * r ** -1.25 * (1 + 1e-12)


class TestMesaEnergy:
    """Test the closed-form energies and the membership verdict."""

    def test_levels_against_simpson(self):
        """Test per-level L2 and gradient energies against log-spaced Simpson sums."""
        spec = MesaSpec(a=0.0, b=1.0, T=1.0, alpha=0.2, depth=4)
        part = build_partition(spec)
        energy = mesa_h1_norm_sq(spec)
        omega = sphere_area(3)

        def ramp_grad(r):
            return omega * 0.04 * r ** -2.4 * r ** 2

        def u_sq(r):
            return omega * mesa_profile(spec, part, r) ** 2 * r ** 2

        for m, level in enumerate(energy.levels):
            rp, sp, sm, rm = part.r_plus[m], part.s_plus[m], part.s_minus[m], part.r_minus[m]
            grad = log_simpson(ramp_grad, sp, rp) + log_simpson(ramp_grad, rm, sm)
            assert level.grad == pytest.approx(grad, rel=1e-8)
            edges = [part.r_plus[m + 1], rm, sm, sp, rp]
            l2 = sum(log_simpson(u_sq, lo, hi) for lo, hi in zip(edges, edges[1:]))
            assert level.l2 == pytest.approx(l2, rel=1e-8)

    def test_totals(self):
        """Test that the totals collect core, levels and the outer ramp."""
        spec = MesaSpec(a=0.5, b=1.0, T=1.0, alpha=0.2, depth=5)
        energy = mesa_h1_norm_sq(spec)
        assert energy.grad_part == pytest.approx(energy.outer_grad + sum(lv.grad for lv in energy.levels))
        assert energy.total == pytest.approx(energy.l2_part + energy.grad_part)
        assert energy.grad_partial_sums[-1] == pytest.approx(energy.grad_part)
        assert np.all(np.diff(energy.envelope_partial_sums) > 0)

    def test_flat_mesa(self):
        """Test a = b: only the outer ramp carries gradient energy."""
        spec = MesaSpec(a=1.0, b=1.0, T=1.0, alpha=0.2, depth=4)
        energy = mesa_h1_norm_sq(spec)
        omega = sphere_area(3)
        assert energy.outer_grad == pytest.approx(omega * 4.0 * (1.0 - 0.125) / 3.0, rel=1e-12)
        assert energy.grad_part == pytest.approx(energy.outer_grad, rel=1e-9)

    @pytest.mark.parametrize("alpha", [0.2, 0.4, 0.49])
    def test_subcritical_converges(self, alpha):
        """Test ratio < 1 below the critical exponent."""
        verdict = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, alpha, depth=16)))
        assert verdict.convergent
        assert verdict.ratio < 1.0
        assert verdict.label == "envelope energy convergent"

    @pytest.mark.parametrize("alpha", [0.6, 0.8])
    def test_supercritical_diverges(self, alpha):
        """Test ratio > 1 above the critical exponent."""
        verdict = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, alpha, depth=16)))
        assert not verdict.convergent
        assert verdict.ratio > 1.0
        assert verdict.label == "envelope energy divergent"

    def test_ratio_extremes(self):
        """Test clear separation far from the critical exponent."""
        low = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, 0.2, depth=16)))
        assert low.ratio < 0.75
        for alpha in (0.6, 0.8):
            high = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, alpha, depth=16)))
            assert high.ratio > 1.3

    @pytest.mark.parametrize("alpha", [0.2, 0.4, 0.6, 0.8])
    def test_ratio_limit(self, alpha):
        """Test the tail ratio against 4^-(n - 2 - 2 alpha)."""
        verdict = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, alpha, depth=24)))
        limit = 4.0 ** -(1.0 - 2.0 * alpha)
        assert verdict.ratio == pytest.approx(limit, rel=0.02)

    @pytest.mark.parametrize("alpha", [0.2, 0.4, 0.6, 0.8])
    def test_mesa_gradient_ratio_limit(self, alpha):
        """Test the mesa's own gradient tail ratio against 4^-(n - 2 - alpha)."""
        verdict = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, alpha, depth=16)))
        assert verdict.mesa_ratio == pytest.approx(4.0 ** -(1.0 - alpha), rel=0.03)

    @pytest.mark.parametrize("alpha", [0.6, 0.8])
    def test_mesa_energy_finite_where_envelope_diverges(self, alpha):
        """Test that the mesa gradient energy converges while the envelope energy does not."""
        verdict = membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, alpha, depth=16)))
        assert not verdict.convergent
        assert verdict.mesa_ratio < 0.8
        assert verdict.ratio > 1.3

    def test_verdict_needs_two_levels(self):
        """Test the level count check."""
        with pytest.raises(ValueError, match="two levels"):
            membership_verdict(mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, 0.2, depth=1)))

    def test_supercritical_warning(self, caplog):
        """Test the warning for alpha at or above (n - 2)/2."""
        with caplog.at_level(logging.WARNING):
            mesa_h1_norm_sq(MesaSpec(0.0, 1.0, 1.0, 0.8, depth=3))
        assert "infinite Dirichlet energy" in caplog.text


class TestWeakDerivative:
    """Test integration by parts for the truncated mesa."""

    def test_zero_test_function(self):
        """Test that Phi = 0 gives zero on both sides."""
        spec = MesaSpec(a=1.0, b=2.0, T=1.0, alpha=0.2)
        report = weak_derivative_check(spec, 4, RadialTestFunction.zero())
        assert report.lhs == 0.0 and report.rhs == 0.0 and report.residual == 0.0

    def test_residual_within_bound(self):
        """Test residual <= bound and its decay with depth."""
        spec = MesaSpec(a=1.0, b=2.0, T=1.0, alpha=0.2)
        testfn = mollifier_profile(1.0)
        reports = [weak_derivative_check(spec, depth, testfn) for depth in (4, 8, 12)]
        for report in reports:
            assert report.residual <= report.boundary_bound + 1e-10
        for shallow, deep in zip(reports, reports[1:]):
            assert deep.residual <= shallow.residual + 1e-12
            assert deep.boundary_term < shallow.boundary_term

    def test_residual_is_sphere_term(self):
        """Test that the residual equals the sphere term at r_(N+1)^+."""
        spec = MesaSpec(a=1.0, b=2.0, T=1.0, alpha=1.5)
        testfn = mollifier_profile(1.0)
        reports = [weak_derivative_check(spec, depth, testfn) for depth in (1, 2, 3)]
        for report in reports:
            assert report.residual == pytest.approx(report.boundary_term, rel=1e-6, abs=1e-12)
            assert report.residual <= report.boundary_bound
        assert reports[0].residual > reports[1].residual > reports[2].residual

    def test_radius_beyond_support(self):
        """Test a test function wider than the mesa."""
        spec = MesaSpec(a=1.0, b=2.0, T=1.0, alpha=0.2)
        with pytest.raises(ValueError, match="exceeds"):
            weak_derivative_check(spec, 2, mollifier_profile(2.0))


class TestOscillation:
    """Test the oscillation of f(U) near the center."""

    def setup_method(self):
        """Set up the reference mesa."""
        self.spec = MesaSpec(a=0.0, b=1.0, T=1.0, alpha=0.25, depth=8)
        self.part = build_partition(self.spec)

    def test_arccot_keeps_oscillating(self):
        """Test osc = arccot(0) - arccot(1) = pi/4 at every delta."""
        rows = oscillation_probe(make_arccot(1, 0, 1, 0), self.spec, self.part, [0.5, 0.05, 0.005])
        assert len(rows) == 3
        for row in rows:
            assert row.oscillation == pytest.approx(math.pi / 4, abs=1e-12)
            assert row.f_max == pytest.approx(math.pi / 2, abs=1e-12)
            assert row.f_min == pytest.approx(math.pi / 4, abs=1e-12)

    def test_constant_has_no_oscillation(self):
        """Test f = c."""
        rows = oscillation_probe(make_constant(2.0), self.spec, self.part, [0.5])
        assert rows[0].oscillation == 0.0

    def test_delta_too_small(self):
        """Test delta at or below the innermost plateau."""
        shallow = build_partition(self.spec, depth=2)
        limit = float(shallow.s_minus[-1])
        with pytest.raises(DeltaTooSmall) as info:
            oscillation_probe(make_arccot(1, 0, 1, 0), self.spec, shallow, [limit / 2])
        assert info.value.limit == limit

    def test_delta_beyond_support(self):
        """Test delta > T."""
        with pytest.raises(ValueError, match="delta"):
            oscillation_probe(make_arccot(1, 0, 1, 0), self.spec, self.part, [1.5])


class TestBump:
    """Test the smooth cutoff and the bump sequence."""

    def setup_method(self):
        """Set up an odd-resolution square so the center is a node."""
        self.grid = Grid(DomainSpec("box", 2, 1.0), 63)

    def test_cutoff_shape(self):
        """Test gamma = 1 near the center, 0 outside and bounded second differences."""
        radius = 0.25
        gamma = bump_cutoff(self.grid, (0.5, 0.5), radius)
        x, y = self.grid.coordinates()
        rho = np.sqrt((x - 0.5) ** 2 + (y - 0.5) ** 2)
        assert np.all(gamma.values[rho <= radius / 2] == 1.0)
        assert np.all(gamma.values[rho >= radius] == 0.0)
        assert np.all((gamma.values >= 0.0) & (gamma.values <= 1.0))
        second = np.diff(gamma.values, 2, axis=0) / self.grid.h ** 2
        assert np.max(np.abs(second)) <= 100.0 / (radius / 2) ** 2

    def test_identity_grows(self):
        """Test ||f(x_k gamma)||_inf = x_k for f(x) = x."""
        rows = bump_sequence_probe(identity(), self.grid, [1.0, 10.0, 100.0], 2.0)
        for row in rows:
            assert row.linf_norm == row.x_k
            assert row.lp_norm >= row.lower_bound
        assert rows[0].lp_norm < rows[1].lp_norm < rows[2].lp_norm

    def test_bounded_image(self):
        """Test that a bounded f keeps the images below its bound."""
        rows = bump_sequence_probe(make_arccot(1, 0, 1, 0), self.grid, [1.0, 10.0, 100.0], 2.0)
        for row in rows:
            assert row.linf_norm <= math.pi

    def test_zero_amplitude(self):
        """Test x_k = 0: the norm is |f(0)| times the grid measure."""
        rows = bump_sequence_probe(make_arccot(1, 0, 1, 0), self.grid, [0.0], 3.0)
        expected = math.pi / 2 * (self.grid.size * self.grid.h ** 2) ** (1 / 3)
        assert rows[0].lp_norm == pytest.approx(expected, rel=1e-12)

    def test_rejects_balls(self):
        """Test that the probe needs a box grid."""
        grid = Grid(DomainSpec("ball", 2, 1.0), 31)
        with pytest.raises(ValueError, match="box"):
            bump_sequence_probe(identity(), grid, [1.0], 2.0)

    def test_ball_must_fit(self):
        """Test a cutoff ball touching the boundary."""
        with pytest.raises(ValueError, match="compactly"):
            bump_sequence_probe(identity(), self.grid, [1.0], 2.0, center=(0.2, 0.5), radius=0.25)
