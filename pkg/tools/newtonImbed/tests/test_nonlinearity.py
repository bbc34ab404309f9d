"""
Tests for the nonlinearity families and the sampled assumption checks.
"""

import math

import numpy as np
import pytest

from ..grid import DomainSpec, Field, Grid, norm_lp
from ..nonlinearity import (
    Nonlinearity,
    arccot,
    check_assumptions,
    make_arccot,
    make_constant,
    make_heaviside_approx,
    make_linear,
    parse_nonlinearity,
)


class TestArccot:
    """Test the arccot family f(x) = A arccot((x-h)/eps) + k."""

    def test_branch(self):
        """Test the (0, pi) branch, continuous at 0."""
        assert arccot(0.0) == pytest.approx(math.pi / 2)
        assert arccot(1.0) == pytest.approx(math.pi / 4)
        assert arccot(-1.0) == pytest.approx(3 * math.pi / 4)

    def test_values_at_zero(self):
        """Test f, f', f'' of arccot:1,0,1,0 at the origin."""
        nl = make_arccot(1, 0, 1, 0)
        assert nl.f(0.0) == pytest.approx(math.pi / 2)
        assert nl.fp(0.0) == pytest.approx(-1.0)
        assert nl.fpp(0.0) == pytest.approx(0.0)

    def test_strictly_decreasing(self):
        """Test f' < 0 far out and at the center."""
        nl = make_arccot(1, 0, 1, 0)
        assert np.all(nl.fp(np.array([-1e3, 0.0, 1e3])) < 0)

    def test_width_scales_slope(self):
        """Test f'(h) = -A/eps."""
        assert make_arccot(1, 0, 0.1, 0).fp(0.0) == pytest.approx(-10.0)
        assert make_arccot(2, 3, 0.5, 1).fp(3.0) == pytest.approx(-4.0)

    def test_bound(self):
        """Test the combined bound on |f|, |f'|, |f''|."""
        assert make_arccot(1, 0, 1, 0).bound_M == pytest.approx(math.pi)
        assert make_arccot(1, 0, 0.01, 0).bound_M == pytest.approx(2 * 3 * math.sqrt(3) / 16 * 1e4)

    @pytest.mark.parametrize("A,eps", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -0.5)])
    def test_invalid_parameters(self, A, eps):
        """Test that A and eps must be positive."""
        with pytest.raises(ValueError):
            make_arccot(A, 0, eps, 0)

    def test_composition_respects_bound(self):
        """Test max |f(u)| <= M on a random field."""
        nl = make_arccot(1, 0, 1, 0)
        grid = Grid(DomainSpec("box", 2, 1.0), 15)
        u = Field(grid, np.random.default_rng(0).standard_normal(grid.shape) * 100)
        assert norm_lp(nl.value(u), math.inf) <= nl.bound_M


class TestHeavisideApprox:
    """Test f_eps(x) = arccot(x/eps)/pi - 1."""

    @pytest.mark.parametrize("eps", [1.0, 0.1, 1e-3])
    def test_midpoint(self, eps):
        """Test f_eps(0) = -1/2."""
        assert make_heaviside_approx(eps).f(0.0) == pytest.approx(-0.5)

    def test_value_at_one(self):
        """Test f_0.01(1)."""
        assert make_heaviside_approx(0.01).f(1.0) == pytest.approx(-0.99682, abs=1e-5)

    def test_limits(self):
        """Test the step limits 0 at -inf and -1 at +inf."""
        nl = make_heaviside_approx(0.01)
        assert nl.f(-1e6) == pytest.approx(0.0, abs=1e-7)
        assert nl.f(1e6) == pytest.approx(-1.0, abs=1e-7)

    def test_derivative(self):
        """Test f_eps' = -eps / (pi (eps^2 + x^2))."""
        eps, x = 0.2, 0.3
        expected = -eps / (math.pi * (eps ** 2 + x ** 2))
        assert make_heaviside_approx(eps).fp(x) == pytest.approx(expected)

    def test_name(self):
        """Test the label used in summaries."""
        assert make_heaviside_approx(0.01).name == "heaviside-approx:0.01"

    def test_eps_must_be_positive(self):
        """Test eps validation."""
        with pytest.raises(ValueError, match="eps"):
            make_heaviside_approx(0.0)


class TestParse:
    """Test parsing of nonlinearity strings."""

    def test_arccot(self):
        """Test arccot:A,h,eps,k."""
        nl = parse_nonlinearity("arccot:2,0.5,0.25,-1")
        assert nl.f(0.5) == pytest.approx(math.pi - 1)

    def test_other_kinds(self):
        """Test heaviside-approx, const and linear."""
        assert parse_nonlinearity("heaviside-approx:0.1").f(0.0) == pytest.approx(-0.5)
        assert parse_nonlinearity("const:3").f(np.zeros(4)).tolist() == [3.0] * 4
        assert parse_nonlinearity("linear:2").f(1.5) == pytest.approx(-3.0)

    @pytest.mark.parametrize("text", ["arccot:1,0,1", "cubic:1", "const:x", "heaviside-approx:", "linear:0"])
    def test_invalid(self, text):
        """Test malformed strings."""
        with pytest.raises(ValueError):
            parse_nonlinearity(text)


class TestCheckAssumptions:
    """Test the sampled checks of boundedness, decrease and smoothness."""

    def test_arccot_passes(self):
        """Test that arccot:1,0,1,0 shows no violations on [-1e6, 1e6]."""
        report = check_assumptions(make_arccot(1, 0, 1, 0))
        assert report.ok
        assert report.samples >= 10_000

    def test_heaviside_passes(self):
        """Test a narrower family on a smaller range."""
        report = check_assumptions(make_heaviside_approx(0.1), sample_range=(-10.0, 10.0))
        assert report.ok

    def test_identity_violates_bound_and_decrease(self):
        """Test f(x) = x with a claimed bound of 10."""
        nl = Nonlinearity(
            f=lambda x: np.asarray(x, dtype=float),
            fp=lambda x: np.ones(np.shape(x)),
            fpp=lambda x: np.zeros(np.shape(x)),
            bound_M=10.0,
            name="identity",
        )
        report = check_assumptions(nl, sample_range=(-100.0, 100.0), samples=201)
        assert not report.ok
        assert report.by_assumption("bound")
        assert len(report.by_assumption("decrease")) == report.samples
        assert not report.by_assumption("smoothness")

    def test_wrong_derivative_sign(self):
        """Test a family whose supplied f' has the wrong sign."""
        family = make_arccot(1, 0, 1, 0)
        nl = Nonlinearity(family.f, lambda x: -family.fp(x), family.fpp, family.bound_M, "flipped")
        report = check_assumptions(nl)
        assert len(report.by_assumption("decrease")) == report.samples
        assert report.by_assumption("smoothness")

    def test_unbounded_family(self):
        """Test that linear:mu is reported for lacking a finite bound."""
        report = check_assumptions(make_linear(1.0), sample_range=(-10.0, 10.0))
        bound = report.by_assumption("bound")
        assert len(bound) == 1 and math.isnan(bound[0].x)
        assert not report.by_assumption("decrease")

    def test_constant_is_not_decreasing(self):
        """Test that const:c fails the decrease check only."""
        report = check_assumptions(make_constant(0.5), sample_range=(-1.0, 1.0), samples=11)
        assert {v.assumption for v in report.violations} == {"decrease"}

    def test_summary(self):
        """Test the one-line summary."""
        report = check_assumptions(make_constant(0.5), sample_range=(-1.0, 1.0), samples=11)
        assert "decrease" in report.summary()
        assert "violation" in report.summary()

    def test_too_few_samples(self):
        """Test the sample count check."""
        with pytest.raises(ValueError, match="samples"):
            check_assumptions(make_arccot(1, 0, 1, 0), samples=1)

    def test_seeded_samples_are_reproducible(self):
        """Test that one seed draws the same extra points and another seed different ones."""
        family = make_constant(0.5)
        first = check_assumptions(family, sample_range=(-1.0, 1.0), samples=11, rng=np.random.default_rng(7))
        again = check_assumptions(family, sample_range=(-1.0, 1.0), samples=11, rng=np.random.default_rng(7))
        other = check_assumptions(family, sample_range=(-1.0, 1.0), samples=11, rng=np.random.default_rng(8))
        assert first.violations == again.violations
        assert first.samples > 11
        assert sorted(v.x for v in first.violations) != sorted(v.x for v in other.violations)

    def test_seeded_arccot_passes(self):
        """Test that random extra points find nothing wrong with arccot:1,0,1,0."""
        report = check_assumptions(make_arccot(1, 0, 1, 0), rng=np.random.default_rng(0))
        assert report.ok
        assert report.samples > 10_000
