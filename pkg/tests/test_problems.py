import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ishii.problems import (
    DomainError,
    ExtendedControl,
    PiecewiseToy,
    ProblemDefinitionError,
    ProblemSpec,
    Quadratic,
    Superlinear,
    check_controllability,
    cost_growth_ratios,
    dyn_cost,
    mixed_dyn_cost,
    pull_pull_toy,
    stay_cost,
    stay_put_control,
)


def superlinear_spec(power=2.0, f1=(0.0,), f2=(0.0,), discount=1.0):
    return ProblemSpec(dimension=1, discount=discount, controllability_radius=1.0,
                       family=Superlinear(power=power, f1=f1, f2=f2))


class TestDynCost:
    def test_superlinear_displayed_pair(self):
        # r = 2, d == 1, f == 0: scale c_2 = 2, so alpha = 3 gives b = 6, l = 9
        spec = superlinear_spec()
        b, l = dyn_cost(spec, 1, [0.5], [3.0])
        assert b[0] == pytest.approx(6.0)
        assert l == pytest.approx(9.0)

    def test_zero_control_gives_zero_dynamic_and_state_cost(self):
        for spec in (superlinear_spec(f1=(0.7,)), pull_pull_toy(),
                     ProblemSpec(dimension=1, discount=1.0, controllability_radius=1.0,
                                 family=Quadratic(c1=2.0, f1=(0.7,)))):
            b, l = dyn_cost(spec, 1, [0.3], [0.0])
            assert abs(b[0]) == 0.0
            expected = 0.7 if not isinstance(spec.family, PiecewiseToy) else 1.0
            assert l == pytest.approx(expected)

    def test_cubic_scale_constant(self):
        fam = Superlinear(power=3.0)
        assert fam.dynamic_scale == pytest.approx(3.0 / 4.0 ** (1.0 / 3.0), abs=1e-5)
        assert fam.dynamic_scale == pytest.approx(1.88988, abs=1e-5)

    def test_non_finite_input_rejected(self):
        spec = superlinear_spec()
        with pytest.raises(DomainError):
            dyn_cost(spec, 1, [np.nan], [1.0])
        with pytest.raises(DomainError):
            dyn_cost(spec, 1, [0.5], [np.inf])
        with pytest.raises(DomainError):
            dyn_cost(spec, 3, [0.5], [1.0])


class TestMixedDynCost:
    def test_degenerate_mixing_weight_one(self):
        spec = pull_pull_toy()
        a = ExtendedControl([0.7], [-0.2], 1.0)
        bh, lh = mixed_dyn_cost(spec, [0.0], a)
        b1, l1 = dyn_cost(spec, 1, [0.0], [0.7])
        assert np.allclose(bh, b1) and lh == pytest.approx(float(l1))

    def test_symmetric_cancellation(self):
        spec = pull_pull_toy()
        bh, _ = mixed_dyn_cost(spec, [0.0], ExtendedControl([1.0], [-1.0], 0.5))
        assert bh[0] == 0.0

    def test_two_thirds_mix_cancels(self):
        # normal components -1 and +2 cancel at weight 2/3
        spec = pull_pull_toy()
        bh, _ = mixed_dyn_cost(spec, [0.0], ExtendedControl([-1.0], [2.0], 2.0 / 3.0))
        assert bh[0] == pytest.approx(0.0, abs=1e-15)

    def test_off_hyperplane_rejected(self):
        spec = pull_pull_toy()
        with pytest.raises(DomainError):
            mixed_dyn_cost(spec, [0.5], ExtendedControl([1.0], [-1.0], 0.5))


class TestSpecInvariants:
    def test_positive_discount_and_radius_required(self):
        with pytest.raises(ProblemDefinitionError):
            ProblemSpec(dimension=1, discount=0.0, controllability_radius=1.0,
                        family=Superlinear())
        with pytest.raises(ProblemDefinitionError):
            ProblemSpec(dimension=1, discount=1.0, controllability_radius=-1.0,
                        family=Superlinear())

    def test_superlinear_exponent_constraints(self):
        with pytest.raises(ProblemDefinitionError):
            Superlinear(power=1.0)
        # a >= (a - 1 + kappa) r fails for a = 3, kappa = 0, r = 2
        with pytest.raises(ProblemDefinitionError):
            ProblemSpec(dimension=1, discount=10.0, controllability_radius=1.0,
                        family=Superlinear(power=2.0, growth_exponent=3.0))
        # discount >= a^r fails
        with pytest.raises(ProblemDefinitionError):
            ProblemSpec(dimension=1, discount=0.5, controllability_radius=1.0,
                        family=Superlinear(power=2.0, growth_exponent=1.0))

    def test_toy_row_width_must_match_dimension(self):
        with pytest.raises(ProblemDefinitionError):
            ProblemSpec(dimension=2, discount=1.0, controllability_radius=1.0,
                        family=PiecewiseToy(cost_rows_1=((1.0, -1.0),),
                                            cost_rows_2=((1.0, 1.0),)))

    def test_reachability_sample_check(self):
        for spec in (superlinear_spec(power=1.5), superlinear_spec(power=3.0),
                     pull_pull_toy(),
                     ProblemSpec(dimension=2, discount=1.0, controllability_radius=0.5,
                                 family=Quadratic(c1=2.0, c2=0.5))):
            assert check_controllability(spec, 0.9) < 1e-9

    def test_cost_outgrows_dynamics_for_superlinear_families(self):
        mags = [1.0, 4.0, 16.0, 64.0]
        for spec in (superlinear_spec(power=1.5), superlinear_spec(power=3.0)):
            ratios = cost_growth_ratios(spec, 0.9, mags)
            assert np.all(np.diff(ratios) > 0)
            assert ratios[-1] > 8.0 * ratios[0]
        # the piecewise toy grows linearly: ratio stays bounded (compact use only)
        ratios = cost_growth_ratios(pull_pull_toy(), 0.9, mags)
        assert ratios[-1] < 2.0


class TestStayPut:
    def test_zero_control_for_shipped_families(self):
        for spec in (superlinear_spec(), pull_pull_toy(),
                     ProblemSpec(dimension=1, discount=1.0, controllability_radius=1.0,
                                 family=Quadratic())):
            alpha = stay_put_control(spec, [0.4], 1)
            assert np.allclose(alpha, 0.0)
            b, _ = dyn_cost(spec, 1, [0.4], alpha)
            assert np.max(np.abs(b)) <= 1e-12

    def test_drifted_toy_inverts_the_drift(self):
        fam = PiecewiseToy(cost_rows_1=((1.0, -1.0), (-1.0, 1.0)),
                           cost_rows_2=((1.0, 1.0), (-1.0, -1.0)),
                           drift_1=(2.0,), drift_2=(-2.0,))
        spec = ProblemSpec(dimension=1, discount=1.0, controllability_radius=1.0,
                           family=fam)
        alpha = stay_put_control(spec, [0.4], 1)
        assert alpha[0] == pytest.approx(-2.0)

    def test_stay_cost_is_state_cost(self):
        spec = superlinear_spec(f1=(0.0, 1.0))   # f(x) = |x|^2
        assert float(stay_cost(spec, 1, [0.5])) == pytest.approx(0.25)


@settings(max_examples=60, deadline=None)
@given(power=st.sampled_from([1.5, 2.0, 3.0]),
       speed=st.floats(0.01, 5.0),
       direction=st.floats(-1.0, 1.0))
def test_velocity_inverse_roundtrip(power, speed, direction):
    spec = superlinear_spec(power=power)
    v = np.array([speed * np.sign(direction or 1.0)])
    alpha = spec.family.velocity_inverse(1, np.array([0.3]), v)
    b, _ = dyn_cost(spec, 1, [0.3], alpha)
    assert b[0] == pytest.approx(v[0], rel=1e-9, abs=1e-12)


def test_extended_control_validates_weight():
    with pytest.raises(ProblemDefinitionError):
        ExtendedControl([0.0], [0.0], 1.5)
