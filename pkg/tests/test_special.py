"""Special-function kernels: oracle comparisons and derivative checks.

The reference values were generated once with mpmath at 30 significant
digits and frozen here, so the suite never depends on mpmath at runtime.
"""

import numpy as np
import pytest

from mcchannel import (
    DomainError,
    ERFC_COEFFS,
    erfc_approx,
    erfc_approx_derivative,
    erfc_exact,
    expint_ei,
)

# mpmath.erfc, 30 dps
ERFC_TABLE = {
    0.25: 0.723673609831763067,
    0.5: 0.479500122186953462,
    1.0: 0.157299207050285131,
    2.0: 4.67773498104726584e-3,
    3.0: 2.20904969985854414e-5,
    5.0: 1.53745979442803485e-12,
    7.5: 2.77664938603056910e-26,
    10.0: 2.08848758376254476e-45,
}

# mpmath.ei, 30 dps
EI_TABLE = {
    -0.25: -1.04428263444373819,
    -1.0: -0.219383934395520274,
    -2.0: -4.89005107080611196e-2,
    -5.0: -1.14829559127532580e-3,
    -10.0: -4.15696892968532428e-6,
    -30.0: -3.02155201068881254e-15,
}


@pytest.mark.parametrize("x,expected", sorted(ERFC_TABLE.items()))
def test_erfc_exact_against_frozen_oracle(x, expected):
    assert erfc_exact(x) == pytest.approx(expected, rel=1e-13)


def test_erfc_exact_edge_values():
    assert erfc_exact(0.0) == 1.0
    # symmetry erfc(-x) = 2 - erfc(x)
    assert erfc_exact(-1.0) == pytest.approx(2.0 - ERFC_TABLE[1.0], rel=1e-13)


def test_erfc_exact_rejects_nonfinite():
    with pytest.raises(DomainError):
        erfc_exact(np.nan)
    with pytest.raises(DomainError):
        erfc_exact(np.array([0.5, np.inf]))


def test_erfc_approx_abs_error_bound():
    # the approximation's contract: <= 3e-7 everywhere on [0, 10]
    x = np.logspace(-6, 1, 100_000)
    err = np.abs(erfc_approx(x) - erfc_exact(x))
    assert err.max() <= 3e-7


def test_erfc_approx_monotone_decreasing():
    x = np.linspace(0.0, 10.0, 20_001)
    y = erfc_approx(x)
    assert np.all(np.diff(y) < 0)


def test_erfc_approx_at_zero_and_domain():
    assert erfc_approx(0.0) == 1.0
    with pytest.raises(DomainError):
        erfc_approx(-0.1)


def test_erfc_approx_tail_never_underflows():
    # power-law tail: even far outside the fit range the value is a
    # normal positive double, unlike exp(-x^2) which hits 0 near x=27
    assert erfc_approx(50.0) > 0.0
    assert erfc_approx(200.0) > 0.0


def test_derivative_at_zero_closed_form():
    # p(0) = 1, p'(0) = a1
    assert erfc_approx_derivative(0.0) == pytest.approx(-16.0 * ERFC_COEFFS.a1, rel=1e-15)


@pytest.mark.parametrize("x", [0.3, 1.0, 3.0])
def test_derivative_matches_central_difference(x):
    h = 1e-6 * max(x, 1.0)
    fd = (erfc_approx(x + h) - erfc_approx(x - h)) / (2 * h)
    assert erfc_approx_derivative(x) == pytest.approx(fd, rel=1e-6)


def test_derivative_step_halving_order_two():
    # central differences should converge at second order toward the
    # analytic value; check the observed order over halved steps
    x = np.linspace(0.05, 9.5, 100)
    exact = erfc_approx_derivative(x)
    errs = []
    for h in (1e-3, 5e-4, 2.5e-4):
        fd = (erfc_approx(x + h) - erfc_approx(x - h)) / (2 * h)
        errs.append(np.max(np.abs(fd - exact)))
    order1 = np.log2(errs[0] / errs[1])
    order2 = np.log2(errs[1] / errs[2])
    assert order1 > 1.9
    assert order2 > 1.9


def test_derivative_nonpositive():
    x = np.linspace(0.0, 10.0, 1000)
    assert np.all(erfc_approx_derivative(x) <= 0.0)


@pytest.mark.parametrize("x,expected", sorted(EI_TABLE.items()))
def test_expint_ei_against_frozen_oracle(x, expected):
    assert expint_ei(x) == pytest.approx(expected, rel=1e-12)


def test_expint_ei_sign_and_decay():
    x = -np.logspace(-3, 2, 500)  # |x| increasing away from zero
    y = expint_ei(x)
    assert np.all(y < 0)
    # |Ei| shrinks as the argument moves away from zero
    assert np.all(np.diff(np.abs(y)) < 0)


def test_expint_ei_domain_error():
    for bad in (0.0, 0.5, np.inf):
        with pytest.raises(DomainError):
            expint_ei(bad)


def test_expint_ei_derivative_identity():
    # d/dx Ei(x) = exp(x)/x, checked by central differences
    xs = -np.logspace(-1, 1, 50)
    for x in xs:
        h = 1e-6 * abs(x)
        fd = (expint_ei(x + h) - expint_ei(x - h)) / (2 * h)
        assert fd == pytest.approx(np.exp(x) / x, rel=1e-6)


def test_scalar_and_array_shapes_agree():
    xs = np.array([0.1, 1.0, 2.5])
    batch = erfc_approx(xs)
    for i, x in enumerate(xs):
        assert batch[i] == pytest.approx(erfc_approx(float(x)), rel=1e-15)
    assert isinstance(erfc_approx(1.0), float)
    assert batch.shape == xs.shape
