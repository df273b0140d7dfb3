"""Regime classification and exponent arithmetic for thin porous media.

A thin porous medium has thickness eps and a periodic array of cylinders of
period and size eps**delta; the Reynolds number scales as eps**(-gamma).

All functions accept ints, floats or :class:`fractions.Fraction`; exponent
formulas are evaluated with whatever number type comes in, so passing
fractions gives exact rational results.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Optional


class RegimeError(ValueError):
    """delta outside its domain, or an exponent requested outside validity."""


class ValidityError(RegimeError):
    """gamma exceeds the critical value: Darcy's law is not guaranteed."""


class Regime(str, enum.Enum):
    HTPM = "HTPM"  # homogeneously thin, delta > 1
    PTPM = "PTPM"  # proportionally thin, delta = 1
    VTPM = "VTPM"  # very thin, 0 < delta < 1

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class RegimeParams:
    epsilon: Optional[Real]
    delta: Real
    gamma: Real

    def __post_init__(self):
        if not self.delta > 0:
            raise RegimeError(f"delta must be positive, got {self.delta}")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise RegimeError(f"epsilon must lie in (0, 1), got {self.epsilon}")


def classify(params) -> Regime:
    """Regime tag from delta alone (exact comparison with 1)."""
    delta = params.delta if isinstance(params, RegimeParams) else params
    if not delta > 0:
        raise RegimeError(f"delta must be positive, got {delta}")
    if delta > 1:
        return Regime.HTPM
    if delta == 1:
        return Regime.PTPM
    return Regime.VTPM


def critical_gamma(regime: Regime, delta: Real) -> Real:
    """Critical Reynolds exponent: delta for HTPM, 1 otherwise."""
    return delta if Regime(regime) is Regime.HTPM else 1


def effective_delta(regime: Regime, delta: Real) -> Real:
    return delta if Regime(regime) is Regime.HTPM else 1


def c_exponent(delta_eff: Real, gamma: Real) -> Real:
    """Integrability exponent of the extended pressure.

    2 for gamma <= 3 delta/4, then 3 delta / (2 gamma) up to gamma = delta.
    """
    if gamma > delta_eff:
        raise ValidityError(
            f"gamma={gamma} exceeds {delta_eff}: pressure exponent undefined")
    if 4 * gamma <= 3 * delta_eff:
        return 2
    return _div(3 * delta_eff, 2 * gamma)


def conjugate(c: Real) -> Real:
    return _div(c, c - 1)


def _div(a, b):
    if isinstance(a, (int, Fraction)) and isinstance(b, (int, Fraction)):
        return Fraction(a) / Fraction(b)
    return a / b


@dataclass(frozen=True)
class ExponentReport:
    regime: Regime
    delta: Real
    gamma: Real
    gamma_c: Real
    darcy_valid: bool
    # None when gamma > gamma_c (outside the range where the exponent is defined)
    c_delta: Optional[Real]
    r_conjugate: Optional[Real]
    alpha_inertial: Real
    vel_l2_exp: Real
    vel_grad_exp: Real
    vel_scale_exp: Real
    epsilon: Optional[Real] = None

    def to_dict(self) -> dict:
        d = {}
        for k in ("regime", "delta", "gamma", "epsilon", "gamma_c", "darcy_valid", "c_delta",
                  "r_conjugate", "alpha_inertial", "vel_l2_exp", "vel_grad_exp", "vel_scale_exp"):
            v = getattr(self, k)
            if isinstance(v, Regime):
                v = v.value
            elif isinstance(v, Fraction):
                v = float(v)
            d[k] = v
        d["reynolds_critical"] = f"eps^-{_fmt(self.gamma_c)}"
        return d


def _fmt(x):
    if isinstance(x, Fraction) and x.denominator != 1:
        return f"({x})"
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def exponent_report(params: RegimeParams) -> ExponentReport:
    """Everything the asymptotic analysis predicts for ``params``.

    Velocity estimates ||v|| ~ eps^vel_l2_exp, ||D v|| ~ eps^vel_grad_exp,
    the inertial term decays as eps^alpha_inertial and the averaged velocity
    approximates eps^vel_scale_exp times the Darcy velocity.
    """
    regime = classify(params)
    d, g = params.delta, params.gamma
    gamma_c = critical_gamma(regime, d)
    valid = g <= gamma_c
    de = effective_delta(regime, d)
    l2 = 2 * de - g
    grad = de - g
    alpha = 3 * de - 2 * g
    if valid:
        c = c_exponent(de, g)
        r = conjugate(c)
    else:
        c = r = None
    return ExponentReport(regime, d, g, gamma_c, valid, c, r, alpha, l2, grad, l2,
                          params.epsilon)
