"""Closed-form solutions of the growth-drift-diffusion-absorption model.

All densities and counts refer to a single initial world of unit measure
(log-size x = 0 at t = 0).  Worlds multiply at rate v, their total count
grows like exp((v - w/2) t), the log-size distribution drifts to mean -v*t
with variance w*t, and an absorbing boundary trails the median measure
xhat = -(v - w) t at offset eps.  In the boundary-relative coordinate
y = x - x_b(t) the unmangled density, its small-eps approximation, the
surviving count W and the two-stage outcome count lambda all have closed
forms built from erfc/erfcx.

Two conventions are fixed here and relied on by the self-tests:

* Sign of the drifted mean: the all-worlds density uses mean -v*t.  The
  opposite sign fails the PDE-residual self-test (:func:`pde_residual_mu0`)
  by nine orders of magnitude, so it is not a free choice.
* Count normalization: prefactors are pinned so that a unit-mass initial
  condition gives exactly these counts.  Concretely
  ``W(t; eps) = eps * e^eps * e^{(v-w)t} * bracket(w t)`` and the density
  prefactors follow by the same unit-mass convention; the finite-difference
  solver and direct quadrature agree with these normalizations to <1%,
  which pins them uniquely.  The Born correction
  ``gamma(F) = erfc(-ln F / sqrt(2 w t1))`` is a ratio and does not depend
  on any of this.

Counts are returned as :class:`~mangledworlds.special_functions.LogValue`
so (v - w) t up to ~1e10 stays representable; ``log_*`` variants return the
plain log-density and broadcast over numpy arrays.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import DomainError, RegimeWarning
from .model_params import DiffusionParams
from .special_functions import LogValue, bracket, erfc, log_erfc

_LOG_2PI = math.log(2.0 * math.pi)


def _check_time(t: float, name: str = "t") -> float:
    t = float(t)
    if not t > 0.0:
        raise DomainError(f"{name} must be positive, got {t!r}")
    return t


def _warn_if_outside_regime(wt1: float, eps: float | None = None) -> None:
    if wt1 <= 1.0:
        warnings.warn(f"w*t1 = {wt1:.3g} <= 1: outside the diffusive regime the "
                      "closed forms were derived for", RegimeWarning, stacklevel=3)
    elif eps is not None and eps >= 0.3 * math.sqrt(wt1):
        warnings.warn(f"eps = {eps:.3g} is not small against sqrt(w*t1) = "
                      f"{math.sqrt(wt1):.3g}; small-eps forms degrade",
                      RegimeWarning, stacklevel=3)


# ---------------------------------------------------------------------------
# all-worlds density
# ---------------------------------------------------------------------------

def log_mu0(x, t: float, dp: DiffusionParams):
    """ln of the all-worlds density over log-size x at time t > 0.

    A normal density with mean -v*t and variance w*t, carrying the total
    count e^{(v - w/2) t}.  Broadcasts over x.
    """
    t = _check_time(t)
    dp.require_diffusive()
    var = dp.w * t
    x = np.asarray(x, dtype=float)
    out = ((dp.v - 0.5 * dp.w) * t
           - 0.5 * (_LOG_2PI + math.log(var))
           - (x + dp.v * t) ** 2 / (2.0 * var))
    return out if out.ndim else float(out)


def mu0(x: float, t: float, dp: DiffusionParams) -> LogValue:
    """All-worlds density at a point, as a LogValue."""
    return LogValue(log_mu0(x, t, dp))


def pde_residual_mu0(x: float, t: float, dp: DiffusionParams, h: float = 1e-4,
                     wrong_mean: bool = False) -> float:
    """Normalized residual of the growth-drift-diffusion equation

        mu_t = v (mu_x + mu) + (w/2) (mu_xx - mu)

    for the implemented all-worlds density, via central differences of step
    ``h`` (scaled up with |x| and t so the stencil stays resolved).  Serves
    as the self-test that pins the sign of the drifted mean; ``wrong_mean``
    evaluates the flipped-mean (+v*t) variant as a negative control.
    """
    t = _check_time(t)
    dp.require_diffusive()
    sign = -1.0 if wrong_mean else 1.0

    def mu(xx: float, tt: float) -> float:
        var = dp.w * tt
        return math.exp((dp.v - 0.5 * dp.w) * tt
                        - 0.5 * (_LOG_2PI + math.log(var))
                        - (xx - sign * (-dp.v) * tt) ** 2 / (2.0 * var))

    hx = h * max(1.0, abs(x))
    ht = h * max(1.0, t)
    if t - ht <= 0.0:
        ht = 0.5 * t

    mu_c = mu(x, t)
    mu_t = (mu(x, t + ht) - mu(x, t - ht)) / (2.0 * ht)
    mu_x = (mu(x + hx, t) - mu(x - hx, t)) / (2.0 * hx)
    mu_xx = (mu(x + hx, t) - 2.0 * mu_c + mu(x - hx, t)) / (hx * hx)
    residual = mu_t - dp.v * (mu_x + mu_c) - 0.5 * dp.w * (mu_xx - mu_c)
    return residual / mu_c


# ---------------------------------------------------------------------------
# boundary and unmangled densities
# ---------------------------------------------------------------------------

def boundary(t: float, dp: DiffusionParams) -> float:
    """Absorbing-boundary position x_b(t) = -(v - w) t - eps in log-size."""
    if t < 0.0:
        raise DomainError(f"t must be nonnegative, got {t!r}")
    return -(dp.v - dp.w) * t - dp.eps


def log_mu1_exact(y, t: float, dp: DiffusionParams):
    """ln of the exact (image-method) unmangled density over y >= 0.

    -inf at y = 0, where the direct and image terms cancel.  Broadcasts
    over y; scalar y < 0 raises, array entries < 0 raise.
    """
    t = _check_time(t)
    dp.require_diffusive()
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0):
        raise DomainError("mu1 is defined on the unmangled side y >= 0 only")
    s = dp.w * t
    eps = dp.eps
    log_a = -((y_arr - eps) ** 2) / (2.0 * s)
    log_b = -((y_arr + eps) ** 2) / (2.0 * s)
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = log_a + np.log1p(-np.exp(log_b - log_a))
    diff = np.where(log_b == log_a, -np.inf, diff)
    out = (eps - y_arr + (dp.v - dp.w) * t
           - 0.5 * (_LOG_2PI + math.log(s))
           + diff)
    return out if out.ndim else float(out)


def mu1_exact(y: float, t: float, dp: DiffusionParams) -> LogValue:
    lv = log_mu1_exact(y, t, dp)
    return LogValue.zero() if lv == -math.inf else LogValue(lv)


def log_mu1_approx(y, t: float, dp: DiffusionParams):
    """ln of the small-eps unmangled density

        mu1(y, t) ~ (2 eps e^eps / sqrt(2 pi)) e^{(v-w)t} (w t)^{-3/2}
                     * y * exp(-y - y^2 / (2 w t))

    valid for eps << sqrt(w t); the regime is documented, not enforced.
    """
    t = _check_time(t)
    dp.require_diffusive()
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0.0):
        raise DomainError("mu1 is defined on the unmangled side y >= 0 only")
    s = dp.w * t
    with np.errstate(divide="ignore"):
        log_y = np.log(y_arr)
    out = (math.log(2.0 * dp.eps) + dp.eps + (dp.v - dp.w) * t
           - 0.5 * _LOG_2PI - 1.5 * math.log(s)
           + log_y - y_arr - y_arr ** 2 / (2.0 * s))
    return out if out.ndim else float(out)


def mu1_approx(y: float, t: float, dp: DiffusionParams) -> LogValue:
    lv = log_mu1_approx(y, t, dp)
    return LogValue.zero() if lv == -math.inf else LogValue(lv)


# ---------------------------------------------------------------------------
# counts
# ---------------------------------------------------------------------------

def log_unmangled_count(t: float, dp: DiffusionParams) -> float:
    """ln W(t; eps) = ln(eps e^eps) + (v - w) t + ln(bracket(w t))."""
    t = _check_time(t)
    dp.require_diffusive()
    return (math.log(dp.eps) + dp.eps + (dp.v - dp.w) * t
            + bracket(dp.w * t).log_magnitude)


def unmangled_count_W(t: float, dp: DiffusionParams) -> LogValue:
    """Total unmangled world count W(t; eps), in log form."""
    return LogValue(log_unmangled_count(t, dp))


def log_lambda_count(log_F: float, G: float, t1: float, t2: float,
                     dp: DiffusionParams) -> float:
    """ln lambda(F, G; t1, t2, eps) with F passed as ln F <= 0.

        lambda = F G erfc(-ln F / sqrt(2 w t1)) * eps e^eps
                 * e^{(v-w)(t1+t2)} * bracket(w t2)
    """
    t1 = _check_time(t1, "t1")
    t2 = _check_time(t2, "t2")
    dp.require_diffusive()
    log_F = float(log_F)
    if log_F > 0.0:
        raise DomainError(f"measure fraction F must satisfy F <= 1, got ln F = {log_F!r}")
    if G < 1:
        raise DomainError(f"child count G must be >= 1, got {G!r}")
    wt1 = dp.w * t1
    _warn_if_outside_regime(wt1, dp.eps)
    return (log_F + math.log(G)
            + log_erfc(-log_F / math.sqrt(2.0 * wt1))
            + math.log(dp.eps) + dp.eps
            + (dp.v - dp.w) * (t1 + t2)
            + bracket(dp.w * t2).log_magnitude)


def lambda_count(F: float, G: float, t1: float, t2: float,
                 dp: DiffusionParams) -> LogValue:
    """Final unmangled count for an outcome of G children each F smaller.

    For F too small to represent as a float use :func:`lambda_count_log`.
    """
    F = float(F)
    if not 0.0 < F <= 1.0:
        raise DomainError(f"measure fraction F must lie in (0, 1], got {F!r}")
    return LogValue(log_lambda_count(math.log(F), G, t1, t2, dp))


def lambda_count_log(log_F: float, G: float, t1: float, t2: float,
                     dp: DiffusionParams) -> LogValue:
    return LogValue(log_lambda_count(log_F, G, t1, t2, dp))


def gamma_correction(F: float, t1: float, w: float) -> float:
    """Born correction gamma(F) = erfc(-ln F / sqrt(2 w t1)), in (0, 1].

    Independent of G and t2 by construction.  For F below the float
    underflow threshold use :func:`gamma_correction_log`.
    """
    F = float(F)
    if not 0.0 < F <= 1.0:
        raise DomainError(f"measure fraction F must lie in (0, 1], got {F!r}")
    return gamma_correction_log(math.log(F), t1, w)


def gamma_correction_log(log_F: float, t1: float, w: float) -> float:
    """gamma(F) with F passed as ln F <= 0 (F = e^{-1e5} is a fine input)."""
    log_F = float(log_F)
    if log_F > 0.0:
        raise DomainError(f"measure fraction F must satisfy F <= 1, got ln F = {log_F!r}")
    t1 = _check_time(t1, "t1")
    wt1 = float(w) * t1
    if not wt1 > 0.0:
        raise DomainError(f"w * t1 must be positive, got {wt1!r}")
    _warn_if_outside_regime(wt1)
    return erfc(-log_F / math.sqrt(2.0 * wt1))


# ---------------------------------------------------------------------------
# quadrature cross-checks (the independent route used by `validate`)
# ---------------------------------------------------------------------------

def quad_unmangled_count(t: float, dp: DiffusionParams) -> LogValue:
    """W(t; eps) by adaptive quadrature of the approximate density over
    [0, max(10, 8 sqrt(w t))]; the closed form must reproduce this."""
    from scipy.integrate import quad

    t = _check_time(t)
    dp.require_diffusive()
    s = dp.w * t
    y_hi = max(10.0, 8.0 * math.sqrt(s))
    shift = float(np.max(log_mu1_approx(np.linspace(1e-6, y_hi, 512), t, dp)))
    val, _ = quad(lambda y: math.exp(log_mu1_approx(y, t, dp) - shift)
                  if y > 0.0 else 0.0, 0.0, y_hi, limit=200)
    return LogValue(math.log(val) + shift)


def quad_lambda_count(F: float, G: float, t1: float, t2: float,
                      dp: DiffusionParams) -> LogValue:
    """lambda by direct quadrature of the stage-composition integrand

        G * W(t2; y) * mu1(y - ln F, t1; eps)

    where W(t2; y) is the count formula with its boundary offset replaced by
    the stage-two starting height y."""
    from scipy.integrate import quad

    t1 = _check_time(t1, "t1")
    t2 = _check_time(t2, "t2")
    dp.require_diffusive()
    F = float(F)
    if not 0.0 < F <= 1.0:
        raise DomainError(f"measure fraction F must lie in (0, 1], got {F!r}")
    big_l = -math.log(F)
    log_b2 = bracket(dp.w * t2).log_magnitude
    vw = dp.v - dp.w

    def log_integrand(y: float) -> float:
        if y <= 0.0:
            return -math.inf
        log_w_t2 = math.log(y) + y + vw * t2 + log_b2
        return log_w_t2 + log_mu1_approx(y + big_l, t1, dp)

    y_hi = max(10.0, 8.0 * math.sqrt(dp.w * t1))
    probe = np.linspace(1e-6, y_hi, 512)
    shift = max(log_integrand(float(y)) for y in probe)
    val, _ = quad(lambda y: math.exp(log_integrand(y) - shift), 0.0, y_hi,
                  limit=200)
    return LogValue(math.log(G) + math.log(val) + shift)
