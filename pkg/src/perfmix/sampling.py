"""Uniform-to-variate transforms, truncated rejection sampling and adaptive rejection sampling.

Every sampler here turns ledger uniforms into variates through a fixed,
documented transform so that a replay with the same cells gives the same
numbers:

* Gamma(shape, rate) from one uniform: ``gammaincinv(shape, u) / rate``.
* Normal(mean, sd) from one uniform: ``mean + sd * ndtri(u)``.
* Dirichlet(a) from one uniform per coordinate: normalized Gamma(a_j, 1).

Truncated draws consume a :class:`~perfmix.ledger.Stream` sequentially.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import InvalidArgumentError, NumericalDegeneracyError, SamplerStallError

DEFAULT_BUDGET = 100_000
# below this interval mass plain rejection is replaced by restricted inversion
INVERSION_THRESHOLD = 0.05
_TINY = np.finfo(float).tiny


def gamma_from_uniform(shape, rate, u):
    """Inverse-CDF Gamma(shape, rate) draw (rate parameterization)."""
    x = special.gammaincinv(shape, u) / rate
    return max(float(x), _TINY)


def normal_from_uniform(mean, sd, u):
    return float(mean + sd * special.ndtri(u))


def exponential_from_uniform(u):
    return -np.log(u)


def dirichlet_from_uniforms(alpha, u):
    """Normalized Gamma(alpha_j, 1) draws, one uniform per coordinate."""
    alpha = np.asarray(alpha, dtype=float)
    g = special.gammaincinv(alpha, np.asarray(u, dtype=float))
    g = np.maximum(g, _TINY)
    return g / g.sum()


# ---------------------------------------------------------------------------
# truncated families
# ---------------------------------------------------------------------------


class GammaForm:
    """Gamma(shape, rate) base density."""

    def __init__(self, shape, rate):
        if not (shape > 0 and rate > 0):
            raise InvalidArgumentError(f"gamma needs positive shape and rate, got {shape}, {rate}")
        self.shape = float(shape)
        self.rate = float(rate)

    def cdf(self, x):
        return special.gammainc(self.shape, self.rate * x)

    def sf(self, x):
        return special.gammaincc(self.shape, self.rate * x)

    def ppf(self, q):
        return special.gammaincinv(self.shape, q) / self.rate

    def isf(self, q):
        return special.gammainccinv(self.shape, q) / self.rate

    def draw(self, u):
        return gamma_from_uniform(self.shape, self.rate, u)

    def median(self):
        return self.ppf(0.5)


class NormalForm:
    """Normal(mean, sd) base density."""

    def __init__(self, mean, sd):
        if not sd > 0:
            raise InvalidArgumentError(f"normal needs positive sd, got {sd}")
        self.mean = float(mean)
        self.sd = float(sd)

    def cdf(self, x):
        return special.ndtr((x - self.mean) / self.sd)

    def sf(self, x):
        return special.ndtr((self.mean - x) / self.sd)

    def ppf(self, q):
        return self.mean + self.sd * special.ndtri(q)

    def isf(self, q):
        return self.mean - self.sd * special.ndtri(q)

    def draw(self, u):
        return normal_from_uniform(self.mean, self.sd, u)

    def median(self):
        return self.mean


def interval_mass(form, lo, hi):
    """Base-measure mass of [lo, hi], evaluated on the more accurate tail."""
    if form.median() <= lo:
        return float(form.sf(lo) - form.sf(hi))
    return float(form.cdf(hi) - form.cdf(lo))


def _restricted_inversion(form, lo, hi, u):
    # invert on whichever tail keeps precision
    if form.median() <= lo:
        s_lo, s_hi = form.sf(lo), form.sf(hi)
        x = form.isf(s_lo - u * (s_lo - s_hi))
    else:
        c_lo, c_hi = form.cdf(lo), form.cdf(hi)
        x = form.ppf(c_lo + u * (c_hi - c_lo))
    return float(min(max(x, lo), hi))


def rejection_truncated(form, interval, stream, budget=DEFAULT_BUDGET):
    """Draw from ``form`` restricted to ``interval`` using ``stream`` uniforms.

    When the interval carries at least ``INVERSION_THRESHOLD`` of the base
    mass, proposals are plain inverse-CDF draws accepted when they land
    inside; otherwise one uniform is inverted through the restricted CDF.
    Either way cells are read in order from the stream.

    Parameters
    ----------
    form : GammaForm, NormalForm or LogConcaveForm
    interval : tuple of float
        Closed bounds; infinite endpoints are allowed.
    stream : Stream
    budget : int
        Maximum number of proposals before :class:`SamplerStallError`.
    """
    lo, hi = float(interval[0]), float(interval[1])
    if not lo <= hi:
        raise InvalidArgumentError(f"empty interval [{lo}, {hi}]")
    if isinstance(form, LogConcaveForm):
        return adaptive_rejection_sample(form, lo, hi, stream, budget=budget)
    mass = interval_mass(form, lo, hi)
    if mass <= 0.0 or not np.isfinite(mass):
        if lo == hi:
            return lo
        raise SamplerStallError(f"interval [{lo}, {hi}] has no base mass", proposals=0, acceptance=0.0)
    if mass < INVERSION_THRESHOLD:
        return _restricted_inversion(form, lo, hi, stream.next())
    for _ in range(budget):
        x = form.draw(stream.next())
        if lo <= x <= hi:
            return x
    raise SamplerStallError(
        f"no acceptance in {budget} proposals on [{lo}, {hi}]", proposals=budget, acceptance=mass
    )


def normal_gamma_truncated(
    shape, rate, mean, scale, lam_interval, mu_interval, stream, budget=DEFAULT_BUDGET
):
    """Joint draw of ``lam ~ Gamma(shape, rate)``, ``mu | lam ~ N(mean, scale / lam)`` on a box.

    ``lam`` comes from the Gamma restricted to its interval (restricted
    inversion when the interval mass is small), ``mu`` is proposed
    unrestricted and the pair is kept only when ``mu`` lands in its
    interval. Infinite intervals turn this into the plain conjugate draw.
    Consumes two stream cells per proposal.
    """
    gform = GammaForm(shape, rate)
    lam_lo, lam_hi = lam_interval
    mu_lo, mu_hi = mu_interval
    unbounded_lam = lam_lo <= 0 and not np.isfinite(lam_hi)
    lam_mass = 1.0 if unbounded_lam else interval_mass(gform, lam_lo, lam_hi)
    if lam_mass <= 0 or not np.isfinite(lam_mass):
        raise SamplerStallError(f"precision interval [{lam_lo}, {lam_hi}] has no mass", proposals=0)
    for _ in range(budget):
        u_lam, u_mu = stream.next(), stream.next()
        if unbounded_lam:
            lam = gform.draw(u_lam)
        else:
            lam = _restricted_inversion(gform, lam_lo, lam_hi, u_lam)
            lam = max(lam, _TINY)
        mu = normal_from_uniform(mean, math.sqrt(scale / lam), u_mu)
        if mu_lo <= mu <= mu_hi:
            return mu, lam
    raise SamplerStallError(
        f"normal-gamma draw found no mean inside [{mu_lo}, {mu_hi}] in {budget} proposals",
        proposals=budget,
    )


# ---------------------------------------------------------------------------
# adaptive rejection sampling
# ---------------------------------------------------------------------------


class LogConcaveForm:
    """Log-concave density given by its log and derivative (up to a constant)."""

    def __init__(self, logpdf, dlogpdf, mode_hint=0.0):
        self.logpdf = logpdf
        self.dlogpdf = dlogpdf
        self.mode_hint = float(mode_hint)


def _initial_abscissae(form, lo, hi):
    if np.isfinite(lo) and np.isfinite(hi):
        width = hi - lo
        return [lo + 0.05 * width, lo + 0.5 * width, hi - 0.05 * width]
    m = form.mode_hint
    if np.isfinite(lo):
        m = max(m, lo)
    if np.isfinite(hi):
        m = min(m, hi)
    pts = [m]
    # step out until the derivatives straddle zero on unbounded sides
    step = 1.0
    if not np.isfinite(lo):
        x = m - step
        while form.dlogpdf(x) <= 0:
            step *= 2.0
            x = m - step
            if step > 1e12:
                raise NumericalDegeneracyError("could not bracket the mode from the left")
        pts.insert(0, x)
    if not np.isfinite(hi):
        step = 1.0
        x = m + step
        while form.dlogpdf(x) >= 0:
            step *= 2.0
            x = m + step
            if step > 1e12:
                raise NumericalDegeneracyError("could not bracket the mode from the right")
        pts.append(x)
    if len(pts) == 2:
        pts.insert(1, 0.5 * (pts[0] + pts[1]))
    return pts


class _Hull:
    """Piecewise-exponential upper envelope built from tangents."""

    def __init__(self, form, lo, hi, xs):
        self.form = form
        self.lo, self.hi = lo, hi
        self.xs = []
        self.hs = []
        self.dhs = []
        # a lone tangent on an unbounded side has infinite mass, so build once all points are in
        for x in sorted(set(xs)):
            self._insert(x, build=False)
        self._build()

    def _insert(self, x, build=True):
        k = int(np.searchsorted(self.xs, x))
        self.xs.insert(k, x)
        self.hs.insert(k, float(self.form.logpdf(x)))
        self.dhs.insert(k, float(self.form.dlogpdf(x)))
        if build:
            self._build()

    def _build(self):
        x, h, d = np.array(self.xs), np.array(self.hs), np.array(self.dhs)
        # intersections of adjacent tangents
        z = np.empty(len(x) + 1)
        z[0], z[-1] = self.lo, self.hi
        for k in range(len(x) - 1):
            dd = d[k] - d[k + 1]
            if abs(dd) < 1e-12 * max(1.0, abs(d[k])):
                z[k + 1] = 0.5 * (x[k] + x[k + 1])
            else:
                z[k + 1] = (h[k + 1] - h[k] - x[k + 1] * d[k + 1] + x[k] * d[k]) / dd
        z[1:-1] = np.clip(z[1:-1], x[:-1], x[1:])
        self.z = z
        hmax = np.max(h)
        self.shift = hmax
        masses = np.empty(len(x))
        for k in range(len(x)):
            masses[k] = self._segment_mass(k)
        if not np.all(np.isfinite(masses)) or masses.sum() <= 0:
            raise NumericalDegeneracyError("adaptive rejection hull has no finite mass")
        self.masses = masses
        self.cum = np.cumsum(masses)

    def _upper(self, k, x):
        return self.hs[k] + self.dhs[k] * (x - self.xs[k]) - self.shift

    def _segment_mass(self, k):
        a, b = self.z[k], self.z[k + 1]
        d = self.dhs[k]
        if b <= a:
            return 0.0
        ua = self._upper(k, a) if np.isfinite(a) else -np.inf
        ub = self._upper(k, b) if np.isfinite(b) else -np.inf
        if abs(d) < 1e-14:
            return math.exp(self._upper(k, self.xs[k])) * (b - a)
        # integral of exp(u(x)) over [a, b] = (exp(ub) - exp(ua)) / d
        if d > 0:
            return math.exp(ub) * -math.expm1(ua - ub) / d if np.isfinite(ub) else np.inf
        return math.exp(ua) * -math.expm1(ub - ua) / -d if np.isfinite(ua) else np.inf

    def sample(self, u):
        target = u * self.cum[-1]
        k = int(np.searchsorted(self.cum, target))
        k = min(k, len(self.masses) - 1)
        prev = self.cum[k - 1] if k > 0 else 0.0
        frac = (target - prev) / self.masses[k] if self.masses[k] > 0 else 0.5
        a, b = self.z[k], self.z[k + 1]
        d = self.dhs[k]
        if abs(d) < 1e-14:
            x = a + frac * (b - a)
        elif d > 0:
            ub = self._upper(k, b)
            # solve exp(u(x)) - exp(u(a)) = frac * mass * d from the right end for stability
            ua_minus_ub = self._upper(k, a) - ub if np.isfinite(a) else -np.inf
            lhs = math.exp(ua_minus_ub) + frac * (-math.expm1(ua_minus_ub))
            x = b + math.log(lhs) / d
        else:
            ua = self._upper(k, a)
            ub_minus_ua = self._upper(k, b) - ua if np.isfinite(b) else -np.inf
            rhs = 1.0 - frac * (-math.expm1(ub_minus_ua))
            x = a + math.log(rhs) / d
        return float(min(max(x, a), b)), k

    def upper_at(self, x, k):
        return self._upper(k, x) + self.shift

    def lower_at(self, x):
        k = int(np.searchsorted(self.xs, x))
        if k == 0 or k == len(self.xs):
            return -np.inf
        x0, x1 = self.xs[k - 1], self.xs[k]
        h0, h1 = self.hs[k - 1], self.hs[k]
        return ((x1 - x) * h0 + (x - x0) * h1) / (x1 - x0)


def adaptive_rejection_sample(form, lo, hi, stream, budget=DEFAULT_BUDGET, max_points=50):
    """Tangent-hull adaptive rejection sampling of a log-concave density on [lo, hi].

    Each proposal consumes two stream cells: one to place the point under the
    hull, one for the squeeze/accept test. Rejected points refine the hull.
    """
    if lo == hi:
        return lo
    hull = _Hull(form, lo, hi, _initial_abscissae(form, lo, hi))
    for _ in range(budget):
        x, k = hull.sample(stream.next())
        w = stream.next()
        log_w = math.log(w)
        upper = hull.upper_at(x, k)
        if log_w <= hull.lower_at(x) - upper:
            return x
        hx = float(form.logpdf(x))
        if log_w <= hx - upper:
            return x
        if len(hull.xs) < max_points and x not in hull.xs:
            hull._insert(x)
    raise SamplerStallError(f"adaptive rejection found no acceptance in {budget} proposals", proposals=budget)
