"""Lower and upper envelope distribution functions for the discrete variables.

For an allocation or configuration variable with conditional distribution
function ``F(.|X)``, the envelopes are ``F^L = inf_X F`` and ``F^U = sup_X F``
over every conditioning state the chains could be in. Inverting both at the
shared uniform ``u`` gives ``invert(F^U, u) <= invert(F(.|X), u) <=
invert(F^L, u)`` for every ``X``, which is what the bounding chains track.

Known number of components
    Envelopes of ``z_i`` over weights and parameters in their boxes, by
    annealing or by exact linear-fractional programming; and the
    two-component construction where the weight is kept monotone in the
    count of label-1 allocations.

Dirichlet-process mixture
    Closed-form envelopes over the parameter box for ``z_i`` given a set of
    possible slot partitions, for ``c_j`` given interval information on the
    allocations, and 0/1 envelopes for the canonical labels.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit, logit

from .cdf import BoundPair, SteppedCDF, invert, repair_envelopes
from .dp import DPMixtureSpec, all_partitions, bell_number, canonical_labels, others_in_order
from .errors import InvalidArgumentError, UsageError
from .finite import LOG_2PI, Dataset, FiniteMixtureSpec
from .ledger import Kind, RandomLedger
from .optimize import AnnealSchedule, OptDomain, StagedExtremum, corner_candidates, corner_extremize

__all__ = [
    "BoundPair",
    "SteppedCDF",
    "invert",
    "repair_envelopes",
    "log_weight_range",
    "exact_bounds_z_known",
    "bounds_z_known",
    "KnownBounder",
    "profile_weights",
    "TwoComponentBounder",
    "bounds_z_two_component",
    "DPBounder",
    "ALL",
]

ALL = "ALL"  # sentinel for "every partition of the slots"


def _logit_clip(F):
    F = min(max(F, 1e-300), 1.0 - 1e-16)
    return float(logit(F))


# ---------------------------------------------------------------------------
# component weight ranges
# ---------------------------------------------------------------------------


def log_weight_range(y, mu_interval, lam_interval):
    """Range of ``0.5 log(lam) - 0.5 lam (y - mu)^2`` over a box.

    Returns ``(lowest, highest)``.
    """
    m_lo, m_hi = mu_interval
    l_lo, l_hi = lam_interval
    d_min = 0.0 if m_lo <= y <= m_hi else min(abs(y - m_lo), abs(y - m_hi))
    d_max = max(abs(y - m_lo), abs(y - m_hi))

    def f(lam, d):
        return 0.5 * math.log(lam) - 0.5 * lam * d * d

    if d_min > 0:
        lam_star = min(max(1.0 / (d_min * d_min), l_lo), l_hi)
    else:
        lam_star = l_hi
    return min(f(l_lo, d_max), f(l_hi, d_max)), f(lam_star, d_min)


def log_lik_range(n, ybar, ss, mu_interval, lam_interval):
    """Range of the log-likelihood of one data group over a box: ``(lowest, highest)``."""
    if n == 0:
        return 0.0, 0.0
    m_lo, m_hi = mu_interval
    l_lo, l_hi = lam_interval
    mu_best = min(max(ybar, m_lo), m_hi)
    mu_worst = m_lo if abs(ybar - m_lo) >= abs(ybar - m_hi) else m_hi
    q_best = n * (mu_best - ybar) ** 2 + ss
    q_worst = n * (mu_worst - ybar) ** 2 + ss
    lam_best = l_hi if q_best <= 0 else min(max(n / q_best, l_lo), l_hi)

    def f(lam, q):
        return 0.5 * n * (math.log(lam) - LOG_2PI) - 0.5 * lam * q

    return min(f(l_lo, q_worst), f(l_hi, q_worst)), f(lam_best, q_best)


# ---------------------------------------------------------------------------
# known p: generic envelopes
# ---------------------------------------------------------------------------


def _pi_box(spec: FiniteMixtureSpec):
    if spec.pi_bounds is not None:
        return spec.pi_bounds
    return np.tile([0.0, 1.0], (spec.p, 1))


def _linear_fractional_extreme(num, den, box, direction):
    """Extremum of ``num.pi / den.pi`` over ``{pi in box, sum pi = 1}`` (Charnes-Cooper LP)."""
    p = len(num)
    sign = 1.0 if direction == "min" else -1.0
    # variables (x_1..x_p, s): x = s * pi, den.x = 1
    c = np.concatenate([sign * num, [0.0]])
    A_eq = np.vstack([np.concatenate([den, [0.0]]), np.concatenate([np.ones(p), [-1.0]])])
    b_eq = np.array([1.0, 0.0])
    A_ub = np.vstack([
        np.hstack([np.eye(p), -box[:, 1:2]]),
        np.hstack([-np.eye(p), box[:, 0:1]]),
    ])
    b_ub = np.zeros(2 * p)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                  bounds=[(0, None)] * (p + 1), method="highs")
    if not res.success:
        raise UsageError(f"weight box is infeasible: {res.message}")
    return sign * res.fun


def exact_bounds_z_known(i, data: Dataset, spec: FiniteMixtureSpec) -> BoundPair:
    """Exact envelopes of ``z_i`` over the weight and parameter boxes.

    The component factors sit at their box extremes (lowest on the labels
    being summed for the infimum, highest elsewhere) and the weights solve a
    linear-fractional program.
    """
    p = spec.p
    if p == 1:
        one = SteppedCDF(np.ones(1))
        return BoundPair(one, one)
    ranges = np.array([log_weight_range(data.y[i], spec.mu_interval(j), spec.lambda_interval(j))
                       for j in range(p)])
    shift = ranges.max()
    g_lo, g_hi = np.exp(ranges[:, 0] - shift), np.exp(ranges[:, 1] - shift)
    box = _pi_box(spec)
    lower, upper = np.ones(p), np.ones(p)
    for ell in range(1, p):
        head = np.arange(p) < ell
        a = np.where(head, g_lo, g_hi)
        lower[ell - 1] = _linear_fractional_extreme(np.where(head, a, 0.0), a, box, "min")
        b = np.where(head, g_hi, g_lo)
        upper[ell - 1] = _linear_fractional_extreme(np.where(head, b, 0.0), b, box, "max")
    return repair_envelopes(lower, upper)


def profile_weights(g, ell, box, direction):
    """Weights in ``box`` on the simplex that extremize ``F(ell)`` for fixed component factors.

    ``F(ell) = sum_{j<=ell} pi_j g_j / sum_j pi_j g_j`` grows with mass on the
    first ``ell`` labels and shrinks with mass on the rest, so the extremum
    starts from the lower bounds and fills the favoured labels first (largest
    factor first), then the others (smallest factor first).
    """
    g = np.asarray(g, dtype=float)
    p = len(g)
    head = np.arange(p) < ell
    favoured = head if direction == "max" else ~head
    pi = box[:, 0].astype(float).copy()
    remaining = 1.0 - pi.sum()
    first = np.flatnonzero(favoured)[np.argsort(-g[favoured], kind="stable")]
    rest = np.flatnonzero(~favoured)[np.argsort(g[~favoured], kind="stable")]
    for j in np.concatenate([first, rest]):
        if remaining <= 0:
            break
        step = min(box[j, 1] - pi[j], remaining)
        pi[j] += step
        remaining -= step
    return pi


class KnownBounder:
    """Envelopes of every ``z_i`` for a ``p``-component mixture, computed once.

    ``optimizer="exact"`` solves each envelope value exactly;
    ``optimizer="anneal"`` anneals over the component means (and precisions)
    with ledger cells at ``t = 0``, the weights being set to their exact
    extremizer for each candidate, and picks, for each uniform, the first
    stage whose realization repeats.
    """

    def __init__(self, data: Dataset, spec: FiniteMixtureSpec, optimizer="anneal",
                 schedule: AnnealSchedule | None = None, ledger: RandomLedger | None = None):
        if spec.p > 1 and not spec.bounded:
            raise UsageError("envelopes for z need bounded parameters")
        if optimizer not in ("anneal", "exact"):
            raise InvalidArgumentError("optimizer must be 'anneal' or 'exact'")
        if optimizer == "anneal" and ledger is None:
            raise InvalidArgumentError("annealing needs a ledger")
        self.data, self.spec, self.optimizer = data, spec, optimizer
        self.schedule = schedule or AnnealSchedule()
        self.ledger = ledger
        self.box = _pi_box(spec)
        self._exact = {}
        self._staged = {}

    def _domain(self):
        spec = self.spec
        p = spec.p
        lo = [spec.mu_interval(j)[0] for j in range(p)]
        hi = [spec.mu_interval(j)[1] for j in range(p)]
        if spec.lambda_known is None:
            lo += [spec.lambda_interval(j)[0] for j in range(p)]
            hi += [spec.lambda_interval(j)[1] for j in range(p)]
        return OptDomain(lo, hi)

    def _unpack(self, x):
        spec, p = self.spec, self.spec.p
        mu = np.asarray(x[:p], dtype=float)
        if spec.lambda_known is not None:
            return mu, np.asarray(spec.lambda_known, dtype=float)
        return mu, np.asarray(x[p:2 * p], dtype=float)

    def cdf_value(self, i, ell, x, direction):
        """``F(ell)`` of ``z_i`` at component parameters ``x`` with the weights at their extremizer."""
        mu, lam = self._unpack(x)
        lg = 0.5 * np.log(lam) - 0.5 * lam * (self.data.y[i] - mu) ** 2
        g = np.exp(lg - lg.max())
        pi = profile_weights(g, ell, self.box, direction)
        w = pi * g
        return float(w[:ell].sum() / w.sum())

    def _stage(self, i, ell, direction):
        key = (i, ell, direction)
        if key not in self._staged:
            index = (i * self.spec.p + ell) * 2 + (direction == "max")
            stream = self.ledger.stream(0, Kind.ANNEAL, index)

            def objective(c, d):
                return _logit_clip(self.cdf_value(i, ell, c, direction))

            self._staged[key] = StagedExtremum(objective, self._domain(), direction, self.schedule, stream)
        return self._staged[key]

    def bounds(self, i, u=None) -> BoundPair:
        """Envelopes of ``z_i``; with ``u`` the annealed stage is settled for that uniform."""
        p = self.spec.p
        if p == 1:
            one = SteppedCDF(np.ones(1))
            return BoundPair(one, one)
        if self.optimizer == "exact":
            if i not in self._exact:
                self._exact[i] = exact_bounds_z_known(i, self.data, self.spec)
            return self._exact[i]
        lower, upper = np.ones(p), np.ones(p)
        for ell in range(1, p):
            for direction, out in (("min", lower), ("max", upper)):
                staged = self._stage(i, ell, direction)
                if u is None:
                    point, _ = staged.stage(self.schedule.max_extensions)
                else:
                    point, _ = staged.settle(
                        lambda pt, v, ell=ell, d=direction: u <= self.cdf_value(i, ell, pt[0], d))
                out[ell - 1] = self.cdf_value(i, ell, point[0], direction)
        return repair_envelopes(lower, upper)


def bounds_z_known(i, data, spec, optimizer="anneal", schedule=None, ledger=None, u=None) -> BoundPair:
    """Envelopes of ``z_i`` for a mixture with known ``p`` (one-off convenience)."""
    return KnownBounder(data, spec, optimizer, schedule, ledger).bounds(i, u)


# ---------------------------------------------------------------------------
# two components with monotone weight
# ---------------------------------------------------------------------------


class TwoComponentBounder:
    """Envelopes of ``z_i`` for two components with known precisions.

    The extremizing means do not depend on the weight: the infimum of
    ``F(1)`` puts ``mu_1`` far from ``y_i`` and ``mu_2`` near it, the supremum
    the reverse. ``optimizer="corner"`` enumerates ``{y_i, lo, hi}`` per mean;
    ``optimizer="anneal"`` anneals over the two means with ledger cells at
    ``t = 0`` and settles the stage per uniform.
    """

    def __init__(self, data: Dataset, spec: FiniteMixtureSpec, optimizer="corner",
                 schedule: AnnealSchedule | None = None, ledger: RandomLedger | None = None):
        if spec.p != 2 or spec.lambda_known is None or not spec.bounded:
            raise UsageError("two-component envelopes need p = 2, known precisions and mean bounds")
        if optimizer not in ("corner", "anneal"):
            raise InvalidArgumentError("optimizer must be 'corner' or 'anneal'")
        if optimizer == "anneal" and ledger is None:
            raise InvalidArgumentError("annealing needs a ledger")
        self.data, self.spec, self.optimizer = data, spec, optimizer
        self.schedule = schedule or AnnealSchedule()
        self.ledger = ledger
        self.lam = spec.lambda_known
        self._corner = {}
        self._staged = {}

    def log_ratio(self, i, mu):
        """``log(g_1 / g_2)`` at means ``mu``; ``F(1) = expit(logit(pi) + log_ratio)``."""
        y, lam = self.data.y[i], self.lam
        return (0.5 * math.log(lam[0] / lam[1]) - 0.5 * lam[0] * (y - mu[0]) ** 2
                + 0.5 * lam[1] * (y - mu[1]) ** 2)

    def cdf1(self, i, mu, pi):
        return float(expit(math.log(pi) - math.log1p(-pi) + self.log_ratio(i, mu)))

    def corner_points(self, i):
        if i not in self._corner:
            y = self.data.y[i]
            cands = [corner_candidates(y, self.spec.mu_interval(0)), corner_candidates(y, self.spec.mu_interval(1))]
            obj = lambda mu: self.log_ratio(i, mu)
            lo_pt, _ = corner_extremize(obj, cands, "min")
            hi_pt, _ = corner_extremize(obj, cands, "max")
            self._corner[i] = (lo_pt, hi_pt)
        return self._corner[i]

    def _stage(self, i, direction):
        key = (i, direction)
        if key not in self._staged:
            stream = self.ledger.stream(0, Kind.ANNEAL, 2 * i + (direction == "max"))
            domain = OptDomain([self.spec.mu_interval(0)[0], self.spec.mu_interval(1)[0]],
                               [self.spec.mu_interval(0)[1], self.spec.mu_interval(1)[1]])
            self._staged[key] = StagedExtremum(lambda c, d: self.log_ratio(i, c), domain, direction,
                                               self.schedule, stream)
        return self._staged[key]

    def argopt(self, i, direction, pi=None, u=None):
        if self.optimizer == "corner":
            return self.corner_points(i)[0 if direction == "min" else 1]
        staged = self._stage(i, direction)
        if u is None or pi is None:
            return staged.stage(self.schedule.max_extensions)[0][0]
        point, _ = staged.settle(lambda pt, v: u <= self.cdf1(i, pt[0], pi))
        return point[0]

    def bounds(self, i, pi_low, pi_high, u=None) -> BoundPair:
        """``F^L`` at the weight ``pi_low``, ``F^U`` at ``pi_high``."""
        lo = self.cdf1(i, self.argopt(i, "min", pi_low, u), pi_low)
        hi = self.cdf1(i, self.argopt(i, "max", pi_high, u), pi_high)
        return BoundPair(SteppedCDF([min(lo, hi), 1.0]), SteppedCDF([hi, 1.0]))


def bounds_z_two_component(i, data, spec, pi_low, pi_high, optimizer="corner", schedule=None,
                           ledger=None, u=None) -> BoundPair:
    """One-off two-component envelopes (see :class:`TwoComponentBounder`)."""
    return TwoComponentBounder(data, spec, optimizer, schedule, ledger).bounds(i, pi_low, pi_high, u)


# ---------------------------------------------------------------------------
# Dirichlet-process mixture
# ---------------------------------------------------------------------------


def _linear_fractional_box(a, m, lo, hi, direction):
    """Extremum of ``sum a_g w_g / sum m_g w_g`` with every ``w_g`` in ``[lo, hi]``."""
    a = np.asarray(a, float)
    m = np.asarray(m, float)
    ratio = a / m
    order = np.argsort(ratio if direction == "min" else -ratio, kind="stable")
    best = None
    for r in range(len(a) + 1):
        w = np.full(len(a), lo)
        w[order[:r]] = hi
        den = float((m * w).sum())
        v = float((a * w).sum()) / den if den > 0 else float(a.sum() / m.sum())
        if best is None or (v < best if direction == "min" else v > best):
            best = v
    return best


def group_structure(s):
    """Groups of slots by label: list of slot-index arrays in label order."""
    s = np.asarray(s)
    return [np.flatnonzero(s == ell) for ell in range(1, int(s.max()) + 1)]


class DPBounder:
    """Envelopes for the Dirichlet-process mixture over the parameter box.

    Parameters
    ----------
    data : Dataset
    spec : DPMixtureSpec
        Must be in truncated mode.
    budget : int
        Largest explicit partition set; beyond it the set becomes ``ALL``.
    enumerate_limit : int
        Largest number of optional observations enumerated exactly when
        bounding the likelihood ratio of a slot.
    """

    def __init__(self, data: Dataset, spec: DPMixtureSpec, budget=4096, enumerate_limit=12):
        if not spec.truncated:
            raise UsageError("envelopes need the truncated (bounded) mode")
        self.data, self.spec = data, spec
        self.M = spec.M
        self.budget = int(budget)
        self.enumerate_limit = int(enumerate_limit)
        ranges = np.array([log_weight_range(y, spec.mu_interval, spec.lambda_interval) for y in data.y])
        self.log_g_lo, self.log_g_hi = ranges[:, 0], ranges[:, 1]
        # single-observation log-likelihood ranges for the subadditive relaxation
        self.point_range = self.log_g_hi - self.log_g_lo
        self._z_cache = {}
        self._all = None

    # -- partition sets ------------------------------------------------------
    def all_partitions(self):
        """Every partition explicitly when within budget, else the ``ALL`` sentinel."""
        if self._all is None:
            self._all = frozenset(all_partitions(self.M)) if bell_number(self.M) <= self.budget else ALL
        return self._all

    # -- allocations ---------------------------------------------------------
    def _z_bounds_partition(self, i, s):
        groups = group_structure(s)
        M = self.M
        m = np.array([len(g) for g in groups], float)
        # log-space ratio of highest to lowest factor; work with lo = exp(-spread), hi = 1
        spread = self.log_g_hi[i] - self.log_g_lo[i]
        # an underflowed lower factor widens the box to [0, 1], which only loosens
        lo = math.exp(-spread)
        lower, upper = np.ones(M), np.ones(M)
        for ell in range(1, M):
            a = np.array([np.count_nonzero(g < ell) for g in groups], float)
            lower[ell - 1] = _linear_fractional_box(a, m, lo, 1.0, "min")
            upper[ell - 1] = _linear_fractional_box(a, m, lo, 1.0, "max")
        return lower, upper

    def bounds_z(self, i, partitions) -> BoundPair:
        """Envelopes of ``z_i`` over every partition in the set and the parameter box."""
        if partitions is ALL:
            partitions = frozenset([tuple(range(1, self.M + 1))])
        key = (i, partitions)
        hit = self._z_cache.get(key)
        if hit is not None:
            return hit
        lower, upper = np.ones(self.M), np.zeros(self.M)
        for s in partitions:
            lo, hi = self._z_bounds_partition(i, s)
            lower = np.minimum(lower, lo)
            upper = np.maximum(upper, hi)
        upper[-1] = 1.0
        out = repair_envelopes(lower, upper)
        if len(self._z_cache) > 200_000:
            self._z_cache.clear()
        self._z_cache[key] = out
        return out

    # -- configuration -------------------------------------------------------
    def _group_stats(self, idx):
        y = self.data.y[idx]
        n = y.size
        if n == 0:
            return 0, 0.0, 0.0
        ybar = float(y.mean())
        return n, ybar, float(((y - ybar) ** 2).sum())

    def log_rho(self, idx):
        """Log of the largest-to-smallest likelihood ratio of a fixed data group over the box."""
        n, ybar, ss = self._group_stats(np.asarray(idx, dtype=int))
        lo, hi = log_lik_range(n, ybar, ss, self.spec.mu_interval, self.spec.lambda_interval)
        return hi - lo

    def log_rho_sup(self, definite, optional):
        """Upper bound of the log likelihood ratio over every data group ``definite + subset(optional)``.

        Exact enumeration for at most ``enumerate_limit`` optional points,
        otherwise the subadditive bound ``log_rho(definite) + sum of per-point ranges``.
        """
        definite = list(definite)
        optional = list(optional)
        if not optional:
            return self.log_rho(definite)
        if len(optional) > self.enumerate_limit:
            return self.log_rho(definite) + float(self.point_range[optional].sum())
        best = -np.inf
        for r in range(len(optional) + 1):
            for sub in itertools.combinations(optional, r):
                best = max(best, self.log_rho(definite + list(sub)))
        return best

    def _c_envelope_values(self, mult, log_rho, a_lo, a_hi):
        """Infimum and supremum CDF values on ``1..M`` for one multiplicity vector."""
        M = self.M
        K = M - 1
        A = np.cumsum(mult)
        kj = len(mult)
        lower, upper = np.ones(M), np.ones(M)
        if kj:
            rest_lo = np.log((K - A + a_hi) / A)
            rest_hi = np.log((K - A + a_lo) / A)
            lower[:kj] = expit(-(rest_lo + log_rho))
            upper[:kj] = expit(-(rest_hi - log_rho))
        return lower, upper

    def bounds_c(self, j, partitions, z_low, z_high) -> BoundPair:
        """Envelopes of ``c_j`` (0-based slot ``j``) on the padded support ``1..M``.

        ``partitions`` are the possible mid-sweep slot partitions; the data on
        slot ``j`` ranges over the observations whose allocation interval
        contains it.
        """
        slot = j + 1
        definite = np.flatnonzero((z_low == slot) & (z_high == slot))
        optional = np.flatnonzero((z_low <= slot) & (z_high >= slot) & ~((z_low == slot) & (z_high == slot)))
        log_rho = self.log_rho_sup(definite, optional)
        a_lo, a_hi = self.spec.alpha_interval
        M = self.M
        if M == 1:
            one = SteppedCDF(np.ones(1))
            return BoundPair(one, one)
        if partitions is ALL:
            low, _ = self._c_envelope_values(np.ones(M - 1), log_rho, a_lo, a_hi)
            _, high = self._c_envelope_values(np.array([M - 1.0]), log_rho, a_lo, a_hi)
            return repair_envelopes(low, high)
        lower, upper = np.ones(M), np.zeros(M)
        seen = set()
        for s in partitions:
            _, mult = others_in_order(s, j)
            key = tuple(mult)
            if key in seen:
                continue
            seen.add(key)
            lo, hi = self._c_envelope_values(np.array(mult, float), log_rho, a_lo, a_hi)
            lower = np.minimum(lower, lo)
            upper = np.maximum(upper, hi)
        return repair_envelopes(lower, upper)

    def advance_partitions(self, partitions, j, c_low, c_high):
        """Possible partitions after slot ``j`` takes a configuration value in ``[c_low, c_high]``."""
        if partitions is ALL:
            return ALL
        out = set()
        fresh = self.M + 1
        for s in partitions:
            order, _ = others_in_order(s, j)
            for cj in range(c_low, min(c_high, len(order) + 1) + 1):
                groups = list(s)
                groups[j] = order[cj - 1] if cj <= len(order) else fresh
                out.add(tuple(canonical_labels(groups).tolist()))
            if len(out) > self.budget:
                return ALL
        return frozenset(out)

    # -- canonical labels ----------------------------------------------------
    def bounds_s(self, j, partitions) -> BoundPair:
        """0/1 envelopes of ``s_j`` (0-based slot) over the partition set."""
        M = self.M
        if partitions is ALL:
            lo_label, hi_label = 1, j + 1
        else:
            vals = [s[j] for s in partitions]
            lo_label, hi_label = min(vals), max(vals)
        # F^U jumps at the smallest label, F^L at the largest
        return BoundPair(SteppedCDF.point_mass(hi_label, M), SteppedCDF.point_mass(lo_label, M))
