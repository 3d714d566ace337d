"""Finite-M mixture with Dirichlet-process component parameters.

Model::

    y_i | z_i = j        ~ N(mu_j, 1 / lam_j),     P(z_i = j) = 1 / M
    theta_1..theta_M     ~ iid G,   G ~ DP(alpha G0)
    G0:  lam ~ Gamma(eta / 2, zeta / 2),   mu | lam ~ N(mu0, psi / lam)

Ties among the ``theta_j`` give a random number ``k <= M`` of distinct
components. The state is kept as allocations ``z`` (1-based slots), the
configuration ``c`` produced by the last sweep, canonical labels ``s``
(first-appearance order of the distinct values, so ``s_1 = 1``) and the
distinct values ``theta*_1..theta*_k``. The slot parameters are a view
``theta_j = theta*_{s_j}``.

Configuration semantics: while sweeping slot ``j``, ``c_j = l <= k_j`` puts
slot ``j`` on the ``l``-th distinct value of the other slots (first-appearance
order over slot index, using the values as they stand mid-sweep) and
``c_j = k_j + 1`` gives it a new value. The partition of slots after a full
sweep is a function of ``c`` alone.

A transition at time ``t`` draws ``alpha`` and the distinct values given the
previous ``(z, s)``, then ``z``, then sweeps ``c`` (auxiliary new-value
proposal first, then ``c_j``, slot by slot) and relabels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .cdf import SteppedCDF, invert
from .errors import InvalidArgumentError, InvariantViolationError
from .finite import LOG_2PI, Dataset, allocation_cdfs, invert_rows, summary_arrays
from .ledger import Kind, RandomLedger
from .sampling import (
    DEFAULT_BUDGET,
    LogConcaveForm,
    NormalForm,
    adaptive_rejection_sample,
    normal_gamma_truncated,
    rejection_truncated,
)


def _interval(value, name, positive=False):
    if value is None:
        return None
    lo, hi = (float(v) for v in value)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo >= hi:
        raise InvalidArgumentError(f"{name} must be a finite interval with lo < hi")
    if positive and lo < 0:
        raise InvalidArgumentError(f"{name} must lie in [0, inf)")
    return (lo, hi)


@dataclass(frozen=True)
class DPMixtureSpec:
    """Prior, bounds and concentration settings of the finite-M DP mixture.

    Parameters
    ----------
    M : int
        Maximum number of components.
    eta, zeta, mu0, psi : float
        Base measure hyperparameters.
    alpha : float
        Fixed concentration; ignored when ``alpha_prior`` is given.
    alpha_prior : tuple of float, optional
        Gamma(shape, rate) prior on the concentration.
    alpha_bounds : tuple of float, optional
        Interval for a random concentration.
    mu_bounds, lambda_bounds : tuple of float, optional
        Box for every component; enables the truncated mode.
    lambda_known : float, optional
        Shared known precision; components then carry only a mean.
    """

    M: int
    eta: float = 1.0
    zeta: float = 1.0
    mu0: float = 0.0
    psi: float = 1.0
    alpha: float = 1.0
    alpha_prior: tuple | None = None
    alpha_bounds: tuple | None = None
    mu_bounds: tuple | None = None
    lambda_bounds: tuple | None = None
    lambda_known: float | None = None

    def __post_init__(self):
        if int(self.M) < 1:
            raise InvalidArgumentError("M must be at least 1")
        object.__setattr__(self, "M", int(self.M))
        if not self.psi > 0:
            raise InvalidArgumentError("psi must be positive")
        if self.lambda_known is None and not (self.eta > 0 and self.zeta > 0):
            raise InvalidArgumentError("eta and zeta must be positive")
        if self.lambda_known is not None and not self.lambda_known > 0:
            raise InvalidArgumentError("lambda_known must be positive")
        object.__setattr__(self, "mu_bounds", _interval(self.mu_bounds, "mu_bounds"))
        object.__setattr__(self, "lambda_bounds", _interval(self.lambda_bounds, "lambda_bounds", True))
        if self.alpha_prior is not None:
            a, b = (float(v) for v in self.alpha_prior)
            if not (a > 0 and b > 0):
                raise InvalidArgumentError("alpha prior needs positive shape and rate")
            object.__setattr__(self, "alpha_prior", (a, b))
            ab = _interval(self.alpha_bounds, "alpha_bounds", True) if self.alpha_bounds else None
            if ab is not None and ab[0] <= 0:
                raise InvalidArgumentError("alpha_bounds must lie in (0, inf)")
            object.__setattr__(self, "alpha_bounds", ab)
        elif not self.alpha > 0:
            raise InvalidArgumentError("alpha must be positive")
        if self.mu_bounds is not None and self.lambda_known is None and self.lambda_bounds is None:
            raise InvalidArgumentError("truncated mode with unknown precisions needs lambda_bounds")
        if self.lambda_bounds is not None and self.lambda_bounds[0] <= 0 and self.mu_bounds is not None:
            raise InvalidArgumentError("precision box must exclude zero")

    @property
    def truncated(self) -> bool:
        return self.mu_bounds is not None

    @property
    def alpha_random(self) -> bool:
        return self.alpha_prior is not None

    @property
    def alpha_interval(self):
        if not self.alpha_random:
            return (self.alpha, self.alpha)
        return self.alpha_bounds or (0.0, np.inf)

    @property
    def mu_interval(self):
        return self.mu_bounds or (-np.inf, np.inf)

    @property
    def lambda_interval(self):
        if self.lambda_known is not None:
            return (self.lambda_known, self.lambda_known)
        return self.lambda_bounds or (0.0, np.inf)


@dataclass(frozen=True, eq=False)
class DPState:
    """Allocations, configuration, canonical labels and distinct values."""

    z: np.ndarray
    c: np.ndarray
    s: np.ndarray
    mu_star: np.ndarray
    lam_star: np.ndarray
    alpha: float

    def __post_init__(self):
        for name, dtype in (("z", np.int64), ("c", np.int64), ("s", np.int64),
                            ("mu_star", float), ("lam_star", float)):
            arr = np.asarray(getattr(self, name), dtype=dtype).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "alpha", float(self.alpha))

    @property
    def M(self) -> int:
        return len(self.s)

    @property
    def k(self) -> int:
        return int(self.s.max())

    @property
    def mu_m(self) -> np.ndarray:
        return self.mu_star[self.s - 1]

    @property
    def lam_m(self) -> np.ndarray:
        return self.lam_star[self.s - 1]

    def validate(self, spec: DPMixtureSpec | None = None) -> "DPState":
        s = self.s
        if s[0] != 1 or not is_canonical(s):
            raise InvariantViolationError(f"labels {s.tolist()} are not in first-appearance form")
        if len(self.mu_star) != self.k or len(self.lam_star) != self.k:
            raise InvariantViolationError("distinct values do not match the label count")
        if np.any(self.z < 1) or np.any(self.z > self.M):
            raise InvariantViolationError("allocation outside 1..M")
        if np.any(self.lam_star <= 0):
            raise InvariantViolationError("precisions must be positive")
        if spec is not None and spec.truncated:
            lo, hi = spec.mu_bounds
            if np.any(self.mu_star < lo) or np.any(self.mu_star > hi):
                raise InvariantViolationError("mean outside its bound")
            if spec.lambda_known is None:
                lo, hi = spec.lambda_bounds
                if np.any(self.lam_star < lo) or np.any(self.lam_star > hi):
                    raise InvariantViolationError("precision outside its bound")
        return self

    def key(self) -> bytes:
        parts = (self.z, self.c, self.s, self.mu_star, self.lam_star, np.array([self.alpha]))
        return b"".join(a.tobytes() for a in parts)

    def __eq__(self, other):
        return isinstance(other, DPState) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


# ---------------------------------------------------------------------------
# labels and partitions
# ---------------------------------------------------------------------------


def is_canonical(s) -> bool:
    """First-appearance labeling: each label is at most one above the running maximum."""
    top = 0
    for v in s:
        if v < 1 or v > top + 1:
            return False
        top = max(top, v)
    return True


def canonical_labels(groups) -> np.ndarray:
    """Relabel arbitrary group ids by order of first appearance (1-based)."""
    seen = {}
    out = np.empty(len(groups), dtype=np.int64)
    for j, g in enumerate(groups):
        if g not in seen:
            seen[g] = len(seen) + 1
        out[j] = seen[g]
    return out


def others_in_order(groups, j):
    """Distinct groups of all slots but ``j`` in first-appearance order, with multiplicities."""
    order = []
    mult = {}
    for m, g in enumerate(groups):
        if m == j:
            continue
        if g not in mult:
            mult[g] = 0
            order.append(g)
        mult[g] += 1
    return order, [mult[g] for g in order]


def apply_configuration_value(groups, j, c_j, fresh):
    """Move slot ``j`` according to configuration value ``c_j``; returns new groups."""
    order, _ = others_in_order(groups, j)
    groups = list(groups)
    if 1 <= c_j <= len(order):
        groups[j] = order[c_j - 1]
    elif c_j == len(order) + 1:
        groups[j] = fresh
    else:
        raise InvariantViolationError(f"configuration value {c_j} outside 1..{len(order) + 1}")
    return groups


def partition_from_configuration(c, start=None) -> tuple:
    """Canonical labels after sweeping configuration ``c`` from ``start`` (default all distinct)."""
    M = len(c)
    groups = list(range(M)) if start is None else list(start)
    fresh = M + max(groups) + 1
    for j in range(M):
        groups = apply_configuration_value(groups, j, int(c[j]), fresh)
        fresh += 1
    return tuple(canonical_labels(groups).tolist())


def relabel(c, theta_m):
    """Canonical labels, distinct count and distinct values of ``theta_m``.

    Parameters
    ----------
    c : array-like of shape (M,)
        Configuration from a sweep; its implied partition must match the ties
        in ``theta_m``.
    theta_m : array-like of shape (M,) or (M, 2)
        Slot parameters, either means only or ``(mu, lam)`` rows.

    Returns
    -------
    s : ndarray of shape (M,)
    k : int
    theta_star : ndarray
        Distinct values in first-appearance order.
    """
    theta = np.asarray(theta_m, dtype=float)
    rows = [tuple(np.atleast_1d(r).tolist()) for r in theta]
    s = canonical_labels(rows)
    if c is not None and tuple(s.tolist()) != partition_from_configuration(c):
        raise InvariantViolationError("configuration and slot parameters disagree on ties")
    k = int(s.max())
    first = [int(np.flatnonzero(s == ell)[0]) for ell in range(1, k + 1)]
    return s, k, theta[first]


def all_partitions(M):
    """Every canonical label vector of length ``M`` (restricted growth strings)."""
    out = []

    def rec(prefix, top):
        if len(prefix) == M:
            out.append(tuple(prefix))
            return
        for v in range(1, top + 2):
            rec(prefix + [v], max(top, v))

    rec([1], 1)
    return out


def bell_number(M):
    row = [1]
    for _ in range(M - 1):
        nxt = [row[-1]]
        for v in row:
            nxt.append(nxt[-1] + v)
        row = nxt
    return row[-1]


# ---------------------------------------------------------------------------
# likelihood pieces
# ---------------------------------------------------------------------------


def slot_loglik(mu, lam, n, ybar, ss):
    """Log-likelihood of ``n`` observations with mean ``ybar`` and sum of squares ``ss``."""
    return 0.5 * n * (np.log(lam) - LOG_2PI) - 0.5 * lam * (n * (mu - ybar) ** 2 + ss)


def posterior_params(n, ybar, ss, spec: DPMixtureSpec):
    """``(shape, rate, mean, scale)`` of the base measure updated by one data group.

    ``lam ~ Gamma(shape, rate)`` and ``mu | lam ~ N(mean, scale / lam)``.
    """
    denom = n * spec.psi + 1.0
    shape = 0.5 * (spec.eta + n)
    rate = 0.5 * (spec.zeta + n * (ybar - spec.mu0) ** 2 / denom + ss)
    mean = (n * ybar * spec.psi + spec.mu0) / denom
    scale = spec.psi / denom
    return shape, rate, mean, scale


def log_q0(n, ybar, ss, alpha, spec: DPMixtureSpec):
    """Log of ``alpha`` times the marginal likelihood of one slot's data under G0.

    Works elementwise on arrays of slot statistics.
    """
    denom = n * spec.psi + 1.0
    if spec.lambda_known is not None:
        lam = spec.lambda_known
        return (np.log(alpha) + 0.5 * n * (math.log(lam) - LOG_2PI) - 0.5 * np.log(denom)
                - 0.5 * lam * (ss + n * (ybar - spec.mu0) ** 2 / denom))
    a0 = 0.5 * spec.eta
    an = 0.5 * (spec.eta + n)
    bracket = spec.zeta + n * (ybar - spec.mu0) ** 2 / denom + ss
    return (np.log(alpha) + a0 * math.log(0.5 * spec.zeta) - gammaln(a0) - 0.5 * np.log(denom)
            - 0.5 * n * LOG_2PI + an * math.log(2.0) + gammaln(an) - an * np.log(bracket))


@dataclass(frozen=True)
class StarSummary:
    """Pooled statistics and updated hyperparameters per distinct label."""

    n: np.ndarray
    ybar: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    mu0: np.ndarray
    psi: np.ndarray

    @classmethod
    def compute(cls, z, s, y, spec: DPMixtureSpec):
        s = np.asarray(s)
        k = int(s.max())
        labels = s[np.asarray(z) - 1]
        n, ybar, ss = summary_arrays(np.asarray(y, float), labels, k)
        shape, rate, mean, scale = posterior_params(n, ybar, ss, spec)
        return cls(n, ybar, shape, rate, mean, scale)


# ---------------------------------------------------------------------------
# full conditionals
# ---------------------------------------------------------------------------


def z_full_conditional_dp(i, state: DPState, data: Dataset, spec=None) -> SteppedCDF:
    """Distribution function of ``z_i`` over slots ``1..M`` (uniform slot weights)."""
    mu, lam = state.mu_m, state.lam_m
    lw = 0.5 * np.log(lam) - 0.5 * lam * (data.y[i] - mu) ** 2
    return SteppedCDF.from_log_weights(lw)


def _slot_stats(z, y, M):
    return summary_arrays(np.asarray(y, float), np.asarray(z), M)


def _c_log_weights(j, groups, theta, stats, new_logw):
    order, mult = others_in_order(groups, j)
    n, ybar, ss = stats[0][j], stats[1][j], stats[2][j]
    lw = [math.log(m) + float(slot_loglik(theta[g][0], theta[g][1], n, ybar, ss))
          for g, m in zip(order, mult)]
    lw.append(new_logw)
    return order, np.array(lw)


def c_full_conditional(j, state: DPState, data: Dataset, spec: DPMixtureSpec) -> SteppedCDF:
    """Closed-form configuration conditional of slot ``j`` (untruncated base measure)."""
    groups = list(state.s)
    theta = {ell + 1: (state.mu_star[ell], state.lam_star[ell]) for ell in range(state.k)}
    stats = _slot_stats(state.z, data.y, state.M)
    new = log_q0(stats[0][j], stats[1][j], stats[2][j], state.alpha, spec)
    _, lw = _c_log_weights(j, groups, theta, stats, new)
    return SteppedCDF.from_log_weights(lw)


def c_full_conditional_aux(j, state: DPState, aux, data: Dataset, spec: DPMixtureSpec) -> SteppedCDF:
    """Configuration conditional with the new-value weight ``alpha * L(aux; data on j)``."""
    groups = list(state.s)
    theta = {ell + 1: (state.mu_star[ell], state.lam_star[ell]) for ell in range(state.k)}
    stats = _slot_stats(state.z, data.y, state.M)
    n, ybar, ss = stats[0][j], stats[1][j], stats[2][j]
    new = math.log(state.alpha) + float(slot_loglik(aux[0], aux[1], n, ybar, ss))
    _, lw = _c_log_weights(j, groups, theta, stats, new)
    return SteppedCDF.from_log_weights(lw)


def draw_from_base(spec: DPMixtureSpec, stream, n=0, ybar=0.0, ss=0.0, budget=DEFAULT_BUDGET):
    """``(mu, lam)`` from the base measure updated by one data group, truncated to the box."""
    shape, rate, mean, scale = posterior_params(n, ybar, ss, spec)
    if spec.lambda_known is not None:
        lam = spec.lambda_known
        mu = rejection_truncated(NormalForm(mean, math.sqrt(scale / lam)), spec.mu_interval, stream, budget)
        return mu, lam
    return normal_gamma_truncated(shape, rate, mean, scale, spec.lambda_interval, spec.mu_interval,
                                  stream, budget)


def aux_draw(j, state: DPState, spec: DPMixtureSpec, ledger: RandomLedger, t: int, groups=None, theta=None):
    """Auxiliary candidate for slot ``j``: a base-measure draw if ``j`` shares its value."""
    groups = list(state.s) if groups is None else groups
    if theta is None:
        theta = {ell + 1: (state.mu_star[ell], state.lam_star[ell]) for ell in range(state.k)}
    shared = sum(1 for g in groups if g == groups[j]) > 1
    if not shared:
        return theta[groups[j]]
    return draw_from_base(spec, ledger.stream(t, Kind.AUX, j))


def theta_star_draw(ell, z, s, data: Dataset, spec: DPMixtureSpec, ledger: RandomLedger, t: int):
    """Distinct value ``ell`` (1-based) from its conditional given ``(z, s)``."""
    s = np.asarray(s)
    members = np.isin(np.asarray(z) - 1, np.flatnonzero(s == ell))
    y = data.y[members]
    n = y.size
    ybar = y.mean() if n else 0.0
    ss = float(((y - ybar) ** 2).sum()) if n else 0.0
    return draw_from_base(spec, ledger.stream(t, Kind.THETA_STAR, ell), n, ybar, ss)


def alpha_log_density(k, spec: DPMixtureSpec):
    """Log density and derivative of ``x = log(alpha)`` given ``k`` distinct values."""
    a, b = spec.alpha_prior
    M = spec.M
    ms = np.arange(1, M, dtype=float)

    def logpdf(x):
        ex = math.exp(x)
        return (a + k - 1) * x - b * ex - float(np.log(ex + ms).sum())

    def dlogpdf(x):
        ex = math.exp(x)
        return (a + k - 1) - b * ex - float((ex / (ex + ms)).sum())

    return logpdf, dlogpdf


def alpha_draw(k, spec: DPMixtureSpec, ledger: RandomLedger, t: int):
    """Concentration given the distinct count, restricted to its interval.

    Draws ``log(alpha)`` from ``prior(alpha) alpha^k Gamma(alpha) / Gamma(alpha + M)``
    (log-concave in ``log(alpha)``) by adaptive rejection on the ``ALPHA`` stream.
    """
    if not spec.alpha_random:
        return spec.alpha
    lo, hi = spec.alpha_interval
    logpdf, dlogpdf = alpha_log_density(k, spec)
    a, b = spec.alpha_prior
    form = LogConcaveForm(logpdf, dlogpdf, mode_hint=math.log(max(a + k - 1, 0.5) / b))
    x_lo = math.log(lo) if lo > 0 else -np.inf
    x_hi = math.log(hi) if np.isfinite(hi) else np.inf
    x = adaptive_rejection_sample(form, x_lo, x_hi, ledger.stream(t, Kind.ALPHA, 0))
    return float(min(max(math.exp(x), lo), hi))


# ---------------------------------------------------------------------------
# the transition
# ---------------------------------------------------------------------------


def draw_star_values(z, s, data, spec, ledger, t):
    k = int(np.max(s))
    out = np.empty((k, 2))
    for ell in range(1, k + 1):
        out[ell - 1] = theta_star_draw(ell, z, s, data, spec, ledger, t)
    return out


def sweep_configuration(z, s, theta_star, alpha, data, spec, ledger, t):
    """Configuration sweep over slots ``1..M``; returns ``(c, s_new, theta_star_new)``."""
    M = len(s)
    groups = [int(v) for v in s]
    theta = {ell + 1: (float(theta_star[ell][0]), float(theta_star[ell][1])) for ell in range(len(theta_star))}
    stats = _slot_stats(z, data.y, M)
    c = np.empty(M, dtype=np.int64)
    fresh = M + 1
    log_alpha = math.log(alpha)
    for j in range(M):
        n, ybar, ss = stats[0][j], stats[1][j], stats[2][j]
        if spec.truncated:
            cand = aux_draw(j, None, spec, ledger, t, groups=groups, theta=theta)
            new_lw = log_alpha + float(slot_loglik(cand[0], cand[1], n, ybar, ss))
        else:
            cand = None
            new_lw = log_q0(n, ybar, ss, alpha, spec)
        order, lw = _c_log_weights(j, groups, theta, stats, new_lw)
        cj = invert(SteppedCDF.from_log_weights(lw), ledger.uniform(t, Kind.C, index=j))
        c[j] = cj
        if cj <= len(order):
            groups[j] = order[cj - 1]
        else:
            if cand is None:
                cand = draw_from_base(spec, ledger.stream(t, Kind.AUX, j), n, ybar, ss)
            groups[j] = fresh
            theta[fresh] = (float(cand[0]), float(cand[1]))
            fresh += 1
    s_new = canonical_labels(groups)
    first = [groups[int(np.flatnonzero(s_new == ell)[0])] for ell in range(1, int(s_new.max()) + 1)]
    star = np.array([theta[g] for g in first])
    return c, s_new, star


def draw_slot_allocations(data, theta_star, s, ledger, t):
    s = np.asarray(s)
    mu = theta_star[s - 1, 0]
    lam = theta_star[s - 1, 1]
    cdfs = allocation_cdfs(data.y, np.full(len(s), 1.0 / len(s)), mu, lam)
    return invert_rows(cdfs, ledger.across(t, Kind.Z, data.n))


def kernel_dp(z, s, data: Dataset, spec: DPMixtureSpec, ledger: RandomLedger, t: int,
              freeze_z: bool = False) -> DPState:
    """One transition at time ``t`` from discrete state ``(z, s)``."""
    s = np.asarray(s)
    alpha = alpha_draw(int(s.max()), spec, ledger, t)
    theta_star = draw_star_values(z, s, data, spec, ledger, t)
    z_new = np.asarray(z) if freeze_z else draw_slot_allocations(data, theta_star, s, ledger, t)
    c, s_new, star = sweep_configuration(z_new, s, theta_star, alpha, data, spec, ledger, t)
    return DPState(z_new, c, s_new, star[:, 0], star[:, 1], alpha)


def dp_gibbs_sweep(state: DPState, data, spec, ledger, t, freeze_z=False) -> DPState:
    return kernel_dp(state.z, state.s, data, spec, ledger, t, freeze_z=freeze_z)


def initial_dp_state(data: Dataset, spec: DPMixtureSpec) -> DPState:
    """All slots distinct, means spread over the box (or data range), nearest-slot allocations."""
    M = spec.M
    lo, hi = spec.mu_bounds or (float(data.y.min()), float(data.y.max()))
    mu = np.linspace(lo, hi, M + 2)[1:-1] if M > 1 else np.array([0.5 * (lo + hi)])
    if spec.lambda_known is not None:
        lam = np.full(M, spec.lambda_known)
    elif spec.lambda_bounds is not None:
        lam = np.full(M, 0.5 * sum(spec.lambda_bounds))
    else:
        lam = np.full(M, spec.eta / spec.zeta)
    z = np.abs(data.y[:, None] - mu).argmin(axis=1) + 1
    s = np.arange(1, M + 1)
    alpha = spec.alpha if not spec.alpha_random else float(np.clip(
        spec.alpha_prior[0] / spec.alpha_prior[1], *spec.alpha_interval))
    return DPState(z, s, s, mu, lam, alpha)
