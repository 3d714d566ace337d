"""Normal mixture with a known number of components.

Model::

    y_i | z_i = j   ~ N(mu_j, 1 / lam_j)
    P(z_i = j)      = pi_j
    lam_j           ~ Gamma(eta / 2, zeta / 2)
    mu_j | lam_j    ~ N(xi_j, tau_j**2 / lam_j)
    pi              ~ Dirichlet(gamma)

Labels are 1-based throughout: ``z_i`` takes values in ``1..p``.

One transition of the chain at time ``t`` first draws ``(pi, mu, lam)``
given the current allocations and then redraws every allocation given those
parameters. The discrete allocation vector alone therefore carries the
Markov state, which is what the bounding chains track.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .cdf import SteppedCDF
from .errors import (
    InvalidArgumentError,
    InvariantViolationError,
    NumericalDegeneracyError,
    SamplerStallError,
)
from .ledger import Kind, RandomLedger
from .sampling import (
    DEFAULT_BUDGET,
    NormalForm,
    dirichlet_from_uniforms,
    normal_gamma_truncated,
    rejection_truncated,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered real observations."""

    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel().copy()
        if y.size < 1:
            raise InvalidArgumentError("a dataset needs at least one observation")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("observations must be finite")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.y.size)

    def __len__(self):
        return self.n


def _as_vector(value, p, name, positive=False):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (p,)).copy()
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must be finite")
    if positive and np.any(arr <= 0):
        raise InvalidArgumentError(f"{name} must be strictly positive")
    return arr


def _as_intervals(value, p, name, positive=False):
    if value is None:
        return None
    arr = np.asarray(value, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (p, 1))
    if arr.shape != (p, 2):
        raise InvalidArgumentError(f"{name} must be a pair or {p} pairs")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} endpoints must be finite")
    if np.any(arr[:, 0] > arr[:, 1]):
        raise InvalidArgumentError(f"{name} intervals must be nonempty")
    if positive and np.any(arr[:, 0] <= 0):
        raise InvalidArgumentError(f"{name} intervals must lie in (0, inf)")
    return arr


@dataclass(frozen=True, eq=False)
class FiniteMixtureSpec:
    """Prior, bounds and fixed quantities of a ``p``-component mixture.

    Parameters
    ----------
    p : int
        Number of components.
    eta, zeta : float
        Precision prior is Gamma(eta / 2, zeta / 2).
    xi, tau : array-like of shape (p,)
        Prior means and scales of the component means.
    gamma : array-like of shape (p,)
        Dirichlet weights.
    mu_bounds, lambda_bounds, pi_bounds : array-like of shape (p, 2), optional
        Closed intervals for the bounded parameter mode.
    lambda_known : array-like of shape (p,), optional
        Fixed precisions; the precision prior is then ignored.
    """

    p: int
    eta: float = 1.0
    zeta: float = 1.0
    xi: object = 0.0
    tau: object = 1.0
    gamma: object = 1.0
    mu_bounds: object = None
    lambda_bounds: object = None
    pi_bounds: object = None
    lambda_known: object = None

    def __post_init__(self):
        p = int(self.p)
        if p < 1:
            raise InvalidArgumentError("p must be at least 1")
        object.__setattr__(self, "p", p)
        if self.lambda_known is None and not (self.eta > 0 and self.zeta > 0):
            raise InvalidArgumentError("eta and zeta must be positive")
        object.__setattr__(self, "xi", _as_vector(self.xi, p, "xi"))
        object.__setattr__(self, "tau", _as_vector(self.tau, p, "tau", positive=True))
        object.__setattr__(self, "gamma", _as_vector(self.gamma, p, "gamma", positive=True))
        object.__setattr__(self, "mu_bounds", _as_intervals(self.mu_bounds, p, "mu_bounds"))
        object.__setattr__(
            self, "lambda_bounds", _as_intervals(self.lambda_bounds, p, "lambda_bounds", positive=True)
        )
        pb = _as_intervals(self.pi_bounds, p, "pi_bounds")
        if pb is not None:
            if np.any(pb[:, 0] < 0) or np.any(pb[:, 1] > 1):
                raise InvalidArgumentError("pi_bounds must lie in [0, 1]")
            if pb[:, 0].sum() > 1 or pb[:, 1].sum() < 1:
                raise InvalidArgumentError("pi_bounds do not intersect the simplex")
        object.__setattr__(self, "pi_bounds", pb)
        if self.lambda_known is not None:
            object.__setattr__(
                self, "lambda_known", _as_vector(self.lambda_known, p, "lambda_known", positive=True)
            )
        elif self.mu_bounds is not None and self.lambda_bounds is None:
            raise InvalidArgumentError("bounded mode with unknown precisions needs lambda_bounds")

    @property
    def bounded(self) -> bool:
        return self.mu_bounds is not None

    @property
    def monotone_pi(self) -> bool:
        """Two components with uniform weights: pi uses the exponential-spacings draw."""
        return self.p == 2 and bool(np.all(self.gamma == 1.0))

    def mu_interval(self, j):
        if self.mu_bounds is None:
            return (-np.inf, np.inf)
        return tuple(self.mu_bounds[j])

    def lambda_interval(self, j):
        if self.lambda_known is not None:
            v = float(self.lambda_known[j])
            return (v, v)
        if self.lambda_bounds is None:
            return (0.0, np.inf)
        return tuple(self.lambda_bounds[j])


@dataclass(frozen=True, eq=False)
class FiniteMixtureState:
    """Allocations ``z`` (1-based) with weights and component parameters."""

    z: np.ndarray
    pi: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name, dtype in (("z", np.int64), ("pi", float), ("mu", float), ("lam", float)):
            arr = np.asarray(getattr(self, name), dtype=dtype).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return len(self.pi)

    def validate(self, spec: FiniteMixtureSpec | None = None) -> "FiniteMixtureState":
        p = self.p
        if np.any(self.z < 1) or np.any(self.z > p):
            raise InvariantViolationError("allocation outside 1..p")
        if abs(self.pi.sum() - 1.0) > 1e-12 or np.any(self.pi <= 0):
            raise InvariantViolationError("weights must be positive and sum to one")
        if np.any(self.lam <= 0):
            raise InvariantViolationError("precisions must be positive")
        if spec is not None and spec.bounded:
            mb = spec.mu_bounds
            if np.any(self.mu < mb[:, 0]) or np.any(self.mu > mb[:, 1]):
                raise InvariantViolationError("mean outside its bound")
            if spec.lambda_bounds is not None and spec.lambda_known is None:
                lb = spec.lambda_bounds
                if np.any(self.lam < lb[:, 0]) or np.any(self.lam > lb[:, 1]):
                    raise InvariantViolationError("precision outside its bound")
        return self

    def key(self) -> bytes:
        return b"".join(a.tobytes() for a in (self.z, self.pi, self.mu, self.lam))

    def __eq__(self, other):
        return isinstance(other, FiniteMixtureState) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())


# ---------------------------------------------------------------------------
# sufficient statistics
# ---------------------------------------------------------------------------


class AllocationSummary:
    """Counts, means and within-component sums of squares per component.

    Members are kept per component in index order and the statistics are
    rebuilt from them with exactly rounded sums, so incremental moves give
    bit-identical results to a fresh computation. Empty components report
    mean 0 and sum of squares 0.
    """

    def __init__(self, y, z, p):
        self._y = np.asarray(y, dtype=float)
        self.p = int(p)
        z = np.asarray(z, dtype=np.int64)
        if np.any(z < 1) or np.any(z > self.p):
            raise InvalidArgumentError("allocation outside 1..p")
        self.z = z.copy()
        self._members = [sorted(np.flatnonzero(z == j + 1).tolist()) for j in range(self.p)]
        self.counts = np.zeros(self.p, dtype=np.int64)
        self.means = np.zeros(self.p)
        self.ss = np.zeros(self.p)
        for j in range(self.p):
            self._refresh(j)

    @classmethod
    def from_allocations(cls, y, z, p):
        return cls(y, z, p)

    def _refresh(self, j):
        vals = [self._y[i] for i in self._members[j]]
        n = len(vals)
        self.counts[j] = n
        if n == 0:
            self.means[j] = 0.0
            self.ss[j] = 0.0
            return
        m = math.fsum(vals) / n
        self.means[j] = m
        self.ss[j] = math.fsum((v - m) ** 2 for v in vals)

    def move(self, i, label):
        """Reallocate observation ``i`` to 1-based ``label``."""
        old = int(self.z[i]) - 1
        new = int(label) - 1
        if old == new:
            return self
        self._members[old].remove(i)
        lst = self._members[new]
        lst.insert(int(np.searchsorted(lst, i)), i)
        self.z[i] = new + 1
        self._refresh(old)
        self._refresh(new)
        return self

    def members(self, j):
        return list(self._members[j])

    def as_tuple(self):
        return self.counts.copy(), self.means.copy(), self.ss.copy()


# ---------------------------------------------------------------------------
# densities and full conditionals
# ---------------------------------------------------------------------------


def log_component_density(y, mu, lam):
    """Log of the normal density with mean ``mu`` and precision ``lam``."""
    y, mu, lam = np.asarray(y, float), np.asarray(mu, float), np.asarray(lam, float)
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(mu)) and np.all(np.isfinite(lam))):
        raise InvalidArgumentError("non-finite input to the component density")
    if np.any(lam <= 0):
        raise InvalidArgumentError("precision must be positive")
    out = 0.5 * (np.log(lam) - LOG_2PI) - 0.5 * lam * (y - mu) ** 2
    return float(out) if out.ndim == 0 else out


def allocation_log_weights(y, pi, mu, lam):
    """Unnormalized log allocation weights, shape ``(len(y), p)``."""
    y = np.atleast_1d(np.asarray(y, float))[:, None]
    return np.log(pi) + 0.5 * np.log(lam) - 0.5 * lam * (y - mu) ** 2


def z_full_conditional(i, state: FiniteMixtureState, data: Dataset, spec=None) -> SteppedCDF:
    """Distribution function of ``z_i`` given weights and parameters."""
    if not 0 <= i < data.n:
        raise InvalidArgumentError(f"observation index {i} out of range")
    lw = allocation_log_weights(data.y[i], state.pi, state.mu, state.lam)[0]
    return SteppedCDF.from_log_weights(lw)


def allocation_cdfs(y, pi, mu, lam):
    """Row-wise allocation CDFs for every observation, shape ``(n, p)``."""
    lw = allocation_log_weights(y, pi, mu, lam)
    lw -= lw.max(axis=1, keepdims=True)
    w = np.exp(lw)
    c = np.cumsum(w, axis=1)
    c /= c[:, -1:]
    c[:, -1] = 1.0
    return c


def invert_rows(cdfs, u):
    """1-based smallest label with ``F(k) >= u`` for every row."""
    return (cdfs < np.asarray(u)[:, None]).sum(axis=1).clip(max=cdfs.shape[1] - 1) + 1


def lambda_conditional(summary_counts, means, ss, j, spec: FiniteMixtureSpec):
    """Shape and rate of the precision full conditional of component ``j``."""
    n = summary_counts[j]
    tau2 = spec.tau[j] ** 2
    shape = 0.5 * (spec.eta + n)
    rate = 0.5 * (spec.zeta + n * (means[j] - spec.xi[j]) ** 2 / (n * tau2 + 1.0) + ss[j])
    return shape, rate


def mu_conditional(summary_counts, means, j, spec: FiniteMixtureSpec):
    """Mean and variance-times-precision of the mean full conditional."""
    n = summary_counts[j]
    tau2 = spec.tau[j] ** 2
    mean = (n * means[j] * tau2 + spec.xi[j]) / (n * tau2 + 1.0)
    scale = tau2 / (n * tau2 + 1.0)
    return mean, scale


def beta_from_exponentials(n1, n, e):
    """Monotone Beta(n1 + 1, n - n1 + 1) draw from ``n + 2`` exponential spacings."""
    e = np.asarray(e, dtype=float)
    if e.shape != (n + 2,):
        raise InvalidArgumentError(f"need {n + 2} exponentials, got {e.shape}")
    if not 0 <= n1 <= n:
        raise InvalidArgumentError("n1 must lie in 0..n")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise InvalidArgumentError("exponentials must be positive and finite")
    c = np.cumsum(e)
    return float(c[n1] / c[-1])


def pi_exponentials(ledger: RandomLedger, t: int, n: int) -> np.ndarray:
    return -np.log(ledger.uniforms(t, Kind.PI, 0, 0, n + 2))


def draw_weights(counts, spec: FiniteMixtureSpec, ledger: RandomLedger, t: int, budget=DEFAULT_BUDGET):
    """Weights given component counts, from the ``PI`` cells at time ``t``."""
    n = int(counts.sum())
    if spec.monotone_pi and spec.pi_bounds is None:
        pi1 = beta_from_exponentials(int(counts[0]), n, pi_exponentials(ledger, t, n))
        return np.array([pi1, 1.0 - pi1])
    alpha = counts + spec.gamma
    p = spec.p
    if spec.pi_bounds is None:
        return dirichlet_from_uniforms(alpha, ledger.across(t, Kind.PI, p))
    stream = ledger.stream(t, Kind.PI, 0)
    lo, hi = spec.pi_bounds[:, 0], spec.pi_bounds[:, 1]
    for _ in range(budget):
        pi = dirichlet_from_uniforms(alpha, stream.take(p))
        if np.all(pi >= lo) and np.all(pi <= hi):
            return pi
    raise SamplerStallError("bounded Dirichlet draw exhausted its budget", proposals=budget)


def draw_component(j, counts, means, ss, spec: FiniteMixtureSpec, ledger, t, budget=DEFAULT_BUDGET):
    """``(mu_j, lam_j)`` from their full conditionals via the ``THETA`` stream of ``j``."""
    stream = ledger.stream(t, Kind.THETA, j)
    mean, scale = mu_conditional(counts, means, j, spec)
    if spec.lambda_known is not None:
        lam = float(spec.lambda_known[j])
        mu = rejection_truncated(NormalForm(mean, math.sqrt(scale / lam)), spec.mu_interval(j), stream, budget)
        return mu, lam
    shape, rate = lambda_conditional(counts, means, ss, j, spec)
    return normal_gamma_truncated(
        shape, rate, mean, scale, spec.lambda_interval(j), spec.mu_interval(j), stream, budget
    )


def summary_arrays(y, z, p):
    """Fast counts, means and sums of squares (means of empty components are 0)."""
    idx = np.asarray(z) - 1
    counts = np.bincount(idx, minlength=p)
    sums = np.bincount(idx, weights=y, minlength=p)
    means = np.divide(sums, counts, out=np.zeros(p), where=counts > 0)
    ss = np.bincount(idx, weights=(y - means[idx]) ** 2, minlength=p)
    return counts, means, ss


def draw_parameters(z, data: Dataset, spec: FiniteMixtureSpec, ledger: RandomLedger, t: int):
    """Weights and component parameters given allocations ``z`` at time ``t``."""
    counts, means, ss = summary_arrays(data.y, z, spec.p)
    pi = draw_weights(counts, spec, ledger, t)
    mu = np.empty(spec.p)
    lam = np.empty(spec.p)
    for j in range(spec.p):
        mu[j], lam[j] = draw_component(j, counts, means, ss, spec, ledger, t)
    return pi, mu, lam


def draw_allocations(data: Dataset, pi, mu, lam, ledger: RandomLedger, t: int):
    if np.any(pi <= 0):
        raise NumericalDegeneracyError("a weight underflowed to zero")
    u = ledger.across(t, Kind.Z, data.n)
    return invert_rows(allocation_cdfs(data.y, pi, mu, lam), u)


def kernel_finite(z, data, spec, ledger, t) -> FiniteMixtureState:
    """One transition at time ``t`` from allocations ``z``."""
    pi, mu, lam = draw_parameters(np.asarray(z), data, spec, ledger, t)
    z_new = draw_allocations(data, pi, mu, lam, ledger, t)
    return FiniteMixtureState(z_new, pi, mu, lam)


def gibbs_sweep_finite(state: FiniteMixtureState, data, spec, ledger, t) -> FiniteMixtureState:
    """Deterministic Gibbs sweep: parameters given ``state.z``, then allocations."""
    return kernel_finite(state.z, data, spec, ledger, t)


def initial_state(data: Dataset, spec: FiniteMixtureSpec) -> FiniteMixtureState:
    """A valid starting state: allocations by nearest prior mean."""
    mu = spec.xi.copy()
    if spec.bounded:
        mu = np.clip(mu, spec.mu_bounds[:, 0], spec.mu_bounds[:, 1])
    if spec.lambda_known is not None:
        lam = spec.lambda_known.copy()
    elif spec.lambda_bounds is not None:
        lam = spec.lambda_bounds.mean(axis=1)
    else:
        lam = np.full(spec.p, spec.eta / spec.zeta)
    z = np.abs(data.y[:, None] - mu).argmin(axis=1) + 1
    pi = np.full(spec.p, 1.0 / spec.p)
    return FiniteMixtureState(z, pi, mu, lam)


def with_allocations(state: FiniteMixtureState, z) -> FiniteMixtureState:
    return replace(state, z=np.asarray(z))
