"""Validation machinery: baseline Gibbs samplers, pilot bounds, exact oracle and comparisons.

The baseline samplers use a numpy ``Generator`` and are vectorized over
independent replicates, so the "fresh chain per retained draw" protocol is
affordable at desk scale. They share nothing with the ledger-driven
transitions of the perfect sampler, which makes them an independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats
from scipy.ndimage import gaussian_filter1d

from .dp import DPMixtureSpec, canonical_labels, log_q0, posterior_params, slot_loglik
from .errors import InvalidArgumentError, NumericalDegeneracyError, SamplerStallError, UsageError
from .finite import LOG_2PI, Dataset, FiniteMixtureSpec

GRID_POINTS = 512
_REJECTION_ROUNDS = 10_000


# ---------------------------------------------------------------------------
# sample sets
# ---------------------------------------------------------------------------


@dataclass
class SampleSet:
    """Posterior draws stored column-wise; every column has one row per draw.

    Finite mixtures carry ``pi``, ``mu``, ``lam`` and ``z``; the
    Dirichlet-process mixture carries slot values ``mu`` and ``lam``,
    allocations ``z``, canonical labels ``s``, ``alpha`` and the distinct
    count ``k``.
    """

    model: str
    columns: dict = field(default_factory=dict)

    def __len__(self):
        return 0 if not self.columns else len(next(iter(self.columns.values())))

    def __getitem__(self, name):
        return self.columns[name]

    def marginal(self, name, index=None):
        values = np.asarray(self.columns[name])
        return values if index is None else values[:, index]

    @classmethod
    def from_perfect(cls, samples):
        """Stack the ``t = 0`` states of a list of perfect samples."""
        samples = list(samples)
        if not samples:
            raise UsageError("no samples to stack")
        model = "dp" if samples[0].kind == "dp" else "finite"
        if model == "dp":
            cols = {
                "mu": np.array([s.state.mu_m for s in samples]),
                "lam": np.array([s.state.lam_m for s in samples]),
                "z": np.array([s.state.z for s in samples]),
                "s": np.array([s.state.s for s in samples]),
                "alpha": np.array([s.state.alpha for s in samples]),
                "k": np.array([s.state.k for s in samples]),
            }
        else:
            cols = {name: np.array([getattr(s.state, name) for s in samples]) for name in ("pi", "mu", "lam", "z")}
        return cls(model, cols)

    @classmethod
    def from_states(cls, states):
        """Stack ``DPState`` or ``FiniteMixtureState`` objects (for forward Gibbs runs)."""
        wrapped = [_Wrapped(st) for st in states]
        return cls.from_perfect(wrapped)


@dataclass
class _Wrapped:
    state: object

    @property
    def kind(self):
        return "dp" if hasattr(self.state, "mu_star") else "finite"


# ---------------------------------------------------------------------------
# vectorized truncated draws
# ---------------------------------------------------------------------------


def _gamma_truncated(rng, shape, rate, lo=0.0, hi=np.inf):
    """Gamma(shape, rate) restricted to ``[lo, hi]`` by inversion, elementwise."""
    shape, rate = np.broadcast_arrays(np.asarray(shape, float), np.asarray(rate, float))
    if lo <= 0 and not np.isfinite(hi):
        return rng.gamma(shape, 1.0 / rate)
    c_lo = special.gammainc(shape, lo * rate)
    c_hi = special.gammainc(shape, hi * rate) if np.isfinite(hi) else np.ones_like(shape)
    s_lo = special.gammaincc(shape, lo * rate)
    s_hi = special.gammaincc(shape, hi * rate) if np.isfinite(hi) else np.zeros_like(shape)
    u = rng.random(shape.shape)
    upper_tail = c_lo > 0.5
    with np.errstate(invalid="ignore", divide="ignore"):
        x_left = special.gammaincinv(shape, c_lo + u * (c_hi - c_lo))
        x_right = special.gammainccinv(shape, s_lo - u * (s_lo - s_hi))
    x = np.where(upper_tail, x_right, x_left) / rate
    return np.clip(x, lo, hi)


def _normal_truncated(rng, mean, sd, lo=-np.inf, hi=np.inf):
    mean, sd = np.broadcast_arrays(np.asarray(mean, float), np.asarray(sd, float))
    if not (np.isfinite(lo) or np.isfinite(hi)):
        return rng.normal(mean, sd)
    return stats.truncnorm.rvs((lo - mean) / sd, (hi - mean) / sd, loc=mean, scale=sd,
                               size=mean.shape, random_state=rng)


def _normal_gamma(rng, shape, rate, mean, scale, lam_box=None, mu_box=None):
    """Joint ``lam ~ Gamma(shape, rate)``, ``mu | lam ~ N(mean, scale / lam)`` on a box.

    ``lam`` is drawn from its truncated gamma and the pair is accepted when
    ``mu`` lands in its interval, repeating for rejected entries only.
    """
    shape, rate, mean, scale = np.broadcast_arrays(*(np.asarray(v, float) for v in (shape, rate, mean, scale)))
    lo_l, hi_l = lam_box if lam_box is not None else (0.0, np.inf)
    lam = _gamma_truncated(rng, shape, rate, lo_l, hi_l)
    mu = rng.normal(mean, np.sqrt(scale / lam))
    if mu_box is None:
        return mu, lam
    lo_m, hi_m = mu_box
    todo = (mu < lo_m) | (mu > hi_m)
    rounds = 0
    while todo.any():
        rounds += 1
        if rounds > _REJECTION_ROUNDS:
            raise SamplerStallError("baseline normal-gamma draw exhausted its budget", proposals=rounds)
        idx = np.flatnonzero(todo)
        lam_new = _gamma_truncated(rng, shape.flat[idx], rate.flat[idx], lo_l, hi_l)
        mu_new = rng.normal(mean.flat[idx], np.sqrt(scale.flat[idx] / lam_new))
        lam.flat[idx], mu.flat[idx] = lam_new, mu_new
        todo = (mu < lo_m) | (mu > hi_m)
    return mu, lam


def _categorical(rng, log_weights):
    """One draw per row (last axis) from unnormalized log weights; 0-based."""
    lw = log_weights - log_weights.max(axis=-1, keepdims=True)
    w = np.exp(lw)
    cdf = np.cumsum(w, axis=-1)
    u = rng.random(cdf.shape[:-1])[..., None] * cdf[..., -1:]
    return np.minimum((cdf < u).sum(axis=-1), cdf.shape[-1] - 1)


def _group_stats(y, mask):
    """Counts, means and sums of squares of ``y`` over boolean masks ``(..., n)``."""
    n = mask.sum(axis=-1)
    total = (mask * y).sum(axis=-1)
    mean = np.divide(total, n, out=np.zeros(n.shape), where=n > 0)
    ss = (mask * (y - mean[..., None]) ** 2).sum(axis=-1)
    return n, mean, ss


# ---------------------------------------------------------------------------
# baseline Gibbs: finite mixture
# ---------------------------------------------------------------------------


class _FiniteGibbs:
    """Replicate-vectorized Gibbs sampler for the finite mixture."""

    def __init__(self, data: Dataset, spec: FiniteMixtureSpec, replicates, rng, bounded):
        if bounded and not spec.bounded:
            raise UsageError("bounded baseline needs parameter bounds in the model")
        self.y, self.spec, self.rng, self.bounded = data.y, spec, rng, bounded
        self.R, self.n, self.p = replicates, data.n, spec.p
        self.z = rng.integers(1, self.p + 1, size=(self.R, self.n))
        self.pi = np.full((self.R, self.p), 1.0 / self.p)
        self.mu = np.tile(spec.xi, (self.R, 1))
        self.lam = np.ones((self.R, self.p))

    def _weights(self, counts):
        spec = self.spec
        alpha = counts + spec.gamma
        pi = self.rng.gamma(alpha)
        pi /= pi.sum(axis=1, keepdims=True)
        if not self.bounded or spec.pi_bounds is None:
            return pi
        lo, hi = spec.pi_bounds[:, 0], spec.pi_bounds[:, 1]
        todo = ~np.all((pi >= lo) & (pi <= hi), axis=1)
        rounds = 0
        while todo.any():
            rounds += 1
            if rounds > _REJECTION_ROUNDS:
                raise SamplerStallError("baseline weight draw exhausted its budget", proposals=rounds)
            fresh = self.rng.gamma(alpha[todo])
            pi[todo] = fresh / fresh.sum(axis=1, keepdims=True)
            todo = ~np.all((pi >= lo) & (pi <= hi), axis=1)
        return pi

    def sweep(self):
        spec, y = self.spec, self.y
        masks = self.z[:, None, :] == np.arange(1, self.p + 1)[None, :, None]
        counts, means, ss = _group_stats(y, masks)
        tau2 = spec.tau ** 2
        mean = (counts * means * tau2 + spec.xi) / (counts * tau2 + 1.0)
        scale = tau2 / (counts * tau2 + 1.0)
        if spec.lambda_known is not None:
            lam = np.broadcast_to(spec.lambda_known, (self.R, self.p)).copy()
            mu = np.empty((self.R, self.p))
            for j in range(self.p):
                box = spec.mu_interval(j) if self.bounded else (-np.inf, np.inf)
                mu[:, j] = _normal_truncated(self.rng, mean[:, j], np.sqrt(scale[:, j] / lam[:, j]), *box)
        else:
            shape = 0.5 * (spec.eta + counts)
            rate = 0.5 * (spec.zeta + counts * (means - spec.xi) ** 2 / (counts * tau2 + 1.0) + ss)
            mu = np.empty((self.R, self.p))
            lam = np.empty((self.R, self.p))
            for j in range(self.p):
                lam_box = spec.lambda_interval(j) if self.bounded else None
                mu_box = spec.mu_interval(j) if self.bounded else None
                mu[:, j], lam[:, j] = _normal_gamma(self.rng, shape[:, j], rate[:, j], mean[:, j], scale[:, j],
                                                    lam_box, mu_box)
        pi = self._weights(counts)
        lw = (np.log(pi)[:, None, :] + 0.5 * np.log(lam)[:, None, :]
              - 0.5 * lam[:, None, :] * (y[None, :, None] - mu[:, None, :]) ** 2)
        self.z = _categorical(self.rng, lw) + 1
        self.pi, self.mu, self.lam = pi, mu, lam

    def snapshot(self):
        return {"pi": self.pi.copy(), "mu": self.mu.copy(), "lam": self.lam.copy(), "z": self.z.copy()}


# ---------------------------------------------------------------------------
# baseline Gibbs: Dirichlet-process mixture
# ---------------------------------------------------------------------------


class _DPGibbs:
    """Replicate-vectorized Gibbs sampler for the finite-M DP mixture.

    Each sweep updates the concentration (Escobar-West auxiliary scheme),
    refreshes every distinct value from its conditional, redraws the
    allocations, and revisits each slot's value by the Polya urn. The
    unbounded sampler integrates the new-value option against the base
    measure; the bounded one uses a single auxiliary base-measure draw.
    """

    def __init__(self, data: Dataset, spec: DPMixtureSpec, replicates, rng, bounded):
        if bounded and not spec.truncated:
            raise UsageError("bounded baseline needs parameter bounds in the model")
        self.y, self.spec, self.rng, self.bounded = data.y, spec, rng, bounded
        self.R, self.n, self.M = replicates, data.n, spec.M
        M = self.M
        lo, hi = (spec.mu_bounds if bounded else (float(data.y.min()), float(data.y.max())))
        grid = np.linspace(lo, hi, M + 2)[1:-1] if M > 1 else np.array([0.5 * (lo + hi)])
        self.mu = np.tile(grid, (self.R, 1))
        if spec.lambda_known is not None:
            lam0 = spec.lambda_known
        elif bounded:
            lam0 = math.sqrt(spec.lambda_bounds[0] * spec.lambda_bounds[1])
        else:
            lam0 = spec.eta / spec.zeta
        self.lam = np.full((self.R, M), float(lam0))
        self.labels = np.tile(np.arange(M), (self.R, 1))
        self.z = np.abs(data.y[None, :, None] - self.mu[:, None, :]).argmin(axis=2) + 1
        if spec.alpha_random:
            a, b = spec.alpha_prior
            start = a / b
            if bounded:
                start = float(np.clip(start, *spec.alpha_interval))
            self.alpha = np.full(self.R, start)
        else:
            self.alpha = np.full(self.R, float(spec.alpha))

    # -- pieces ----------------------------------------------------------
    def _distinct_count(self):
        ordered = np.sort(self.labels, axis=1)
        return 1 + (np.diff(ordered, axis=1) != 0).sum(axis=1)

    def _draw_alpha(self):
        spec = self.spec
        if not spec.alpha_random:
            return
        a, b = spec.alpha_prior
        k = self._distinct_count()
        eta = self.rng.beta(self.alpha + 1.0, self.M)
        rate = b - np.log(eta)
        shapes = np.stack([a + k, a + k - 1.0], axis=1)
        odds = (a + k - 1.0) / (self.M * rate)
        weights = np.stack([odds, np.ones_like(odds)], axis=1)
        lo, hi = spec.alpha_interval if self.bounded else (0.0, np.inf)
        if self.bounded:
            mass = (special.gammainc(shapes, hi * rate[:, None]) if np.isfinite(hi) else 1.0) \
                - special.gammainc(shapes, lo * rate[:, None])
            weights = weights * np.maximum(mass, 0.0)
        pick = self.rng.random(self.R) * weights.sum(axis=1) >= weights[:, 0]
        shape = np.where(pick, shapes[:, 1], shapes[:, 0])
        self.alpha = _gamma_truncated(self.rng, shape, rate, lo, hi)

    def _posterior_draw(self, n, ybar, ss):
        spec = self.spec
        shape, rate, mean, scale = posterior_params(n, ybar, ss, spec)
        if spec.lambda_known is not None:
            lam = np.full(np.shape(n), float(spec.lambda_known))
            box = spec.mu_bounds if self.bounded else (-np.inf, np.inf)
            return _normal_truncated(self.rng, mean, np.sqrt(scale / lam), *box), lam
        if self.bounded:
            return _normal_gamma(self.rng, shape, rate, mean, scale, spec.lambda_bounds, spec.mu_bounds)
        return _normal_gamma(self.rng, shape, rate, mean, scale)

    def _slot_data(self, members):
        """Statistics of the data allocated to any slot flagged in ``members`` (R, M)."""
        inside = np.take_along_axis(members, self.z - 1, axis=1)
        return _group_stats(self.y, inside)

    def _refresh_values(self):
        for j in range(self.M):
            first = np.all(self.labels[:, :j] != self.labels[:, [j]], axis=1)
            if not first.any():
                continue
            members = self.labels == self.labels[:, [j]]
            n, ybar, ss = self._slot_data(members)
            mu, lam = self._posterior_draw(n, ybar, ss)
            update = members & first[:, None]
            self.mu = np.where(update, mu[:, None], self.mu)
            self.lam = np.where(update, lam[:, None], self.lam)

    def _draw_allocations(self):
        lw = 0.5 * np.log(self.lam)[:, None, :] - 0.5 * self.lam[:, None, :] * (
            self.y[None, :, None] - self.mu[:, None, :]) ** 2
        self.z = _categorical(self.rng, lw) + 1

    def _polya_sweep(self):
        spec, R, M = self.spec, self.R, self.M
        rows = np.arange(R)
        for j in range(M):
            member = np.zeros((R, M), dtype=bool)
            member[:, j] = True
            n, ybar, ss = self._slot_data(member)
            existing = slot_loglik(self.mu, self.lam, n[:, None], ybar[:, None], ss[:, None])
            existing[:, j] = -np.inf
            others = np.delete(self.labels, j, axis=1)
            shared = np.any(others == self.labels[:, [j]], axis=1)
            if self.bounded:
                aux_mu, aux_lam = self._posterior_draw(np.zeros(R), np.zeros(R), np.zeros(R))
                aux_mu = np.where(shared, aux_mu, self.mu[:, j])
                aux_lam = np.where(shared, aux_lam, self.lam[:, j])
                fresh_lw = np.log(self.alpha) + slot_loglik(aux_mu, aux_lam, n, ybar, ss)
            else:
                fresh_lw = log_q0(n, ybar, ss, self.alpha, spec)
            choice = _categorical(self.rng, np.column_stack([existing, fresh_lw]))
            join = choice < M
            src = np.minimum(choice, M - 1)
            new_label = self.labels.max(axis=1) + 1
            if not self.bounded:
                aux_mu, aux_lam = self._posterior_draw(n, ybar, ss)
            self.mu[:, j] = np.where(join, self.mu[rows, src], aux_mu)
            self.lam[:, j] = np.where(join, self.lam[rows, src], aux_lam)
            self.labels[:, j] = np.where(join, self.labels[rows, src], new_label)

    def sweep(self):
        self._draw_alpha()
        self._refresh_values()
        self._draw_allocations()
        self._polya_sweep()

    def snapshot(self):
        s = np.array([canonical_labels(row) for row in self.labels])
        return {"mu": self.mu.copy(), "lam": self.lam.copy(), "z": self.z.copy(), "s": s,
                "alpha": self.alpha.copy(), "k": s.max(axis=1)}


def _engine(data, spec, replicates, rng, bounded):
    if isinstance(spec, DPMixtureSpec):
        return _DPGibbs(data, spec, replicates, rng, bounded), "dp"
    if isinstance(spec, FiniteMixtureSpec):
        return _FiniteGibbs(data, spec, replicates, rng, bounded), "finite"
    raise InvalidArgumentError("spec must be a FiniteMixtureSpec or DPMixtureSpec")


def gibbs_baseline(data: Dataset, spec, mode="bounded", burn_in=10_000, keep=1000, seed=0,
                   protocol="independent", thin=1) -> SampleSet:
    """Baseline posterior draws from an ordinary Gibbs sampler.

    Parameters
    ----------
    mode : {"bounded", "unbounded"}
        Whether parameters are restricted to the model's boxes.
    burn_in : int
        Sweeps discarded before the first retained draw.
    keep : int
        Number of retained draws.
    protocol : {"independent", "single"}
        ``"independent"`` runs ``keep`` fresh chains and keeps the state
        after ``burn_in`` sweeps of each; ``"single"`` runs one chain and
        keeps every ``thin``-th state after burn-in.
    """
    if mode not in ("bounded", "unbounded"):
        raise InvalidArgumentError("mode must be 'bounded' or 'unbounded'")
    if protocol not in ("independent", "single"):
        raise InvalidArgumentError("protocol must be 'independent' or 'single'")
    if keep < 0 or burn_in < 0 or thin < 1:
        raise InvalidArgumentError("keep and burn_in must be non-negative and thin positive")
    rng = np.random.default_rng(seed)
    replicates = max(keep, 1) if protocol == "independent" else 1
    engine, model = _engine(data, spec, replicates, rng, mode == "bounded")
    if keep == 0:
        return SampleSet(model, {k: v[:0] for k, v in engine.snapshot().items()})
    for _ in range(burn_in):
        engine.sweep()
    if protocol == "independent":
        cols = engine.snapshot()
    else:
        rows = []
        for _ in range(keep):
            for _ in range(thin):
                engine.sweep()
            rows.append(engine.snapshot())
        cols = {k: np.concatenate([r[k] for r in rows]) for k in rows[0]}
    for name in ("mu", "lam", "pi", "alpha"):
        if name in cols and not np.all(np.isfinite(cols[name])):
            raise NumericalDegeneracyError(f"non-finite {name} draws in the baseline sampler")
    return SampleSet(model, cols)


# ---------------------------------------------------------------------------
# pilot bounds
# ---------------------------------------------------------------------------


def _widen(values, fraction, positive):
    lo, hi = float(np.min(values)), float(np.max(values))
    if positive:
        a, b = math.log(lo), math.log(hi)
        pad = fraction * max(b - a, 1e-6)
        return (math.exp(a - pad), math.exp(b + pad))
    pad = fraction * max(hi - lo, 1e-6 * max(1.0, abs(lo), abs(hi)))
    return (lo - pad, hi + pad)


def pilot_bounds(data: Dataset, spec, sweeps=5000, seed=0, burn_in=None, widen=0.1) -> dict:
    """Parameter intervals from an unbounded pilot chain.

    Returns keyword arguments for ``dataclasses.replace(spec, **bounds)``:
    the min/max of the post-burn-in draws widened by ``widen`` of the range
    on each side (on the log scale for precisions and the concentration).
    """
    burn_in = sweeps // 5 if burn_in is None else burn_in
    draws = gibbs_baseline(data, spec, "unbounded", burn_in=burn_in, keep=sweeps, seed=seed, protocol="single")
    out = {}
    if draws.model == "dp":
        out["mu_bounds"] = _widen(draws["mu"], widen, False)
        if spec.lambda_known is None:
            out["lambda_bounds"] = _widen(draws["lam"], widen, True)
        if spec.alpha_random:
            out["alpha_bounds"] = _widen(draws["alpha"], widen, True)
        return out
    out["mu_bounds"] = [_widen(draws["mu"][:, j], widen, False) for j in range(spec.p)]
    if spec.lambda_known is None:
        out["lambda_bounds"] = [_widen(draws["lam"][:, j], widen, True) for j in range(spec.p)]
    return out


def bounds_agreement(data: Dataset, spec, sweeps=5000, seed=0, burn_in=None) -> float:
    """TV distance between bounded and unbounded posterior predictive densities."""
    burn_in = sweeps // 5 if burn_in is None else burn_in
    bounded = gibbs_baseline(data, spec, "bounded", burn_in, sweeps, seed, protocol="single")
    free = gibbs_baseline(data, spec, "unbounded", burn_in, sweeps, seed + 1, protocol="single")
    pad = 3.0 * float(np.std(data.y)) + 1e-9
    grid = np.linspace(data.y.min() - pad, data.y.max() + pad, GRID_POINTS)
    f, g = posterior_predictive(bounded, grid), posterior_predictive(free, grid)
    return 0.5 * float(np.trapezoid(np.abs(f - g), grid))


# ---------------------------------------------------------------------------
# exact oracle
# ---------------------------------------------------------------------------


@dataclass
class MixtureMarginal:
    """Finite mixture of frozen scipy distributions."""

    weights: np.ndarray
    components: list

    def pdf(self, x):
        x = np.asarray(x, float)
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def cdf(self, x):
        x = np.asarray(x, float)
        return sum(w * c.cdf(x) for w, c in zip(self.weights, self.components))

    def mean(self):
        return float(sum(w * c.mean() for w, c in zip(self.weights, self.components)))


@dataclass
class ExactPosterior:
    """Allocation posterior with closed-form marginals of weights and means."""

    allocations: np.ndarray
    weights: np.ndarray
    pi: list
    mu: list

    def allocation_probability(self, z):
        z = np.asarray(z)
        hit = np.all(self.allocations == z, axis=1)
        return float(self.weights[hit].sum())


def _log_normal_mass(a, b):
    """``log(Phi(b) - Phi(a))`` computed on the accurate tail."""
    if a > 0:
        mass = stats.norm.sf(a) - stats.norm.sf(b)
    else:
        mass = stats.norm.cdf(b) - stats.norm.cdf(a)
    return math.log(max(float(mass), 1e-300))


def oracle_exact_posterior(data: Dataset, spec: FiniteMixtureSpec, bounded=True, budget=65_536) -> ExactPosterior:
    """Exact posterior of a small finite mixture by enumerating all ``p**n`` allocations.

    Each allocation's weight is its closed-form marginal likelihood; in
    bounded mode the truncation of the means contributes the posterior mass
    of each box (the prior mass is the same for every allocation).

    Notes
    -----
    Requires known precisions when ``bounded`` (otherwise the box mass is
    not closed-form) and no weight bounds.
    """
    if not isinstance(spec, FiniteMixtureSpec):
        raise InvalidArgumentError("oracle needs a FiniteMixtureSpec")
    p, n, y = spec.p, data.n, data.y
    if p ** n > budget:
        raise UsageError(f"p**n = {p ** n} allocations exceed the budget {budget}")
    if bounded and not spec.bounded:
        raise UsageError("bounded oracle needs mean bounds")
    if bounded and spec.lambda_known is None:
        raise UsageError("bounded oracle needs known precisions")
    if spec.pi_bounds is not None:
        raise UsageError("oracle does not support weight bounds")
    grid = np.indices((p,) * n).reshape(n, -1).T + 1
    tau2, xi, gamma = spec.tau ** 2, spec.xi, spec.gamma
    log_w = np.empty(len(grid))
    params = []
    for r, z in enumerate(grid):
        lw = float(special.gammaln(np.bincount(z - 1, minlength=p) + gamma).sum())
        comp = []
        for j in range(p):
            yj = y[z == j + 1]
            nj = yj.size
            ybar = yj.mean() if nj else 0.0
            ss = float(((yj - ybar) ** 2).sum()) if nj else 0.0
            denom = nj * tau2[j] + 1.0
            mean = (nj * ybar * tau2[j] + xi[j]) / denom
            scale = tau2[j] / denom
            if spec.lambda_known is not None:
                lam = spec.lambda_known[j]
                lw += (0.5 * nj * (math.log(lam) - LOG_2PI) - 0.5 * math.log(denom)
                       - 0.5 * lam * (ss + nj * (ybar - xi[j]) ** 2 / denom))
                sd = math.sqrt(scale / lam)
                if bounded:
                    lo, hi = spec.mu_interval(j)
                    a, b = (lo - mean) / sd, (hi - mean) / sd
                    lw += _log_normal_mass(a, b)
                    comp.append(stats.truncnorm(a, b, loc=mean, scale=sd))
                else:
                    comp.append(stats.norm(mean, sd))
            else:
                a0, an = 0.5 * spec.eta, 0.5 * (spec.eta + nj)
                b0 = 0.5 * spec.zeta
                bn = 0.5 * (spec.zeta + nj * (ybar - xi[j]) ** 2 / denom + ss)
                lw += (a0 * math.log(b0) - special.gammaln(a0) + special.gammaln(an) - an * math.log(bn)
                       - 0.5 * math.log(denom) - 0.5 * nj * LOG_2PI)
                comp.append(stats.t(df=2 * an, loc=mean, scale=math.sqrt(bn * scale / an)))
        log_w[r] = lw
        params.append(comp)
    weights = np.exp(log_w - special.logsumexp(log_w))
    weights /= math.fsum(weights)
    counts = np.array([np.bincount(z - 1, minlength=p) for z in grid])
    total_gamma = float(gamma.sum())
    pi_marg = []
    for j in range(p):
        comps = [stats.beta(c[j] + gamma[j], n - c[j] + total_gamma - gamma[j]) for c in counts]
        pi_marg.append(MixtureMarginal(weights, comps))
    mu_marg = [MixtureMarginal(weights, [comp[j] for comp in params]) for j in range(p)]
    return ExactPosterior(grid, weights, pi_marg, mu_marg)


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Comparison:
    """Outcome of :func:`compare_distributions`."""

    statistic: str
    value: float
    threshold: float | None
    passed: bool | None
    bandwidth: float | None = None
    pvalue: float | None = None


def silverman_bandwidth(x):
    """Silverman's rule ``0.9 min(sd, IQR / 1.34) n^(-1/5)`` with a positive fallback."""
    x = np.asarray(x, float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    h = 0.9 * spread * x.size ** (-0.2)
    if h > 0:
        return h
    return 1e-3 * max(1.0, float(np.max(np.abs(x)))) if x.size else 1.0


def kde_on_grid(x, grid, bandwidth):
    """Gaussian kernel density of ``x`` evaluated on ``grid``."""
    x = np.asarray(x, float)
    out = np.zeros(len(grid))
    for chunk in np.array_split(x, max(1, x.size // 4096)):
        out += stats.norm.pdf((grid[:, None] - chunk[None, :]) / bandwidth).sum(axis=1)
    return out / (x.size * bandwidth)


def density_on_grid(x, points=GRID_POINTS):
    """``(grid, density, bandwidth)`` of a KDE over the sample range padded by 3 bandwidths."""
    x = np.asarray(x, float)
    if x.size == 0:
        raise UsageError("empty sample")
    h = silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, points)
    return grid, kde_on_grid(x, grid, h), h


def _smoothed_curve(curve, grid, bandwidth):
    """Exact density convolved with the same Gaussian kernel as the sample KDE."""
    fine = np.linspace(grid[0] - 4 * bandwidth, grid[-1] + 4 * bandwidth, 8 * len(grid))
    dx = fine[1] - fine[0]
    values = np.nan_to_num(np.asarray(curve.pdf(fine), float))
    smooth = gaussian_filter1d(values, bandwidth / dx, mode="constant", truncate=6.0)
    return np.interp(grid, fine, smooth)


def compare_distributions(a, b, statistic="tv", threshold=None, points=GRID_POINTS) -> Comparison:
    """Distance between a sample and another sample or an exact density.

    Parameters
    ----------
    a : array-like
        Sample.
    b : array-like or object with ``pdf`` and ``cdf``
        Second sample, or an exact distribution (e.g. :class:`MixtureMarginal`).
    statistic : {"tv", "ks"}
        ``"tv"`` is the total-variation distance between Gaussian KDEs on a
        ``points``-point grid over the pooled range (Silverman bandwidth on
        the pooled sample); an exact density is smoothed by the same kernel.
        ``"ks"`` is the two-sample or one-sample Kolmogorov-Smirnov distance.
    threshold : float, optional
        Verdict ``value < threshold``; for KS without a threshold the verdict
        is ``pvalue > 0.01``.
    """
    a = np.asarray(a, float).ravel()
    exact = hasattr(b, "pdf") and hasattr(b, "cdf")
    if not exact:
        b = np.asarray(b, float).ravel()
    if a.size == 0 or (not exact and b.size == 0):
        raise UsageError("comparison needs nonempty inputs")
    if statistic == "ks":
        res = stats.kstest(a, b.cdf) if exact else stats.ks_2samp(a, b)
        value, pvalue = float(res.statistic), float(res.pvalue)
        passed = (pvalue > 0.01) if threshold is None else bool(value < threshold)
        return Comparison("ks", value, threshold, passed, None, pvalue)
    if statistic != "tv":
        raise InvalidArgumentError("statistic must be 'tv' or 'ks'")
    pooled = a if exact else np.concatenate([a, b])
    h = silverman_bandwidth(pooled)
    grid = np.linspace(pooled.min() - 4 * h, pooled.max() + 4 * h, points)
    f = kde_on_grid(a, grid, h)
    g = _smoothed_curve(b, grid, h) if exact else kde_on_grid(b, grid, h)
    value = min(1.0, 0.5 * float(np.trapezoid(np.abs(f - g), grid)))
    passed = None if threshold is None else bool(value < threshold)
    return Comparison("tv", value, threshold, passed, h)


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------


def posterior_predictive(samples: SampleSet, grid) -> np.ndarray:
    """Mixture density averaged over the draws, on ``grid``."""
    grid = np.asarray(grid, float)
    mu, lam = np.asarray(samples["mu"]), np.asarray(samples["lam"])
    if samples.model == "dp":
        weights = np.full(mu.shape, 1.0 / mu.shape[1])
    else:
        weights = np.asarray(samples["pi"])
    out = np.zeros(len(grid))
    for w, m, l in zip(weights, mu, lam):
        out += (w * np.sqrt(l / (2 * np.pi)) * np.exp(-0.5 * l * (grid[:, None] - m) ** 2)).sum(axis=1)
    return out / len(mu)


def component_count_distribution(samples: SampleSet, M=None) -> np.ndarray:
    """Posterior probabilities of ``1..M`` distinct components."""
    k = np.asarray(samples["k"], dtype=int)
    M = int(k.max()) if M is None else int(M)
    return np.bincount(k - 1, minlength=M)[:M] / max(len(k), 1)
