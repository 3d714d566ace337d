"""scikit-learn style wrappers around the perfect samplers."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, DensityMixin
from sklearn.utils.validation import check_is_fitted

from .cftp import (
    DEFAULT_EPOCH_CAP,
    DEFAULT_SET_BUDGET,
    run_cftp_dp,
    run_cftp_known,
    run_cftp_two_component,
)
from .dp import DPMixtureSpec
from .errors import InvalidArgumentError
from .finite import Dataset, FiniteMixtureSpec
from .harness import SampleSet, posterior_predictive


def _observations(X) -> Dataset:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise InvalidArgumentError("X must hold a single feature")
        X = X[:, 0]
    elif X.ndim != 1:
        raise InvalidArgumentError("X must be one-dimensional or of shape (n, 1)")
    return Dataset(X)


class _PerfectMixtureBase(DensityMixin, BaseEstimator):
    """Shared ``fit`` loop: one perfect sample per seed ``random_state + r``."""

    def _spec(self):
        raise NotImplementedError

    def _draw(self, data, spec, seed):
        raise NotImplementedError

    def fit(self, X, y=None):
        """Draw ``n_samples`` independent perfect samples from the posterior given ``X``.

        Parameters
        ----------
        X : array-like of shape (n,) or (n, 1)
            Observations.
        y : ignored

        Returns
        -------
        self
        """
        if int(self.n_samples) < 1:
            raise InvalidArgumentError("n_samples must be at least 1")
        data = _observations(X)
        spec = self._spec()
        base = int(self.random_state)
        draws = [self._draw(data, spec, base + r) for r in range(int(self.n_samples))]
        self.spec_ = spec
        self.records_ = [d.record for d in draws]
        self.perfect_samples_ = draws
        self.samples_ = SampleSet.from_perfect(draws)
        self.n_features_in_ = 1
        return self

    def score_samples(self, X):
        """Log posterior predictive density at each point of ``X``.

        Parameters
        ----------
        X : array-like of shape (m,) or (m, 1)

        Returns
        -------
        ndarray of shape (m,)
        """
        check_is_fitted(self, "samples_")
        points = _observations(X).y
        with np.errstate(divide="ignore"):
            return np.log(posterior_predictive(self.samples_, points))

    def score(self, X, y=None):
        """Mean log posterior predictive density of ``X``."""
        return float(np.mean(self.score_samples(X)))


class PerfectFiniteMixture(_PerfectMixtureBase):
    """Perfect posterior samples of a bounded normal mixture with known precisions.

    Parameters
    ----------
    n_components : int
        Number of components ``p``.
    xi, tau : array-like of shape (n_components,)
        Prior means and scales of the component means.
    gamma : array-like of shape (n_components,)
        Dirichlet weights.
    mu_bounds : array-like of shape (n_components, 2)
        Box for the component means.
    lambda_known : array-like of shape (n_components,)
        Component precisions.
    n_samples : int
        Number of independent perfect samples drawn by ``fit``.
    random_state : int
        Seed of the first sample; sample ``r`` uses ``random_state + r``.
    optimizer : {"anneal", "exact", "corner"}
        Envelope extremizer. ``"corner"`` selects the two-component driver
        and needs two components with uniform Dirichlet weights.
    mode : {"auto", "bounds"}
        Pure bounding chains, or bounding chains that hand over to exact
        state-set propagation once at most ``set_budget`` states remain.
    epoch_cap, set_budget : int
        Largest epoch tried and exact-set size limit.

    Attributes
    ----------
    samples_ : SampleSet
        Stacked ``t = 0`` states (``pi``, ``mu``, ``lam``, ``z``).
    records_ : list of CoalescenceRecord
    perfect_samples_ : list of PerfectSample
    spec_ : FiniteMixtureSpec
    """

    def __init__(self, n_components=2, xi=0.0, tau=1.0, gamma=1.0, mu_bounds=None, lambda_known=None,
                 n_samples=100, random_state=0, optimizer="anneal", mode="auto",
                 epoch_cap=DEFAULT_EPOCH_CAP, set_budget=DEFAULT_SET_BUDGET):
        self.n_components = n_components
        self.xi = xi
        self.tau = tau
        self.gamma = gamma
        self.mu_bounds = mu_bounds
        self.lambda_known = lambda_known
        self.n_samples = n_samples
        self.random_state = random_state
        self.optimizer = optimizer
        self.mode = mode
        self.epoch_cap = epoch_cap
        self.set_budget = set_budget

    def _spec(self):
        if self.mu_bounds is None or self.lambda_known is None:
            raise InvalidArgumentError("perfect sampling needs mu_bounds and lambda_known")
        return FiniteMixtureSpec(p=self.n_components, xi=self.xi, tau=self.tau, gamma=self.gamma,
                                 mu_bounds=self.mu_bounds, lambda_known=self.lambda_known)

    def _draw(self, data, spec, seed):
        common = dict(epoch_cap=self.epoch_cap, mode=self.mode, set_budget=self.set_budget)
        if self.optimizer == "corner":
            return run_cftp_two_component(data, spec, seed, optimizer="corner", **common)
        return run_cftp_known(data, spec, seed, optimizer=self.optimizer, **common)


class PerfectDPMixture(_PerfectMixtureBase):
    """Perfect posterior samples of the finite-``M`` Dirichlet-process normal mixture.

    Parameters
    ----------
    n_components : int
        Number of slots ``M``.
    eta, zeta, mu0, psi : float
        Base measure hyperparameters.
    alpha : float
        Fixed concentration, used when ``alpha_prior`` is None.
    alpha_prior : tuple of float, optional
        Gamma(shape, rate) prior on the concentration.
    alpha_bounds, mu_bounds, lambda_bounds : tuple of float, optional
        Boxes of the truncated mode; ``mu_bounds`` is required.
    lambda_known : float, optional
        Shared known precision.
    n_samples, random_state, mode, epoch_cap, set_budget
        As in :class:`PerfectFiniteMixture`.
    partition_budget : int
        Most slot partitions the bounding chain tracks explicitly.

    Attributes
    ----------
    samples_ : SampleSet
        Stacked ``t = 0`` states (``mu``, ``lam``, ``z``, ``s``, ``alpha``, ``k``).
    records_ : list of CoalescenceRecord
    perfect_samples_ : list of PerfectSample
    spec_ : DPMixtureSpec
    """

    def __init__(self, n_components=5, eta=1.0, zeta=1.0, mu0=0.0, psi=1.0, alpha=1.0, alpha_prior=None,
                 alpha_bounds=None, mu_bounds=None, lambda_bounds=None, lambda_known=None, n_samples=100,
                 random_state=0, mode="auto", epoch_cap=DEFAULT_EPOCH_CAP, set_budget=DEFAULT_SET_BUDGET,
                 partition_budget=4096):
        self.n_components = n_components
        self.eta = eta
        self.zeta = zeta
        self.mu0 = mu0
        self.psi = psi
        self.alpha = alpha
        self.alpha_prior = alpha_prior
        self.alpha_bounds = alpha_bounds
        self.mu_bounds = mu_bounds
        self.lambda_bounds = lambda_bounds
        self.lambda_known = lambda_known
        self.n_samples = n_samples
        self.random_state = random_state
        self.mode = mode
        self.epoch_cap = epoch_cap
        self.set_budget = set_budget
        self.partition_budget = partition_budget

    def _spec(self):
        if self.mu_bounds is None:
            raise InvalidArgumentError("perfect sampling needs mu_bounds")
        return DPMixtureSpec(M=self.n_components, eta=self.eta, zeta=self.zeta, mu0=self.mu0, psi=self.psi,
                             alpha=self.alpha, alpha_prior=self.alpha_prior, alpha_bounds=self.alpha_bounds,
                             mu_bounds=self.mu_bounds, lambda_bounds=self.lambda_bounds,
                             lambda_known=self.lambda_known)

    def _draw(self, data, spec, seed):
        return run_cftp_dp(data, spec, seed, mode=self.mode, set_budget=self.set_budget,
                           partition_budget=self.partition_budget, epoch_cap=self.epoch_cap)

    def component_count_distribution(self):
        """Posterior probabilities of ``1..M`` distinct components among the samples."""
        check_is_fitted(self, "samples_")
        k = np.asarray(self.samples_["k"], dtype=int)
        return np.bincount(k - 1, minlength=self.n_components)[: self.n_components] / len(k)
