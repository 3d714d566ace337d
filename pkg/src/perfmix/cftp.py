"""Coupling-from-the-past drivers with bounding chains on the discrete variables.

Each driver replays epochs ``j = 1, 2, ...`` covering times ``-2**j + 1 .. 0``
with the ledger's fixed uniforms. Once the bounding chains meet at a time
``t* < 0`` the ordinary transition is run forward from the common state
through ``t = 0``; only that final state is returned.

* :func:`run_cftp_known` -- any number of components, envelopes computed once
  over the weight and parameter boxes.
* :func:`run_cftp_two_component` -- two components with known precisions;
  lower and upper weight chains driven by the label-1 counts of the bounding
  allocations.
* :func:`run_cftp_dp` -- the Dirichlet-process mixture; allocation intervals
  plus a set of possible slot partitions, optionally switching to explicit
  propagation of every possible discrete state once that set is small.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .bounding import ALL, DPBounder, KnownBounder, TwoComponentBounder
from .dp import DPMixtureSpec, DPState, kernel_dp, partition_from_configuration
from .errors import InvalidArgumentError, NoCoalescenceError
from .finite import (
    Dataset,
    FiniteMixtureSpec,
    beta_from_exponentials,
    kernel_finite,
    pi_exponentials,
)
from .ledger import Kind, RandomLedger
from .optimize import AnnealSchedule

DEFAULT_EPOCH_CAP = 16
DEFAULT_SET_BUDGET = 4096


@dataclass(frozen=True)
class CoalescenceRecord:
    """Where the bounding chains met.

    ``t_star`` is the meeting time (negative), ``steps_to_zero = -t_star``
    the number of forward transitions applied afterwards, and
    ``backward_steps = 2**epoch`` the length of the successful epoch.
    """

    epoch: int
    t_star: int
    steps_to_zero: int
    backward_steps: int
    forward_steps: int = 0
    mode: str = "bounds"


@dataclass(frozen=True)
class PerfectSample:
    """State at ``t = 0`` together with its coalescence record and seed."""

    kind: str
    state: object
    record: CoalescenceRecord
    seed: int
    trace: dict = field(default_factory=dict, compare=False, repr=False)


def _epoch_start(j):
    return -(2**j) + 1


def _interval_product(low, high):
    return float(np.prod((np.asarray(high) - np.asarray(low) + 1).astype(float)))


def _interval_states(low, high):
    return itertools.product(*[range(a, b + 1) for a, b in zip(low, high)])


class _Bounding:
    """Bounding chains of one model: ``reset`` at each epoch start, then ``step``.

    ``step`` returns the number of discrete states compatible with the
    bounds after time ``t`` and a callable enumerating their keys.
    """

    def reset(self):
        pass

    def step(self, ledger, t):
        raise NotImplementedError


def _cftp_loop(kind, seed, epoch_cap, mode, set_budget, bounding, transition, key_of, trace):
    """Epoch loop shared by every model.

    ``transition(key, ledger, t)`` is the exact update of a discrete state
    key and returns the full state; ``key_of`` maps a full state back to its
    key.
    """
    if mode not in ("auto", "bounds"):
        raise InvalidArgumentError("mode must be 'auto' or 'bounds'")
    if int(epoch_cap) < 1:
        raise InvalidArgumentError("epoch_cap must be at least 1")
    base = RandomLedger(seed)
    history = []
    for j in range(1, int(epoch_cap) + 1):
        ledger = base.at_epoch(j)
        bounding.reset()
        states = None
        key_star = t_star = None
        used = "bounds"
        for t in range(_epoch_start(j), 1):
            if states is None:
                size, enumerate_keys = bounding.step(ledger, t)
                if trace:
                    history.append((j, t, "bounds", size))
                if t < 0 and size == 1:
                    key_star, t_star = next(iter(enumerate_keys())), t
                    break
                if mode == "auto" and size <= set_budget:
                    states = set(enumerate_keys())
                    used = "set"
            else:
                states = {key_of(transition(key, ledger, t)) for key in states}
                if trace:
                    history.append((j, t, "set", len(states)))
                if t < 0 and len(states) == 1:
                    key_star, t_star = next(iter(states)), t
                    break
        if t_star is not None:
            key, forward = key_star, 0
            for t in range(t_star + 1, 1):
                state = transition(key, ledger, t)
                key = key_of(state)
                forward += 1
            rec = CoalescenceRecord(j, t_star, -t_star, 2**j, forward, used)
            return PerfectSample(kind, state, rec, seed, {"history": history} if trace else {})
    raise NoCoalescenceError(f"no coalescence within {epoch_cap} epochs", epochs=int(epoch_cap))


def _finite_transition(data, spec):
    def transition(key, ledger, t):
        return kernel_finite(np.array(key, dtype=np.int64), data, spec, ledger, t)

    return transition


def _finite_key(state):
    return tuple(state.z.tolist())


# ---------------------------------------------------------------------------
# known number of components
# ---------------------------------------------------------------------------


class _KnownBounding(_Bounding):
    def __init__(self, bounder: KnownBounder, n):
        self.bounder, self.n = bounder, n

    def step(self, ledger, t):
        u = ledger.across(t, Kind.Z, self.n)
        low = np.empty(self.n, dtype=np.int64)
        high = np.empty(self.n, dtype=np.int64)
        for i in range(self.n):
            low[i], high[i] = self.bounder.bounds(i, u[i]).invert(u[i])
        return _interval_product(low, high), lambda: _interval_states(low, high)


def run_cftp_known(data: Dataset, spec: FiniteMixtureSpec, seed: int, optimizer="anneal",
                   schedule: AnnealSchedule | None = None, epoch_cap=DEFAULT_EPOCH_CAP, mode="auto",
                   set_budget=DEFAULT_SET_BUDGET, bounder: KnownBounder | None = None,
                   trace=False) -> PerfectSample:
    """Perfect sample for a ``p``-component mixture with bounded parameters.

    Envelopes of every ``z_i`` are computed once over the boxes, so at each
    time the allocation intervals follow from the shared uniforms alone.

    Parameters
    ----------
    optimizer : {"anneal", "exact"}
        How the envelopes are extremized.
    mode : {"auto", "bounds"}
        ``"bounds"`` runs the bounding chains until every interval is a single
        label. ``"auto"`` switches, once the intervals hold at most
        ``set_budget`` allocation vectors, to carrying each of them forward
        with the exact transition until one remains.
    """
    if bounder is None:
        bounder = KnownBounder(data, spec, optimizer, schedule, RandomLedger(seed))
    return _cftp_loop("finite", seed, epoch_cap, mode, set_budget, _KnownBounding(bounder, data.n),
                      _finite_transition(data, spec), _finite_key, trace)


# ---------------------------------------------------------------------------
# two components, monotone weight
# ---------------------------------------------------------------------------


class _TwoComponentBounding(_Bounding):
    """Allocation envelopes plus the label-1 counts that drive the weight chains.

    The fewest possible label-1 allocations (counted on the upper allocation
    chain) give the low weight, which pairs with the lower envelope; the most
    possible give the high weight. Each epoch starts from counts ``0`` and
    ``n``.
    """

    def __init__(self, bounder: TwoComponentBounder, n):
        self.bounder, self.n = bounder, n
        self.reset()

    def reset(self):
        self.fewest, self.most = 0, self.n

    def step(self, ledger, t):
        n = self.n
        e = pi_exponentials(ledger, t, n)
        pi_low = beta_from_exponentials(self.fewest, n, e)
        pi_high = beta_from_exponentials(self.most, n, e)
        u = ledger.across(t, Kind.Z, n)
        low = np.empty(n, dtype=np.int64)
        high = np.empty(n, dtype=np.int64)
        for i in range(n):
            low[i], high[i] = self.bounder.bounds(i, pi_low, pi_high, u[i]).invert(u[i])
        self.fewest = int(np.count_nonzero(high == 1))
        self.most = int(np.count_nonzero(low == 1))
        return _interval_product(low, high), lambda: _interval_states(low, high)


def run_cftp_two_component(data: Dataset, spec: FiniteMixtureSpec, seed: int, optimizer="corner",
                           schedule: AnnealSchedule | None = None, epoch_cap=DEFAULT_EPOCH_CAP,
                           mode="auto", set_budget=DEFAULT_SET_BUDGET,
                           bounder: TwoComponentBounder | None = None, trace=False) -> PerfectSample:
    """Perfect sample for two components with known precisions.

    Parameters
    ----------
    optimizer : {"corner", "anneal"}
        Exact corner enumeration or annealing for the envelope extremizers.
    mode : {"auto", "bounds"}
        As in :func:`run_cftp_known`.
    """
    if not spec.monotone_pi:
        raise InvalidArgumentError("two-component driver needs p = 2 with uniform Dirichlet weights")
    if bounder is None:
        bounder = TwoComponentBounder(data, spec, optimizer, schedule, RandomLedger(seed))
    return _cftp_loop("finite-2comp", seed, epoch_cap, mode, set_budget,
                      _TwoComponentBounding(bounder, data.n), _finite_transition(data, spec),
                      _finite_key, trace)


# ---------------------------------------------------------------------------
# Dirichlet-process mixture
# ---------------------------------------------------------------------------


def dp_bounding_step(bounder: DPBounder, partitions, ledger, t):
    """One bounding transition at time ``t``.

    Parameters are free in their boxes; ``partitions`` holds the possible
    slot partitions before the step. Returns allocation intervals, the
    configuration intervals and the possible partitions after the sweep.
    """
    n, M = bounder.data.n, bounder.M
    u_z = ledger.across(t, Kind.Z, n)
    z_low = np.empty(n, dtype=np.int64)
    z_high = np.empty(n, dtype=np.int64)
    for i in range(n):
        z_low[i], z_high[i] = bounder.bounds_z(i, partitions).invert(u_z[i])
    P = partitions
    c_low = np.empty(M, dtype=np.int64)
    c_high = np.empty(M, dtype=np.int64)
    for j in range(M):
        u = ledger.uniform(t, Kind.C, index=j)
        c_low[j], c_high[j] = bounder.bounds_c(j, P, z_low, z_high).invert(u)
        P = bounder.advance_partitions(P, j, int(c_low[j]), int(c_high[j]))
    if P is ALL and np.array_equal(c_low, c_high):
        P = frozenset([partition_from_configuration(c_low)])
    return z_low, z_high, c_low, c_high, P


class _DPBounding(_Bounding):
    def __init__(self, bounder: DPBounder):
        self.bounder = bounder
        self.reset()

    def reset(self):
        self.partitions = self.bounder.all_partitions()

    def step(self, ledger, t):
        z_low, z_high, _, _, P = dp_bounding_step(self.bounder, self.partitions, ledger, t)
        self.partitions = P
        count = np.inf if P is ALL else len(P)
        size = _interval_product(z_low, z_high) * count

        def enumerate_keys():
            return ((z, s) for z in _interval_states(z_low, z_high) for s in sorted(P))

        return size, enumerate_keys


def run_cftp_dp(data: Dataset, spec: DPMixtureSpec, seed: int, mode="auto", set_budget=DEFAULT_SET_BUDGET,
                partition_budget=4096, epoch_cap=DEFAULT_EPOCH_CAP, bounder: DPBounder | None = None,
                trace=False) -> PerfectSample:
    """Perfect sample for the Dirichlet-process mixture in truncated mode.

    The discrete state is the allocation vector with the slot partition;
    the bounding chains carry allocation intervals plus the set of possible
    partitions.

    Parameters
    ----------
    mode : {"auto", "bounds"}
        As in :func:`run_cftp_known`, with states counted as allocation
        vectors times possible partitions.
    """
    if bounder is None:
        bounder = DPBounder(data, spec, budget=partition_budget)

    def transition(key, ledger, t):
        return kernel_dp(np.array(key[0], dtype=np.int64), np.array(key[1], dtype=np.int64),
                         data, spec, ledger, t)

    def key_of(state: DPState):
        return tuple(state.z.tolist()), tuple(state.s.tolist())

    return _cftp_loop("dp", seed, epoch_cap, mode, set_budget, _DPBounding(bounder), transition, key_of, trace)


# ---------------------------------------------------------------------------
# forward Gibbs draws after a perfect sample
# ---------------------------------------------------------------------------

FORWARD_SEED_FLAG = 1 << 62


def forward_gibbs(sample: PerfectSample, data: Dataset, spec, draws: int) -> list:
    """Ordinary Gibbs sweeps started from a perfect sample.

    The sweeps read a ledger keyed by ``seed | 2**62`` at times
    ``-draws + 1 .. 0``, so they never reuse a cell of the CFTP run
    (replicate seeds are below ``2**62``). Returns the ``draws`` states
    visited after the perfect sample.
    """
    if draws < 0:
        raise InvalidArgumentError("draws must be non-negative")
    if sample.seed >= FORWARD_SEED_FLAG:
        raise InvalidArgumentError("forward draws need a seed below 2**62")
    if draws == 0:
        return []
    epoch = max(1, int(draws - 1).bit_length())
    ledger = RandomLedger(sample.seed | FORWARD_SEED_FLAG).at_epoch(epoch)
    state, out = sample.state, []
    for t in range(-draws + 1, 1):
        if isinstance(spec, DPMixtureSpec):
            state = kernel_dp(state.z, state.s, data, spec, ledger, t)
        else:
            state = kernel_finite(state.z, data, spec, ledger, t)
        out.append(state)
    return out
