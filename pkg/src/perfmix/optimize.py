"""Simulated annealing with logarithmic cooling, realization-based stability checks,
exact corner enumeration and the weighted surrogate for 0/1-valued objectives.

All randomness comes from a ledger :class:`~perfmix.ledger.Stream`; each
annealing iteration reads exactly four cells (coordinate choice, proposal,
proposal type, acceptance) so runs can be extended and replayed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtri

from .errors import InstabilityError, InvalidArgumentError, UsageError


@dataclass(frozen=True)
class AnnealSchedule:
    """Cooling ``T(t) = temp_scale / log(1 + t)`` and run lengths.

    ``extension`` defaults to ``iters``. ``pilot`` iterations at the start
    of a run retune the random-walk step sizes towards ``target_acceptance``.
    A continuous proposal snaps to a box end with probability
    ``snap_probability``, is drawn uniformly over the coordinate's interval
    with probability ``global_probability``, and is a normal random-walk step
    otherwise.
    """

    temp_scale: float = 1.0
    iters: int = 500
    extension: int | None = None
    max_extensions: int = 5
    pilot: int = 100
    target_acceptance: float = 0.25
    snap_probability: float = 0.1
    global_probability: float = 0.1
    polish: bool = True

    def __post_init__(self):
        if not self.temp_scale > 0:
            raise InvalidArgumentError("temp_scale must be positive")
        if int(self.iters) < 1:
            raise InvalidArgumentError("iters must be at least 1")
        if self.extension is None:
            object.__setattr__(self, "extension", int(self.iters))
        if int(self.extension) < 1 or int(self.max_extensions) < 1:
            raise InvalidArgumentError("extension and max_extensions must be at least 1")

    def temperature(self, t):
        return self.temp_scale / math.log1p(t)


@dataclass
class OptDomain:
    """Box-constrained continuous coordinates plus discrete coordinates.

    Parameters
    ----------
    lower, upper : array-like
        Continuous bounds; a coordinate with ``lower == upper`` is frozen.
    choices : list of sequences, optional
        Allowed values of each discrete coordinate. A callable
        ``choices(index, current_discrete)`` may be given instead for
        state-dependent rules.
    frozen : sequence of int, optional
        Discrete coordinates that are never proposed.
    """

    lower: np.ndarray = field(default_factory=lambda: np.zeros(0))
    upper: np.ndarray = field(default_factory=lambda: np.zeros(0))
    choices: object = None
    n_discrete: int = 0
    frozen: tuple = ()

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise InvalidArgumentError("lower and upper must have the same shape")
        if np.any(self.lower > self.upper) or not np.all(np.isfinite(self.lower)) or not np.all(
            np.isfinite(self.upper)
        ):
            raise InvalidArgumentError("continuous bounds must be finite with lower <= upper")
        if self.choices is not None and not callable(self.choices):
            self.choices = [list(c) for c in self.choices]
            self.n_discrete = len(self.choices)
        self.frozen = tuple(self.frozen)

    @property
    def n_continuous(self):
        return len(self.lower)

    def allowed(self, index, disc):
        if callable(self.choices):
            return list(self.choices(index, disc))
        return self.choices[index]

    def free_coordinates(self):
        cont = [("c", k) for k in range(self.n_continuous) if self.upper[k] > self.lower[k]]
        disc = [("d", k) for k in range(self.n_discrete) if k not in self.frozen]
        return cont + disc

    def contains(self, cont, disc):
        if np.any(cont < self.lower) or np.any(cont > self.upper):
            return False
        for k in range(self.n_discrete):
            if disc[k] not in self.allowed(k, disc):
                return False
        return True


@dataclass
class AnnealRun:
    """Resumable annealing run; ``best_*`` hold the best point visited."""

    objective: object
    domain: OptDomain
    direction: str
    schedule: AnnealSchedule
    stream: object
    cont: np.ndarray
    disc: list
    value: float
    best_cont: np.ndarray
    best_disc: list
    best_value: float
    steps: np.ndarray
    t: int = 0
    accepted: int = 0

    @property
    def sign(self):
        return 1.0 if self.direction == "max" else -1.0

    def _step(self):
        free = self.domain.free_coordinates()
        u_coord, u_prop, u_kind, u_acc = (self.stream.next() for _ in range(4))
        self.t += 1
        if not free:
            return
        kind, k = free[min(int(u_coord * len(free)), len(free) - 1)]
        cont = self.cont.copy()
        disc = list(self.disc)
        if kind == "c":
            lo, hi = self.domain.lower[k], self.domain.upper[k]
            if u_kind < self.schedule.snap_probability:
                cont[k] = lo if u_prop < 0.5 else hi
            elif u_kind < self.schedule.snap_probability + self.schedule.global_probability:
                cont[k] = lo + (hi - lo) * u_prop
            else:
                cont[k] = cont[k] + self.steps[k] * ndtri(u_prop)
            if cont[k] < lo or cont[k] > hi:
                return
        else:
            allowed = self.domain.allowed(k, disc)
            disc[k] = allowed[min(int(u_prop * len(allowed)), len(allowed) - 1)]
            if not self.domain.contains(cont, disc):
                return
        value = float(self.objective(cont, disc))
        if not np.isfinite(value):
            return
        gain = self.sign * (value - self.value)
        if gain >= 0 or math.log(u_acc) < gain / self.schedule.temperature(self.t):
            self.cont, self.disc, self.value = cont, disc, value
            self.accepted += 1
            if self.sign * (value - self.best_value) > 0:
                self.best_cont, self.best_disc, self.best_value = cont.copy(), list(disc), value

    def run(self, iterations):
        for _ in range(int(iterations)):
            self._step()
        return self

    def tune(self):
        """Pilot phase: adapt step sizes in blocks of 20 towards the target acceptance."""
        block = 20
        done = 0
        while done < self.schedule.pilot:
            before = self.accepted
            n = min(block, self.schedule.pilot - done)
            self.run(n)
            done += n
            rate = (self.accepted - before) / n
            factor = 1.5 if rate > self.schedule.target_acceptance else 1.0 / 1.5
            width = self.domain.upper - self.domain.lower
            self.steps = np.clip(self.steps * factor, 1e-12 * np.maximum(width, 1e-300), np.maximum(width, 1e-300))
        return self

    def polish(self):
        """Deterministic coordinate-wise bounded refinement of the best point."""
        if self.domain.n_continuous == 0:
            return self
        cont = self.best_cont.copy()
        for _ in range(2):
            for k in range(self.domain.n_continuous):
                lo, hi = self.domain.lower[k], self.domain.upper[k]
                if hi <= lo:
                    continue

                def f(x, k=k):
                    trial = cont.copy()
                    trial[k] = x
                    return -self.sign * float(self.objective(trial, self.best_disc))

                res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(1.0, hi - lo)})
                cands = [(float(res.fun), float(res.x)), (f(lo), lo), (f(hi), hi), (f(cont[k]), cont[k])]
                cont[k] = min(cands)[1]
        value = float(self.objective(cont, self.best_disc))
        if self.sign * (value - self.best_value) > 0:
            self.best_cont, self.best_value = cont, value
        return self


def start_run(objective, domain, direction, schedule, stream, x0=None):
    if direction not in ("min", "max"):
        raise InvalidArgumentError("direction must be 'min' or 'max'")
    if x0 is None:
        cont = 0.5 * (domain.lower + domain.upper)
        disc = []
        for k in range(domain.n_discrete):
            disc.append(domain.allowed(k, disc + [None] * (domain.n_discrete - k))[0])
    else:
        cont = np.asarray(x0[0], dtype=float).copy()
        disc = list(x0[1])
    if not domain.contains(cont, disc):
        raise UsageError("initial point is infeasible")
    value = float(objective(cont, disc))
    if not np.isfinite(value):
        raise UsageError("objective is not finite at the initial point")
    steps = np.maximum((domain.upper - domain.lower) / 20.0, 0.0)
    return AnnealRun(objective, domain, direction, schedule, stream, cont, disc, value,
                     cont.copy(), list(disc), value, steps)


def anneal_extremize(objective, domain, direction, schedule, stream, x0=None):
    """Best-visited point of a logarithmic-cooling annealing run.

    Parameters
    ----------
    objective : callable
        ``objective(continuous, discrete) -> float``.
    domain : OptDomain
    direction : {"min", "max"}
    schedule : AnnealSchedule
    stream : Stream
        Ledger row providing every uniform used.
    x0 : tuple, optional
        Feasible ``(continuous, discrete)`` starting point.

    Returns
    -------
    argopt : tuple
    value : float
    run : AnnealRun
        Resumable state for :func:`stability_extend`.
    """
    run = start_run(objective, domain, direction, schedule, stream, x0)
    pilot = min(schedule.pilot, schedule.iters)
    if pilot:
        run.tune()
    run.run(schedule.iters - pilot)
    if schedule.polish:
        run.polish()
    return (run.best_cont, run.best_disc), run.best_value, run


def stability_extend(run: AnnealRun, realize, previous=None):
    """Extend ``run`` until ``realize(best_value)`` repeats on consecutive extensions.

    Returns ``(argopt, value, stable)``; raises :class:`InstabilityError` if
    ``max_extensions`` pass without two equal consecutive realizations.
    """
    sched = run.schedule
    prev = realize(run.best_value) if previous is None else previous
    for _ in range(sched.max_extensions):
        run.run(sched.extension)
        if sched.polish:
            run.polish()
        cur = realize(run.best_value)
        if cur == prev:
            return (run.best_cont, run.best_disc), run.best_value, True
        prev = cur
    raise InstabilityError(f"realization still changing after {sched.max_extensions} extensions")


class StagedExtremum:
    """Lazily extended annealing stages of one objective, for realization checks.

    Stage 0 is the base run; stage ``m`` adds ``m`` extensions. For a given
    realization map the first stage whose realization equals that of the
    previous stage is used, following the stability rule.
    """

    def __init__(self, objective, domain, direction, schedule, stream, x0=None):
        self.schedule = schedule
        argopt, value, run = anneal_extremize(objective, domain, direction, schedule, stream, x0)
        self._run = run
        self.points = [argopt]
        self.values = [value]

    def stage(self, m):
        while len(self.points) <= m:
            self._run.run(self.schedule.extension)
            if self.schedule.polish:
                self._run.polish()
            self.points.append((self._run.best_cont.copy(), list(self._run.best_disc)))
            self.values.append(self._run.best_value)
        return self.points[m], self.values[m]

    def settle(self, realize):
        """First stage whose realization repeats the previous one; ``(argopt, stage)``."""
        prev = realize(*self.stage(0))
        for m in range(1, self.schedule.max_extensions + 1):
            cur = realize(*self.stage(m))
            if cur == prev:
                return self.points[m], m
            prev = cur
        raise InstabilityError(f"realization unsettled after {self.schedule.max_extensions} extensions")


def corner_extremize(objective, candidates, direction):
    """Exact extremum over a finite product grid of candidate coordinates.

    Parameters
    ----------
    objective : callable
        ``objective(point) -> float`` with ``point`` an array.
    candidates : sequence of sequences
        Candidate values per coordinate (two coordinates).
    direction : {"min", "max"}
    """
    if len(candidates) != 2:
        raise UsageError("corner enumeration applies to two-coordinate families only")
    best = None
    for point in itertools.product(*candidates):
        v = float(objective(np.array(point)))
        if best is None or (v < best[1] if direction == "min" else v > best[1]):
            best = (np.array(point), v)
    return best


def corner_candidates(center, interval):
    """``{clip(center), lo, hi}`` for one coordinate."""
    lo, hi = interval
    return sorted({float(min(max(center, lo), hi)), float(lo), float(hi)})


def h_surrogate(weights, F):
    """``sum_i w_i sqrt((F_i + w_i) / (1 + w_i))``."""
    w = np.asarray(weights, dtype=float)
    return float(np.sum(w * np.sqrt((np.asarray(F, float) + w) / (1.0 + w))))


def h_surrogate_extremize(k, evaluator, domain, direction, schedule, stream, x0=None,
                          kappa=5.0, other_range=(1.0, 10.0)):
    """Extremize a 0/1-valued ``F(k)`` by annealing the weighted surrogate ``h``.

    ``evaluator(continuous, discrete)`` returns the 0/1 vector ``F(1..K)``.
    Label ``k`` (1-based) carries weight ``1 + kappa * log(1 + t)``; the other
    labels get weights drawn from ``other_range`` via the stream each
    iteration. Each iteration reads ``4 + K`` cells.

    Returns
    -------
    value : float
        Extremal ``F(k)`` seen (0 or 1).
    argopt : tuple
    """
    if direction not in ("min", "max"):
        raise InvalidArgumentError("direction must be 'min' or 'max'")
    run = start_run(lambda c, d: float(evaluator(c, d)[k - 1]), domain, direction, schedule, stream, x0)
    sign = 1.0 if direction == "max" else -1.0
    F = np.asarray(evaluator(run.cont, run.disc), dtype=float)
    K = len(F)
    best_val, best = F[k - 1], (run.cont.copy(), list(run.disc))
    lo, hi = other_range
    free = domain.free_coordinates()
    total = schedule.iters + schedule.extension * schedule.max_extensions
    for t in range(1, total + 1):
        if best_val == (1.0 if direction == "max" else 0.0):
            break
        n = lo + (hi - lo) * np.array([stream.next() for _ in range(K)])
        n[k - 1] = 1.0 + kappa * math.log1p(t)
        w = n / n.sum()
        u_coord, u_prop, u_kind, u_acc = (stream.next() for _ in range(4))
        if not free:
            break
        kind, c = free[min(int(u_coord * len(free)), len(free) - 1)]
        cont, disc = run.cont.copy(), list(run.disc)
        if kind == "c":
            lo_c, hi_c = domain.lower[c], domain.upper[c]
            if u_kind < schedule.snap_probability:
                cont[c] = lo_c if u_prop < 0.5 else hi_c
            elif u_kind < schedule.snap_probability + schedule.global_probability:
                cont[c] = lo_c + (hi_c - lo_c) * u_prop
            else:
                cont[c] += run.steps[c] * ndtri(u_prop)
            if cont[c] < lo_c or cont[c] > hi_c:
                continue
        else:
            allowed = domain.allowed(c, disc)
            disc[c] = allowed[min(int(u_prop * len(allowed)), len(allowed) - 1)]
            if not domain.contains(cont, disc):
                continue
        F_new = np.asarray(evaluator(cont, disc), dtype=float)
        h_old, h_new = h_surrogate(w, F), h_surrogate(w, F_new)
        gain = sign * (h_new - h_old)
        if gain >= 0 or math.log(u_acc) < gain / schedule.temperature(t):
            run.cont, run.disc, F = cont, disc, F_new
            if sign * (F[k - 1] - best_val) > 0:
                best_val, best = F[k - 1], (cont.copy(), list(disc))
    return float(best_val), best
