import numpy as np
import pytest

from perfmix import Dataset, FiniteMixtureSpec, RandomLedger
from perfmix.bounding import TwoComponentBounder
from perfmix.errors import InstabilityError, InvalidArgumentError, UsageError
from perfmix.ledger import Kind
from perfmix.optimize import (
    AnnealSchedule,
    OptDomain,
    StagedExtremum,
    anneal_extremize,
    corner_candidates,
    corner_extremize,
    h_surrogate,
    h_surrogate_extremize,
    stability_extend,
)

from conftest import two_component_spec


def stream(seed=0, index=0):
    return RandomLedger(seed).stream(0, Kind.ANNEAL, index)


def test_constant_objective():
    (cont, _), value, _ = anneal_extremize(lambda c, d: 3.25, OptDomain([0, -1], [1, 1]), "max",
                                           AnnealSchedule(iters=200), stream())
    assert value == 3.25
    assert np.all((cont >= [0, -1]) & (cont <= [1, 1]))


def test_quadratic_vertex():
    (cont, _), value, _ = anneal_extremize(lambda c, d: -(c[0] - 0.37) ** 2, OptDomain([-2.0], [3.0]), "max",
                                           AnnealSchedule(iters=10_000, polish=False), stream(1))
    assert abs(cont[0] - 0.37) < 1e-3


def test_best_visited_beats_random_probes(rng):
    objective = lambda c, d: np.sin(3 * c[0]) * np.cos(2 * c[1]) + 0.1 * c[0]
    domain = OptDomain([-2, -2], [2, 2])
    probes = rng.uniform(-2, 2, size=(50, 2))
    _, vmax, _ = anneal_extremize(objective, domain, "max", AnnealSchedule(), stream(2))
    _, vmin, _ = anneal_extremize(objective, domain, "min", AnnealSchedule(), stream(3))
    values = [objective(p, []) for p in probes]
    assert vmax >= max(values) and vmin <= min(values)


def test_annealing_is_deterministic():
    objective = lambda c, d: np.cos(5 * c[0]) + c[0] ** 2 + (d[0] == 2)
    domain = OptDomain([-1.0], [1.0], choices=[[1, 2, 3]])
    a = anneal_extremize(objective, domain, "max", AnnealSchedule(iters=300), stream(4))
    b = anneal_extremize(objective, domain, "max", AnnealSchedule(iters=300), stream(4))
    assert a[1] == b[1] and np.array_equal(a[0][0], b[0][0]) and a[0][1] == b[0][1]


def test_discrete_coordinates_and_frozen_ones():
    domain = OptDomain([], [], choices=[[1, 2, 3], [1, 2, 3]], frozen=(1,))
    (_, disc), value, _ = anneal_extremize(lambda c, d: d[0] * 10 + d[1], domain, "max",
                                           AnnealSchedule(iters=300), stream(5))
    assert disc == [3, 1] and value == 31


def test_argument_errors():
    with pytest.raises(UsageError):
        anneal_extremize(lambda c, d: 0.0, OptDomain([0.0], [1.0]), "max", AnnealSchedule(), stream(),
                         x0=(np.array([2.0]), []))
    with pytest.raises(InvalidArgumentError):
        anneal_extremize(lambda c, d: 0.0, OptDomain([0.0], [1.0]), "up", AnnealSchedule(), stream())
    with pytest.raises(InvalidArgumentError):
        AnnealSchedule(temp_scale=0.0)
    with pytest.raises(InvalidArgumentError):
        OptDomain([1.0], [0.0])


def test_stability_extension():
    _, _, run = anneal_extremize(lambda c, d: -abs(c[0] - 1.0), OptDomain([0.0], [1.0]), "max",
                                 AnnealSchedule(iters=200), stream(6))
    _, value, stable = stability_extend(run, lambda v: round(v, 6))
    assert stable and value == 0.0
    # a plateau whose realization is a constant is stable at once
    _, _, flat = anneal_extremize(lambda c, d: 0.5, OptDomain([0.0], [1.0]), "max", AnnealSchedule(iters=50),
                                  stream(7))
    assert stability_extend(flat, lambda v: v > 0.1)[2]


def test_unsettled_realization_is_an_error():
    schedule = AnnealSchedule(iters=20, max_extensions=2)
    _, _, run = anneal_extremize(lambda c, d: c[0], OptDomain([0.0], [1.0]), "max", schedule, stream(8))
    counter = iter(range(100))
    with pytest.raises(InstabilityError):
        stability_extend(run, lambda v: next(counter))


def test_staged_extremum_settles():
    staged = StagedExtremum(lambda c, d: -(c[0] - 0.25) ** 2, OptDomain([0.0], [1.0]), "max",
                            AnnealSchedule(iters=100), stream(9))
    point, m = staged.settle(lambda pt, v: pt[0][0] < 0.5)
    assert m == 1 and abs(point[0][0] - 0.25) < 1e-6


def test_corner_candidates_degenerate_at_a_bound():
    assert corner_candidates(0.2, (0.2, 4.12)) == [0.2, 4.12]
    assert corner_candidates(9.0, (0.2, 4.12)) == [0.2, 4.12]
    assert corner_candidates(2.0, (0.2, 4.12)) == [0.2, 2.0, 4.12]
    with pytest.raises(UsageError):
        corner_extremize(lambda p: 0.0, [[0.0], [1.0], [2.0]], "min")


def _grid_extremes(bounder, i, size=200):
    spec = bounder.spec
    g1 = np.linspace(*spec.mu_interval(0), size)
    g2 = np.linspace(*spec.mu_interval(1), size)
    # exact quadratic extremes in each coordinate lie on {y, lo, hi}; include them in the grid
    y = bounder.data.y[i]
    g1 = np.union1d(g1, corner_candidates(y, spec.mu_interval(0)))
    g2 = np.union1d(g2, corner_candidates(y, spec.mu_interval(1)))
    values = np.array([[bounder.log_ratio(i, (a, b)) for b in g2] for a in g1])
    return values.min(), values.max()


def test_corner_search_matches_a_grid(two_component):
    data, spec = two_component
    bounder = TwoComponentBounder(data, spec, "corner")
    for i in range(data.n):
        lo_pt, hi_pt = bounder.corner_points(i)
        grid_lo, grid_hi = _grid_extremes(bounder, i)
        assert bounder.log_ratio(i, lo_pt) == pytest.approx(grid_lo, abs=1e-9)
        assert bounder.log_ratio(i, hi_pt) == pytest.approx(grid_hi, abs=1e-9)
        for pi in (0.1, 0.5, 0.9):
            assert bounder.cdf1(i, lo_pt, pi) <= bounder.cdf1(i, hi_pt, pi)


def test_annealing_reaches_the_corner_optimum(rng):
    base = two_component_spec()
    schedule = AnnealSchedule()
    for trial in range(1000):
        y = rng.uniform(-1.0, 6.0, size=1)
        lo1, lo2 = rng.uniform(-1, 2.5, size=2)
        spec = FiniteMixtureSpec(p=2, xi=base.xi, tau=base.tau, gamma=base.gamma,
                                 mu_bounds=[(lo1, lo1 + rng.uniform(0.5, 4)), (lo2, lo2 + rng.uniform(0.5, 4))],
                                 lambda_known=base.lambda_known)
        data = Dataset(y)
        corner = TwoComponentBounder(data, spec, "corner")
        annealed = TwoComponentBounder(data, spec, "anneal", schedule, RandomLedger(trial))
        for direction in ("min", "max"):
            want = corner.log_ratio(0, corner.argopt(0, direction))
            got = annealed.log_ratio(0, annealed.argopt(0, direction))
            assert got == pytest.approx(want, abs=1e-10)


def test_surrogate_values():
    w = np.array([0.2, 0.3, 0.5])
    for F in ([0, 0, 0], [0, 0, 1], [0, 1, 1]):
        assert 0 < h_surrogate(w, F) < 1
    assert h_surrogate(w, [1, 1, 1]) == pytest.approx(1.0, abs=1e-15)
    assert h_surrogate(w, [1, 1, 1]) > h_surrogate(w, [0, 1, 1]) > h_surrogate(w, [0, 0, 1])


def test_surrogate_extremize_on_a_constant_indicator():
    domain = OptDomain([0.0], [1.0])
    got, _ = h_surrogate_extremize(2, lambda c, d: np.array([0.0, 1.0, 1.0]), domain, "max",
                                   AnnealSchedule(iters=50), stream(10))
    assert got == 1.0
    got, _ = h_surrogate_extremize(2, lambda c, d: np.array([0.0, 1.0, 1.0]), domain, "min",
                                   AnnealSchedule(iters=50), stream(10))
    assert got == 1.0


def test_surrogate_extremize_finds_both_values():
    """Label 2 of a two-slot configuration: S = (1, 1) or (1, 2) depending on c."""
    domain = OptDomain([], [], choices=[[1, 2], [1, 2]])
    table = {(1, 1): (1, 1), (1, 2): (1, 2), (2, 1): (1, 1), (2, 2): (1, 2)}

    def evaluator(c, d):
        s2 = table[tuple(d)][1]
        return np.array([1.0 if s2 <= 1 else 0.0, 1.0])

    low, _ = h_surrogate_extremize(1, evaluator, domain, "min", AnnealSchedule(iters=200), stream(11))
    high, _ = h_surrogate_extremize(1, evaluator, domain, "max", AnnealSchedule(iters=200), stream(11),
                                    x0=(np.zeros(0), [1, 2]))
    assert (low, high) == (0.0, 1.0)
