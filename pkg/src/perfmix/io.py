"""Run configuration, dataset ingestion, replicate orchestration and result files.

Configuration files are flat ``key = value`` text; ``#`` starts a comment.
Lists are comma separated and intervals are written ``lo:hi`` (one per
component for the finite models). Unknown keys are errors. See the README
for the full key list.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cftp import forward_gibbs, run_cftp_dp, run_cftp_known, run_cftp_two_component
from .dp import DPMixtureSpec
from .errors import ConfigError, UsageError
from .finite import Dataset, FiniteMixtureSpec
from .harness import (
    GRID_POINTS,
    SampleSet,
    component_count_distribution,
    density_on_grid,
    posterior_predictive,
)
from .optimize import AnnealSchedule

MODELS = ("finite", "finite-2comp", "dp")

_COMMON_KEYS = {
    "model", "data", "seed", "replicates", "workers", "output", "epoch_cap", "mode", "set_budget",
    "anneal_temp_scale", "anneal_iters", "anneal_extension", "anneal_max_extensions", "anneal_pilot",
    "gibbs_mode", "gibbs_burn_in", "gibbs_keep", "gibbs_protocol", "gibbs_thin", "pilot_sweeps",
    "forward_draws", "validate_tv",
}
_FINITE_KEYS = {"p", "eta", "zeta", "xi", "tau", "gamma", "mu_bounds", "lambda_bounds", "pi_bounds",
                "lambda_known", "optimizer"}
_DP_KEYS = {"M", "eta", "zeta", "mu0", "psi", "alpha", "alpha_prior", "alpha_bounds", "mu_bounds",
            "lambda_bounds", "lambda_known", "partition_budget"}

_DEFAULTS = {
    "seed": "0", "replicates": "1", "workers": "1", "epoch_cap": "16", "mode": "auto", "set_budget": "4096",
    "gibbs_mode": "bounded", "gibbs_burn_in": "10000", "gibbs_keep": "1000", "gibbs_protocol": "independent",
    "gibbs_thin": "1", "pilot_sweeps": "5000", "forward_draws": "0", "validate_tv": "0.03",
}


def _parse_float(text, key):
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _parse_int(text, key):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _parse_list(text, key):
    return [_parse_float(v.strip(), key) for v in text.split(",") if v.strip()]


def _parse_interval(text, key):
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected lo:hi, got {text!r}")
    return (_parse_float(parts[0].strip(), key), _parse_float(parts[1].strip(), key))


def _parse_intervals(text, key):
    return [_parse_interval(v.strip(), key) for v in text.split(",") if v.strip()]


@dataclass
class RunConfig:
    """Validated run configuration.

    ``values`` keeps the raw strings in file order; ``source_dir`` resolves a
    relative ``data`` path.
    """

    values: dict
    source_dir: Path = field(default_factory=Path.cwd)

    def __post_init__(self):
        model = self.values.get("model")
        if model not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}; got {model!r}")
        allowed = _COMMON_KEYS | (_DP_KEYS if model == "dp" else _FINITE_KEYS)
        unknown = sorted(set(self.values) - allowed)
        if unknown:
            raise ConfigError(f"unknown key(s) for model {model}: {', '.join(unknown)}")
        if "data" not in self.values:
            raise ConfigError("missing key: data")
        if model != "dp" and "p" not in self.values:
            raise ConfigError("missing key: p")
        if model == "dp" and "M" not in self.values:
            raise ConfigError("missing key: M")
        # validate everything up front
        self.spec()
        self.schedule()
        for key in ("seed", "replicates", "workers", "epoch_cap", "set_budget", "gibbs_burn_in", "gibbs_keep",
                    "gibbs_thin", "pilot_sweeps", "forward_draws"):
            if _parse_int(self.get(key), key) < 0:
                raise ConfigError(f"{key} must be non-negative")
        if self.get("mode") not in ("auto", "bounds"):
            raise ConfigError("mode must be auto or bounds")
        if self.get("gibbs_mode") not in ("bounded", "unbounded"):
            raise ConfigError("gibbs_mode must be bounded or unbounded")
        if self.get("gibbs_protocol") not in ("independent", "single"):
            raise ConfigError("gibbs_protocol must be independent or single")
        optimizer = self.values.get("optimizer")
        if optimizer is not None:
            legal = ("corner", "anneal") if model == "finite-2comp" else ("anneal", "exact")
            if optimizer not in legal:
                raise ConfigError(f"optimizer for {model} must be one of {', '.join(legal)}")

    # -- construction ----------------------------------------------------
    @classmethod
    def from_text(cls, text, source_dir=None):
        values = {}
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {number}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in values:
                raise ConfigError(f"line {number}: duplicate key {key}")
            values[key] = value
        return cls(values, Path(source_dir) if source_dir else Path.cwd())

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_text(text, path.parent)

    def with_values(self, **overrides):
        values = dict(self.values)
        values.update({k: str(v) for k, v in overrides.items() if v is not None})
        return RunConfig(values, self.source_dir)

    def to_text(self):
        """Canonical replay text with the data path made absolute.

        ``output`` and ``workers`` are left out because neither changes the draws.
        """
        lines = []
        for key, value in self.values.items():
            if key in ("output", "workers"):
                continue
            if key == "data":
                value = str(self.data_path())
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    # -- accessors -------------------------------------------------------
    @property
    def model(self):
        return self.values["model"]

    def get(self, key):
        return self.values.get(key, _DEFAULTS.get(key))

    def get_int(self, key):
        return _parse_int(self.get(key), key)

    def get_float(self, key):
        return _parse_float(self.get(key), key)

    def data_path(self):
        path = Path(self.values["data"])
        return path if path.is_absolute() else (self.source_dir / path).resolve()

    def dataset(self) -> Dataset:
        return read_dataset(self.data_path())

    def optimizer(self):
        default = "corner" if self.model == "finite-2comp" else "anneal"
        return self.values.get("optimizer", default)

    def schedule(self) -> AnnealSchedule:
        kwargs = {}
        for key, name, parse in (("anneal_temp_scale", "temp_scale", _parse_float),
                                 ("anneal_iters", "iters", _parse_int),
                                 ("anneal_extension", "extension", _parse_int),
                                 ("anneal_max_extensions", "max_extensions", _parse_int),
                                 ("anneal_pilot", "pilot", _parse_int)):
            if key in self.values:
                kwargs[name] = parse(self.values[key], key)
        try:
            return AnnealSchedule(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def spec(self, with_bounds=True):
        v = self.values
        try:
            if self.model == "dp":
                kwargs = {"M": _parse_int(v["M"], "M")}
                for key in ("eta", "zeta", "mu0", "psi", "alpha", "lambda_known"):
                    if key in v:
                        kwargs[key] = _parse_float(v[key], key)
                if "alpha_prior" in v:
                    kwargs["alpha_prior"] = tuple(_parse_list(v["alpha_prior"], "alpha_prior"))
                if with_bounds:
                    for key in ("alpha_bounds", "mu_bounds", "lambda_bounds"):
                        if key in v:
                            kwargs[key] = _parse_interval(v[key], key)
                return DPMixtureSpec(**kwargs)
            kwargs = {"p": _parse_int(v["p"], "p")}
            for key in ("eta", "zeta"):
                if key in v:
                    kwargs[key] = _parse_float(v[key], key)
            for key in ("xi", "tau", "gamma", "lambda_known"):
                if key in v:
                    kwargs[key] = _parse_list(v[key], key)
            if with_bounds:
                for key in ("mu_bounds", "lambda_bounds", "pi_bounds"):
                    if key in v:
                        kwargs[key] = _parse_intervals(v[key], key)
            return FiniteMixtureSpec(**kwargs)
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid model settings: {exc}") from None

    def seeds(self):
        base = self.get_int("seed")
        return [base + r for r in range(self.get_int("replicates"))]


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


def read_dataset(path) -> Dataset:
    """One real number per line (or a single-column CSV); blank lines are ignored."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read dataset {path}: {exc}") from None
    values = []
    for number, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text:
            continue
        fields = [f.strip() for f in text.split(",")]
        if len([f for f in fields if f]) != 1:
            raise UsageError(f"{path}: line {number}: expected a single value, got {raw!r}")
        token = next(f for f in fields if f)
        try:
            value = float(token)
        except ValueError:
            raise UsageError(f"{path}: line {number}: not a number: {token!r}") from None
        if not math.isfinite(value):
            raise UsageError(f"{path}: line {number}: non-finite value")
        values.append(value)
    if not values:
        raise UsageError(f"{path}: no observations")
    return Dataset(np.array(values))


# ---------------------------------------------------------------------------
# replicate orchestration
# ---------------------------------------------------------------------------

_CACHE = {}


def _prepared(config_text, source_dir):
    key = (config_text, str(source_dir))
    if key not in _CACHE:
        config = RunConfig.from_text(config_text, source_dir)
        _CACHE.clear()
        _CACHE[key] = (config, config.dataset(), config.spec())
    return _CACHE[key]


def perfect_sample(config: RunConfig, seed: int, data=None, spec=None):
    """One perfect sample for ``seed`` under ``config``."""
    data = config.dataset() if data is None else data
    spec = config.spec() if spec is None else spec
    common = dict(epoch_cap=config.get_int("epoch_cap"), mode=config.get("mode"),
                  set_budget=config.get_int("set_budget"))
    if config.model == "dp":
        budget = _parse_int(config.values.get("partition_budget", "4096"), "partition_budget")
        return run_cftp_dp(data, spec, seed, partition_budget=budget, **common)
    if config.model == "finite-2comp":
        return run_cftp_two_component(data, spec, seed, optimizer=config.optimizer(),
                                      schedule=config.schedule(), **common)
    return run_cftp_known(data, spec, seed, optimizer=config.optimizer(), schedule=config.schedule(), **common)


def _worker(args):
    config_text, source_dir, seed = args
    config, data, spec = _prepared(config_text, source_dir)
    return perfect_sample(config, seed, data, spec)


def run_replicates(config: RunConfig, workers=None):
    """Perfect samples for every seed of ``config``, in seed order.

    Each replicate owns its ledger (its seed), so the worker count changes
    only wall-clock time, never values.
    """
    workers = config.get_int("workers") if workers is None else int(workers)
    seeds = config.seeds()
    text, source = config.to_text(), str(config.source_dir)
    jobs = [(text, source, s) for s in seeds]
    if workers <= 1 or len(seeds) <= 1:
        return [_worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# ---------------------------------------------------------------------------
# output files
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def state_columns(model, data_n, spec):
    if model == "dp":
        M = spec.M
        return (["alpha", "k"] + [f"mu_{j}" for j in range(1, M + 1)] + [f"lam_{j}" for j in range(1, M + 1)]
                + [f"s_{j}" for j in range(1, M + 1)] + [f"c_{j}" for j in range(1, M + 1)]
                + [f"z_{i}" for i in range(1, data_n + 1)])
    p = spec.p
    return ([f"pi_{j}" for j in range(1, p + 1)] + [f"mu_{j}" for j in range(1, p + 1)]
            + [f"lam_{j}" for j in range(1, p + 1)] + [f"z_{i}" for i in range(1, data_n + 1)])


def state_row(state):
    if hasattr(state, "mu_star"):
        return [state.alpha, state.k, *state.mu_m, *state.lam_m, *state.s, *state.c, *state.z]
    return [*state.pi, *state.mu, *state.lam, *state.z]


SAMPLE_PREFIX = ["replicate", "seed", "t_star", "steps_to_zero"]
COALESCENCE_COLUMNS = ["replicate", "seed", "epoch", "t_star", "steps_to_zero", "backward_steps",
                       "forward_steps", "mode"]


def _write_csv(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _density_targets(sample_set: SampleSet, spec):
    cols = sample_set.columns
    out = {}
    width = cols["mu"].shape[1]
    for j in range(width):
        out[f"mu_{j + 1}"] = cols["mu"][:, j]
    if sample_set.model == "dp":
        if spec.lambda_known is None:
            for j in range(width):
                out[f"lam_{j + 1}"] = cols["lam"][:, j]
        if spec.alpha_random:
            out["alpha"] = cols["alpha"]
    else:
        for j in range(width):
            out[f"pi_{j + 1}"] = cols["pi"][:, j]
        if spec.lambda_known is None:
            for j in range(width):
                out[f"lam_{j + 1}"] = cols["lam"][:, j]
    return out


def write_summaries(sample_set: SampleSet, spec, data: Dataset, directory):
    """``density_<param>.csv``, ``predictive.csv`` and, for the DP model, ``kdist.csv``."""
    directory = Path(directory)
    if len(sample_set) == 0:
        _write_csv(directory / "predictive.csv", ["x", "density"], [])
        if sample_set.model == "dp":
            _write_csv(directory / "kdist.csv", ["k", "probability"], [])
        return
    for name, values in _density_targets(sample_set, spec).items():
        grid, dens, h = density_on_grid(values)
        _write_csv(directory / f"density_{name}.csv", ["x", "density"], zip(grid, dens),
                   comment=f"gaussian kde, silverman bandwidth={_fmt(h)}, points={GRID_POINTS}")
    pad = 3.0 * float(np.std(data.y)) + 1e-9
    grid = np.linspace(data.y.min() - pad, data.y.max() + pad, GRID_POINTS)
    _write_csv(directory / "predictive.csv", ["x", "density"], zip(grid, posterior_predictive(sample_set, grid)))
    if sample_set.model == "dp":
        probs = component_count_distribution(sample_set, spec.M)
        _write_csv(directory / "kdist.csv", ["k", "probability"], [(k + 1, p) for k, p in enumerate(probs)])


def write_outputs(samples, config: RunConfig, directory, forward_states=None):
    """Write ``samples.csv``, ``coalescence.csv``, summaries and ``config.replay``.

    ``forward_states`` (DP protocol: one perfect sample followed by forward
    Gibbs draws) replaces the perfect samples in the summaries when given.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data, spec = config.dataset(), config.spec()
    columns = state_columns(config.model, data.n, spec)
    _write_csv(directory / "samples.csv", SAMPLE_PREFIX + columns,
               ([r, s.seed, s.record.t_star, s.record.steps_to_zero, *state_row(s.state)]
                for r, s in enumerate(samples)))
    _write_csv(directory / "coalescence.csv", COALESCENCE_COLUMNS,
               ([r, s.seed, s.record.epoch, s.record.t_star, s.record.steps_to_zero, s.record.backward_steps,
                 s.record.forward_steps, s.record.mode] for r, s in enumerate(samples)))
    if forward_states:
        _write_csv(directory / "forward.csv", ["draw"] + columns,
                   ([d, *state_row(st)] for d, st in enumerate(forward_states)))
        summary = SampleSet.from_states(forward_states)
    elif samples:
        summary = SampleSet.from_perfect(samples)
    else:
        summary = SampleSet("dp" if config.model == "dp" else "finite", {"mu": np.zeros((0, 1))})
    write_summaries(summary, spec, data, directory)
    (directory / "config.replay").write_text(config.to_text())
    return directory


def write_gibbs_outputs(sample_set: SampleSet, config: RunConfig, directory):
    """Baseline draws in the sample-file format (CFTP columns left empty)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    data, spec = config.dataset(), config.spec()
    columns = state_columns(config.model, data.n, spec)
    cols = sample_set.columns

    def rows():
        for r in range(len(sample_set)):
            if sample_set.model == "dp":
                c = [""] * spec.M
                state = [cols["alpha"][r], cols["k"][r], *cols["mu"][r], *cols["lam"][r], *cols["s"][r], *c,
                         *cols["z"][r]]
            else:
                state = [*cols["pi"][r], *cols["mu"][r], *cols["lam"][r], *cols["z"][r]]
            yield [r, "", "", "", *state]

    _write_csv(directory / "samples.csv", SAMPLE_PREFIX + columns, rows())
    write_summaries(sample_set, spec, data, directory)
    (directory / "config.replay").write_text(config.to_text())
    return directory


def read_samples(directory) -> tuple:
    """Read ``samples.csv`` back as ``(header, rows)`` of strings."""
    with open(Path(directory) / "samples.csv", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        return header, list(reader)


def forward_states_for(config: RunConfig, samples):
    """DP protocol: forward Gibbs draws after the first perfect sample, if requested."""
    draws = config.get_int("forward_draws")
    if draws == 0 or not samples:
        return None
    return forward_gibbs(samples[0], config.dataset(), config.spec(), draws)


def cpu_count():
    return os.cpu_count() or 1
