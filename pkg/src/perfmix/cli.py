"""Command-line front end: ``perfmix {pilot,perfect,gibbs,validate,report}``.

Exit codes: 0 success, 1 a validation verdict failed or an unclassified
package error, 2 invalid arguments, 3 configuration error, 4 numerical
degeneracy or broken invariant, 5 sampler stall, 6 annealing instability,
7 no coalescence within the epoch cap.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path

import numpy as np

from .errors import PerfmixError, UsageError
from .harness import (
    SampleSet,
    bounds_agreement,
    compare_distributions,
    gibbs_baseline,
    oracle_exact_posterior,
    pilot_bounds,
)
from .io import (
    RunConfig,
    forward_states_for,
    read_samples,
    run_replicates,
    write_gibbs_outputs,
    write_outputs,
)


def _config(args):
    config = RunConfig.from_file(args.config)
    overrides = {}
    for name in ("seed", "replicates", "workers", "output"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    return config.with_values(**overrides) if overrides else config


def _output_dir(config, args):
    out = getattr(args, "output", None) or config.values.get("output")
    if not out:
        raise UsageError("no output directory: pass --output or set output in the config")
    return Path(out)


def _format_interval(interval):
    return f"{interval[0]:.6g}:{interval[1]:.6g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_pilot(args, out):
    config = _config(args)
    data, spec = config.dataset(), config.spec(with_bounds=False)
    sweeps = args.sweeps if args.sweeps is not None else config.get_int("pilot_sweeps")
    bounds = pilot_bounds(data, spec, sweeps=sweeps, seed=config.get_int("seed"))
    lines = []
    for key, value in bounds.items():
        if isinstance(value, tuple):
            lines.append(f"{key} = {_format_interval(value)}")
        else:
            lines.append(f"{key} = " + ", ".join(_format_interval(v) for v in value))
    text = "\n".join(lines) + "\n"
    out.write(text)
    if args.refine:
        from dataclasses import replace

        bounded = replace(spec, **bounds)
        tv = bounds_agreement(data, bounded, sweeps=sweeps, seed=config.get_int("seed"))
        out.write(f"# bounded vs unbounded predictive TV = {tv:.4f}\n")
    if args.write:
        Path(args.write).write_text(text)
    return 0


def cmd_perfect(args, out):
    config = _config(args)
    directory = _output_dir(config, args)
    samples = run_replicates(config)
    forward = forward_states_for(config, samples)
    write_outputs(samples, config, directory, forward)
    steps = [s.record.steps_to_zero for s in samples]
    out.write(f"{len(samples)} perfect samples written to {directory}\n")
    if steps:
        mode = Counter(steps).most_common(1)[0][0]
        out.write(f"steps_to_zero: mode {mode}, median {int(np.median(steps))}, max {max(steps)}\n")
    return 0


def cmd_gibbs(args, out):
    config = _config(args)
    directory = _output_dir(config, args)
    mode = args.mode or config.get("gibbs_mode")
    draws = gibbs_baseline(config.dataset(), config.spec(with_bounds=(mode == "bounded")), mode,
                           burn_in=config.get_int("gibbs_burn_in"), keep=config.get_int("gibbs_keep"),
                           seed=config.get_int("seed"), protocol=config.get("gibbs_protocol"),
                           thin=config.get_int("gibbs_thin"))
    write_gibbs_outputs(draws, config, directory)
    out.write(f"{len(draws)} {mode} Gibbs draws written to {directory}\n")
    return 0


def _reference(config, data, spec):
    """Exact marginals when the oracle applies, otherwise a bounded Gibbs baseline."""
    if config.model != "dp":
        try:
            exact = oracle_exact_posterior(data, spec, bounded=spec.bounded)
            refs = {}
            for j in range(spec.p):
                refs[f"pi_{j + 1}"] = exact.pi[j]
                refs[f"mu_{j + 1}"] = exact.mu[j]
            return "oracle", refs
        except UsageError:
            pass
    draws = gibbs_baseline(data, spec, "bounded" if getattr(spec, "bounded", False) or
                           getattr(spec, "truncated", False) else "unbounded",
                           burn_in=config.get_int("gibbs_burn_in"), keep=config.get_int("gibbs_keep"),
                           seed=config.get_int("seed") + 1_000_003, protocol=config.get("gibbs_protocol"))
    refs = {f"mu_{j + 1}": draws["mu"][:, j] for j in range(draws["mu"].shape[1])}
    if draws.model != "dp":
        refs.update({f"pi_{j + 1}": draws["pi"][:, j] for j in range(draws["pi"].shape[1])})
    return "gibbs", refs


def cmd_validate(args, out):
    config = _config(args)
    data, spec = config.dataset(), config.spec()
    samples = run_replicates(config)
    if not samples:
        raise UsageError("validate needs at least one replicate")
    drawn = SampleSet.from_perfect(samples)
    kind, refs = _reference(config, data, spec)
    threshold = config.get_float("validate_tv")
    rows, ok = [], True
    for name, ref in refs.items():
        column, index = name.split("_")
        x = drawn.marginal(column, int(index) - 1)
        tv = compare_distributions(x, ref, "tv", threshold)
        ks = compare_distributions(x, ref, "ks")
        ok &= bool(tv.passed)
        rows.append((name, tv.value, ks.value, ks.pvalue, "pass" if tv.passed else "fail"))
    out.write(f"reference: {kind}; {len(samples)} perfect samples; TV threshold {threshold}\n")
    out.write("param,tv,ks,ks_pvalue,verdict\n")
    for r in rows:
        out.write(f"{r[0]},{r[1]:.5f},{r[2]:.5f},{r[3]:.4g},{r[4]}\n")
    directory = getattr(args, "output", None) or config.values.get("output")
    if directory:
        Path(directory).mkdir(parents=True, exist_ok=True)
        with open(Path(directory) / "validate.csv", "w") as fh:
            fh.write("param,tv,ks,ks_pvalue,verdict\n")
            for r in rows:
                fh.write(f"{r[0]},{r[1]:.17g},{r[2]:.17g},{r[3]:.17g},{r[4]}\n")
    return 0 if ok else 1


def cmd_report(args, out):
    directory = Path(args.input)
    if not (directory / "samples.csv").exists():
        raise UsageError(f"{directory} has no samples.csv")
    header, rows = read_samples(directory)
    out.write(f"{len(rows)} rows in {directory / 'samples.csv'}\n")
    kdist = directory / "kdist.csv"
    if kdist.exists():
        out.write("distinct components posterior:\n")
        for line in kdist.read_text().splitlines()[1:]:
            k, p = line.split(",")
            out.write(f"  k={k}: {float(p):.6f}\n")
    coal = directory / "coalescence.csv"
    if coal.exists():
        lines = coal.read_text().splitlines()[1:]
        steps = [int(line.split(",")[4]) for line in lines]
        if steps:
            hist = Counter(steps)
            with open(directory / "coalescence_hist.csv", "w") as fh:
                fh.write("steps_to_zero,count,probability\n")
                for value in sorted(hist):
                    fh.write(f"{value},{hist[value]},{hist[value] / len(steps):.17g}\n")
            out.write("steps_to_zero histogram (value: probability):\n")
            for value in sorted(hist)[:20]:
                out.write(f"  {value}: {hist[value] / len(steps):.4f}\n")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="perfmix", description="Perfect sampling for normal mixtures.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="flat key = value configuration file")
        p.add_argument("--seed", type=int, help="override the base seed")
        return p

    p = with_config(sub.add_parser("pilot", help="elicit parameter bounds from an unbounded Gibbs run"))
    p.add_argument("--sweeps", type=int)
    p.add_argument("--refine", action="store_true", help="also report bounded vs unbounded predictive TV")
    p.add_argument("--write", help="write the bound lines to this file")
    p.set_defaults(func=cmd_pilot)

    p = with_config(sub.add_parser("perfect", help="draw i.i.d. perfect samples"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_perfect)

    p = with_config(sub.add_parser("gibbs", help="baseline Gibbs draws"))
    p.add_argument("--mode", choices=("bounded", "unbounded"))
    p.add_argument("--output")
    p.set_defaults(func=cmd_gibbs)

    p = with_config(sub.add_parser("validate", help="compare perfect samples with the oracle or a baseline"))
    p.add_argument("--replicates", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="summarize an output directory")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args, out)
    except PerfmixError as exc:
        err.write(f"perfmix: {type(exc).__name__}: {exc}\n")
        return exc.exit_code
    except OSError as exc:
        err.write(f"perfmix: {exc}\n")
        return 1


def main_entry():
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
