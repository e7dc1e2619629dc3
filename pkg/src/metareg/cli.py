"""Command-line entry point: ``metareg <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from metareg import __version__
from metareg.inference import (
    FitResult,
    credible_interval,
    fit,
    linear_combination,
    sample_posterior,
    summarize,
)
from metareg.io import (
    MEASURES,
    AnalysisConfig,
    DataError,
    load_fit_json,
    parse_named_rows,
    parse_tau_prior,
    parse_vector,
    read_study_csv,
    write_escalc_csv,
    write_fit_json,
)
from metareg.plots import ForestPlotSpec, TrendLine, render_forest_svg, render_trend_svg
from metareg.selection import (
    enumerate_models,
    inclusion_probabilities,
    median_probability_model,
    model_prior,
    score_models,
    with_posterior,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _color() -> bool:
    return sys.stdout.isatty() and not os.environ.get("METAREG_NO_COLOR")


def _emit_table(text: str) -> None:
    if _color():
        head, _, rest = text.partition("\n")
        text = f"\x1b[1m{head}\x1b[0m\n{rest}"
    print(text)


def _fmt(v: float, digits: int) -> str:
    return f"{v:.{digits}f}"


def _write_text(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def _config(args) -> AnalysisConfig:
    cfg = AnalysisConfig.from_json(args.config) if args.config else AnalysisConfig()
    cfg.inputs = [args.input]
    for attr in ("measure", "design", "design_path", "tau_prior", "delta", "epsilon", "seed"):
        value = getattr(args, attr, None)
        if value is not None:
            setattr(cfg, attr, value)
    if args.beta_prior_mean is not None:
        cfg.beta_prior_mean = parse_vector(args.beta_prior_mean).tolist()
    if args.beta_prior_sd is not None:
        cfg.beta_prior_sd = parse_vector(args.beta_prior_sd).tolist()
    if args.row:
        cfg.rows.update({k: v.tolist() for k, v in parse_named_rows(args.row).items()})
    return cfg


def cmd_escalc(args) -> int:
    table = read_study_csv(args.input, args.measure)
    write_escalc_csv(table, args.output or sys.stdout)
    return 0


def cmd_fit(args) -> int:
    cfg = _config(args)
    if cfg.measure not in MEASURES:
        raise UsageError(f"unknown measure {cfg.measure!r}")
    table = read_study_csv(cfg.inputs[0], cfg.measure)
    problem = cfg.problem(table)
    result = fit(problem, cfg.delta, cfg.epsilon)
    samples = None
    if args.draws:
        tau, beta = sample_posterior(result, args.draws, cfg.seed)
        samples = {"seed": cfg.seed, "tau": tau.tolist(), "beta": beta.tolist()}
    if args.output:
        write_fit_json(result, args.output, samples)
    _emit_table(summarize(result, cfg.rows).to_text(args.digits))
    lml = result.log_marginal_likelihood
    if lml is not None:
        print(f"log marginal likelihood: {lml:.6f}")
    return 0


def cmd_summary(args) -> int:
    result = load_fit_json(args.fit)
    rows = {k: (v, True) for k, v in parse_named_rows(args.row).items()}
    rows.update({k: (v, False) for k, v in parse_named_rows(args.predict_row).items()})
    _check_rows(result, rows)
    _emit_table(summarize(result, rows).to_text(args.digits))
    return 0


def _check_rows(result: FitResult, rows) -> None:
    for name, spec in rows.items():
        x = spec[0] if isinstance(spec, tuple) else spec
        if len(x) != result.problem.d:
            raise UsageError(f"row {name!r} has {len(x)} entries; the design has {result.problem.d}")


def cmd_predict(args) -> int:
    result = load_fit_json(args.fit)
    x = parse_vector(args.x)
    _check_rows(result, {"x": x})
    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    mix = linear_combination(result, x, mean=not args.prediction)
    if args.quantiles:
        ps = parse_vector(args.quantiles)
        if np.any((ps <= 0) | (ps >= 1)):
            raise UsageError("--quantiles must lie in (0, 1)")
        print(" ".join(_fmt(float(mix.quantile(p)), args.digits) for p in ps))
        return 0
    lo, hi = credible_interval(mix, args.level, args.method)
    med = float(mix.quantile(0.5))
    print(f"{_fmt(med, args.digits)} [{_fmt(lo, args.digits)}, {_fmt(hi, args.digits)}]")
    return 0


def cmd_forest(args) -> int:
    result = load_fit_json(args.fit)
    mean_rows = parse_named_rows(args.row)
    predict_rows = parse_named_rows(args.predict_row)
    _check_rows(result, {**mean_rows, **predict_rows})
    spec = ForestPlotSpec(mean_rows, predict_rows, xlabel=args.xlabel, level=args.level)
    render_forest_svg(result, spec, args.output)
    return 0


def _trend_lines(result: FitResult, covariable: str, xs: np.ndarray, items) -> list[TrendLine] | np.ndarray:
    if not items:
        return xs
    lines = []
    d = result.problem.d
    for item in items:
        name, sep, body = item.rpartition("=")
        if not sep or not name:
            raise UsageError(f"expected NAME=v1,x,... but got {item!r}")
        cells = [c.strip() for c in body.split(",")]
        if len(cells) != d or "x" not in cells:
            raise UsageError(f"line {name!r} needs {d} entries with at least one 'x' slot")
        rows = np.array([[x if c == "x" else float(c) for c in cells] for x in xs])
        lines.append(TrendLine(name, xs, rows))
    return lines


def cmd_trend(args) -> int:
    result = load_fit_json(args.fit)
    if result.problem.d < 2:
        raise UsageError("trend plots need at least two regressors")
    try:
        result.problem.design.column_index(args.covariable)
    except (KeyError, IndexError, ValueError):
        raise UsageError(f"no design column {args.covariable!r}") from None
    if args.x is not None:
        xs = parse_vector(args.x)
    else:
        if args.range is None:
            raise UsageError("give --x or --range FROM,TO,N")
        lo, hi, n = parse_vector(args.range)
        xs = np.linspace(lo, hi, int(n))
    groups = None
    if args.groups:
        groups = [int(g) for g in args.groups.split(",")]
        if len(groups) != result.problem.k:
            raise UsageError(f"--groups needs {result.problem.k} entries")
    render_trend_svg(result, args.covariable, _trend_lines(result, args.covariable, xs, args.line),
                     args.output, bubble=args.bubble, groups=groups, level=args.level,
                     xlabel=args.xlabel, ylabel=args.ylabel)
    return 0


def cmd_select(args) -> int:
    table = read_study_csv(args.input, args.measure)
    variables = [v.strip() for v in args.variables.split(",") if v.strip()]
    covariables = {}
    for v in variables:
        values = table.numeric(v)
        if args.center:
            values = values - values.mean()
        covariables[v] = values
    space = enumerate_models(variables)
    space = replace(space, prior_probs=model_prior(space, args.model_prior, args.inclusion_prior))
    space = score_models(space, table.dataset, covariables,
                         tau_prior=parse_tau_prior(args.tau_prior),
                         intercept_sd=args.intercept_sd, effect_sd=args.effect_sd,
                         delta=args.delta, epsilon=args.epsilon)
    space = with_posterior(space)
    out = {
        "variables": list(space.variables),
        "models": space.to_table(),
        "inclusion_probabilities": dict(zip(space.variables, inclusion_probabilities(space).tolist())),
        "median_probability_model": list(median_probability_model(space)),
    }
    text = json.dumps(out, indent=1, allow_nan=False) + "\n"
    if args.output:
        _write_text(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metareg", description="Bayesian random-effects meta-regression.")
    parser.add_argument("--version", action="version", version=f"metareg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def numerics(p):
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--epsilon", type=float, default=None)

    p = sub.add_parser("escalc", help="compute yi/vi from raw columns")
    p.add_argument("input")
    p.add_argument("--measure", choices=MEASURES, required=True)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_escalc)

    p = sub.add_parser("fit", help="fit a model and write the fit JSON")
    p.add_argument("input")
    p.add_argument("--measure", choices=MEASURES)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--design", help="terms, e.g. 'group_means:IL2RA' or '1,year-2000'")
    g.add_argument("--design-csv", dest="design_path")
    p.add_argument("--tau-prior", help="halfnormal:S | halfcauchy:S | exponential:R | uniform | tabulated:PATH")
    p.add_argument("--beta-prior-mean")
    p.add_argument("--beta-prior-sd")
    p.add_argument("--config", help="JSON analysis configuration")
    p.add_argument("--row", action="append", metavar="NAME=x1,x2,...")
    numerics(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--draws", type=int, default=0, help="posterior draws stored in the JSON")
    p.add_argument("--digits", type=int, default=7)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summary", help="summary table with extra combinations")
    p.add_argument("fit")
    p.add_argument("--row", action="append", metavar="NAME=x1,x2,...")
    p.add_argument("--predict-row", action="append", metavar="NAME=x1,x2,...")
    p.add_argument("--digits", type=int, default=7)
    p.set_defaults(func=cmd_summary)

    p = sub.add_parser("predict", help="median and interval of a combination")
    p.add_argument("fit")
    p.add_argument("--x", required=True, help="coefficient vector, e.g. -1,1")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--method", choices=("shortest", "central"), default="shortest")
    p.add_argument("--prediction", action="store_true", help="predict a new study's mean")
    p.add_argument("--quantiles", help="comma-separated probabilities")
    p.add_argument("--digits", type=int, default=3)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("forest", help="forest plot SVG")
    p.add_argument("fit")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--row", action="append", metavar="NAME=x1,x2,...")
    p.add_argument("--predict-row", action="append", metavar="NAME=x1,x2,...")
    p.add_argument("--xlabel", default="effect")
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_forest)

    p = sub.add_parser("trend", help="trend or bubble plot SVG")
    p.add_argument("fit")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--covariable", required=True, help="design column holding the study positions")
    p.add_argument("--x", help="covariable values")
    p.add_argument("--range", help="FROM,TO,N")
    p.add_argument("--line", action="append", metavar="NAME=1,x,...",
                   help="coefficient template; 'x' marks covariable slots")
    p.add_argument("--bubble", action="store_true")
    p.add_argument("--groups", help="integer group per study, for colours")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--xlabel")
    p.add_argument("--ylabel", default="estimate")
    p.set_defaults(func=cmd_trend)

    p = sub.add_parser("select", help="exhaustive model selection")
    p.add_argument("input")
    p.add_argument("--measure", choices=MEASURES, default="precomputed")
    p.add_argument("--variables", required=True, help="comma-separated column names")
    p.add_argument("--center", action="store_true", help="center each covariable at its mean")
    p.add_argument("--tau-prior", default="halfnormal:0.5")
    p.add_argument("--intercept-sd", type=float, default=10.0)
    p.add_argument("--effect-sd", type=float, default=2.82)
    p.add_argument("--model-prior", choices=("uniform", "bernoulli"), default="uniform")
    p.add_argument("--inclusion-prior", type=float, default=0.5)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_select)
    return parser


_NEGATIVE = re.compile(r"^-[0-9.]")


def _join_negative_values(argv: list[str]) -> list[str]:
    """Attach values like ``-1,1`` to the preceding long option.

    argparse only recognises plain negative numbers as values.
    """
    out: list[str] = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if (tok.startswith("--") and "=" not in tok and i + 1 < len(argv)
                and _NEGATIVE.match(argv[i + 1])):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parser.parse_args(_join_negative_values(argv))
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"metareg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValueError, KeyError, OSError, np.linalg.LinAlgError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"metareg {args.command}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
