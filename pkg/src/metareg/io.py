"""CSV ingestion, prior/design mini-languages and fit (de)serialization."""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from metareg import effect_sizes as es
from metareg.grid import PosteriorGrid
from metareg.inference import FitResult, SummaryTable
from metareg.model import (
    DesignMatrix,
    ImproperUniform,
    NormalPrior,
    RegressionProblem,
    StudyDataset,
    TauPrior,
    build_indicator_design,
)
from metareg.nnhm import Kernel, TauPosterior

FIT_FORMAT = "metareg-fit"
MEASURES = ("or", "plo", "rom", "precomputed")

# accepted header spellings per logical column, first match wins
_ALIASES = {
    "events_trt": ("events_trt", "ai", "events.A", "exp.events"),
    "total_trt": ("total_trt", "n1i", "total.A", "exp.total"),
    "events_ctl": ("events_ctl", "ci", "events.B", "cont.events"),
    "total_ctl": ("total_ctl", "n2i", "total.B", "cont.total"),
    "events": ("events", "xi"),
    "percent": ("percent", "prog.percent"),
    "n": ("n", "ni", "patients"),
    "m1": ("m1", "m1i"), "sd1": ("sd1", "sd1i"), "n1": ("n1", "n1i"),
    "m2": ("m2", "m2i"), "sd2": ("sd2", "sd2i"), "n2": ("n2", "n2i"),
    "yi": ("yi", "y"),
    "vi": ("vi", "v"),
    "sigma": ("sigma", "sei", "se"),
    "study": ("study", "label", "publication"),
}


class DataError(ValueError):
    """Malformed input data (file contents, not command usage)."""


@dataclass
class StudyTable:
    """Parsed study CSV: the dataset plus all raw columns by header name."""

    dataset: StudyDataset
    columns: dict[str, list[str]]
    header: list[str]

    def numeric(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise DataError(f"no column named {name!r}")
        return _to_floats(self.columns[name], name)


def _find(header: Sequence[str], key: str) -> str | None:
    for alias in _ALIASES[key]:
        if alias in header:
            return alias
    return None


def _to_floats(values, name) -> np.ndarray:
    out = []
    for row, v in enumerate(values, start=2):
        try:
            out.append(float(v))
        except ValueError:
            raise DataError(f"row {row}: column {name!r} is not numeric ({v!r})") from None
    return np.array(out)


def read_study_csv(path, measure: str = "precomputed") -> StudyTable:
    """Read a study table and derive estimates/standard errors.

    Required columns by ``measure``: ``or`` four count columns;
    ``plo`` events (or percent) and n; ``rom`` means, SDs and sizes of both
    groups (or precomputed yi/vi); ``precomputed`` yi with vi or sigma.
    """
    if measure not in MEASURES:
        raise DataError(f"unknown measure {measure!r}; choose from {MEASURES}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, got {len(r)}")
    columns = {h: [r[j].strip() for r in body] for j, h in enumerate(header)}

    def col(key, required=True):
        name = _find(header, key)
        if name is None:
            if required:
                raise DataError(f"measure {measure!r} needs a {key!r} column ({'/'.join(_ALIASES[key])})")
            return None
        return name, _to_floats(columns[name], name)

    lab = _find(header, "study")
    labels = columns[lab] if lab else [f"study {i}" for i in range(1, len(body) + 1)]
    estimates = []
    try:
        if measure == "or":
            _, a = col("events_trt")
            _, n1 = col("total_trt")
            _, c = col("events_ctl")
            _, n2 = col("total_ctl")
            for i in range(len(body)):
                table = es.TwoByTwoTable(a[i], n1[i], c[i], n2[i])
                estimates.append(es.log_odds_ratio(table, labels[i]))
        elif measure == "plo":
            _, n = col("n")
            ev = col("events", required=False)
            if ev is None:
                _, pct = col("percent")
                events = n * (pct / 100.0)
            else:
                events = ev[1]
            for i in range(len(body)):
                estimates.append(es.logit_proportion(events[i], n[i], labels[i]))
        elif measure == "rom" and _find(header, "m1") and _find(header, "m2"):
            vals = [col(key)[1] for key in ("m1", "sd1", "n1", "m2", "sd2", "n2")]
            for i in range(len(body)):
                estimates.append(es.log_ratio_of_means(*(v[i] for v in vals), label=labels[i]))
        else:
            _, y = col("yi")
            vi = col("vi", required=False)
            if vi is None:
                _, s = col("sigma")
                var = s**2
            else:
                var = vi[1]
            for i in range(len(body)):
                estimates.append(es.EffectEstimate(y[i], var[i], labels[i]))
    except ValueError as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"row {len(estimates) + 2}: {exc}") from None
    try:
        dataset = StudyDataset.from_estimates(estimates)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return StudyTable(dataset, columns, header)


def write_escalc_csv(table: StudyTable, target) -> None:
    """Original columns plus ``yi``/``vi`` at full precision.

    ``target`` is a path or an open text stream.
    """
    if hasattr(target, "write"):
        _write_escalc(table, target)
        return
    with open(target, "w", newline="", encoding="utf-8") as fh:
        _write_escalc(table, fh)


def _write_escalc(table: StudyTable, fh) -> None:
    header = [h for h in table.header if h not in ("yi", "vi")]
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header + ["yi", "vi"])
    ds = table.dataset
    for i in range(ds.k):
        w.writerow([table.columns[h][i] for h in header]
                   + [repr(float(ds.y[i])), repr(float(ds.sigma[i] ** 2))])


_TERM = re.compile(r"^(?P<col>[^+\-*]+?)\s*(?P<op>[+\-])\s*(?P<num>[0-9.eE+\-]+)$")


def parse_design(spec: str | None, table: StudyTable) -> DesignMatrix:
    """Build a regressor matrix from a comma-separated term list.

    Terms: ``1`` (intercept), ``COL``, ``COL-NUM``/``COL+NUM`` (shifted
    column), ``group_means:COL``, ``intercept_offset:COL``; any term may be
    prefixed with ``name=`` to set its column name.  Indicator terms sort
    the groups unless an order is given as ``group_means:COL:A/B/C``.
    """
    k = table.dataset.k
    if not spec or spec.strip() == "intercept":
        return DesignMatrix.intercept(k)
    cols, names = [], []
    for raw in spec.split(","):
        raw = raw.strip()
        if not raw:
            continue
        name, _, expr = raw.rpartition("=") if "=" in raw else ("", "", raw)
        expr = expr.strip()
        if ":" in expr:
            coding, _, rest = expr.partition(":")
            colname, _, order = rest.partition(":")
            if colname not in table.columns:
                raise DataError(f"design term {raw!r}: no column {colname!r}")
            values = table.columns[colname]
            levels = order.split("/") if order else sorted(set(values))
            block = build_indicator_design(values, coding, levels)
            cols.extend(block.entries.T)
            names.extend(block.column_names)
            continue
        if expr in ("1", "intercept"):
            cols.append(np.ones(k))
            names.append(name or "intercept")
            continue
        if expr in table.columns:
            cols.append(table.numeric(expr))
            names.append(name or expr)
            continue
        m = _TERM.match(expr)
        if m and m["col"] in table.columns:
            shift = float(m["num"]) * (-1.0 if m["op"] == "-" else 1.0)
            cols.append(table.numeric(m["col"]) + shift)
            names.append(name or m["col"])
            continue
        raise DataError(f"cannot parse design term {raw!r}")
    return DesignMatrix(np.column_stack(cols), names)


def read_design_csv(path, k: int) -> DesignMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise DataError(f"{path}: design file needs a header and rows")
    header = [h.strip() for h in rows[0]]
    try:
        X = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if X.shape[0] != k:
        raise DataError(f"{path}: {X.shape[0]} design rows for {k} studies")
    return DesignMatrix(X, header)


def parse_tau_prior(spec: str | None) -> TauPrior:
    """``halfnormal:S``, ``halfcauchy:S``, ``exponential:RATE``, ``uniform``,
    ``tabulated:PATH`` (CSV with ``tau,density``)."""
    if spec is None or spec.strip() in ("", "uniform"):
        return TauPrior.uniform()
    family, _, arg = spec.partition(":")
    family = family.strip().lower().replace("-", "").replace("_", "")
    if family == "tabulated":
        with open(arg, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        try:
            tau = [float(r["tau"]) for r in rows]
            dens = [float(r["density"]) for r in rows]
        except (KeyError, ValueError) as exc:
            raise DataError(f"{arg}: tabulated prior needs numeric tau,density columns") from exc
        return TauPrior.tabulated(tau, dens)
    try:
        value = float(arg)
    except ValueError:
        raise ValueError(f"tau prior {spec!r}: expected a numeric parameter") from None
    ctor = {
        "halfnormal": TauPrior.half_normal,
        "halfcauchy": TauPrior.half_cauchy,
        "exponential": TauPrior.exponential,
    }.get(family)
    if ctor is None:
        raise ValueError(f"unknown tau prior family {family!r}")
    return ctor(value)


def parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise ValueError(f"cannot parse numeric vector {text!r}") from None


def parse_named_rows(items: Sequence[str] | None) -> dict[str, np.ndarray]:
    """``NAME=v1,v2,...`` items to an ordered mapping."""
    out = {}
    for item in items or ():
        name, sep, vec = item.rpartition("=")
        if not sep or not name:
            raise ValueError(f"expected NAME=v1,v2,... but got {item!r}")
        out[name] = parse_vector(vec)
    return out


@dataclass
class AnalysisConfig:
    inputs: list[str] = field(default_factory=list)
    measure: str = "precomputed"
    design: str | None = None
    design_path: str | None = None
    tau_prior: str | None = None
    beta_prior_mean: list[float] | None = None
    beta_prior_sd: list[float] | None = None
    beta_prior_cov: list[list[float]] | None = None
    delta: float = 0.01
    epsilon: float = 1e-4
    rows: dict[str, list[float]] = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> AnalysisConfig:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**data)

    def beta_prior(self, d: int):
        if self.beta_prior_cov is not None:
            mean = self.beta_prior_mean if self.beta_prior_mean is not None else [0.0] * d
            return NormalPrior(mean, self.beta_prior_cov)
        if self.beta_prior_sd is not None:
            mean = self.beta_prior_mean if self.beta_prior_mean is not None else [0.0] * d
            return NormalPrior.from_sd(mean, self.beta_prior_sd)
        if self.beta_prior_mean is not None:
            raise ValueError("a prior mean needs --beta-prior-sd or a covariance")
        return ImproperUniform()

    def problem(self, table: StudyTable) -> RegressionProblem:
        if self.design_path:
            X = read_design_csv(self.design_path, table.dataset.k)
        else:
            X = parse_design(self.design, table)
        return RegressionProblem(
            table.dataset, X, parse_tau_prior(self.tau_prior), self.beta_prior(X.d)
        )


def _beta_prior_dict(prior) -> dict:
    if isinstance(prior, NormalPrior):
        return {"type": "normal", "mean": prior.mean.tolist(),
                "covariance": prior.covariance.tolist()}
    return {"type": "uniform"}


def _beta_prior_from(data: dict):
    if data["type"] == "normal":
        return NormalPrior(data["mean"], data["covariance"])
    return ImproperUniform()


def _finite_or_none(x):
    return None if x is None or not math.isfinite(x) else float(x)


def fit_to_dict(fit: FitResult, samples: dict | None = None) -> dict:
    from metareg import __version__

    p = fit.problem
    g = fit.grid
    tril = np.tril_indices(p.d)
    lml = fit.log_marginal_likelihood
    out = {
        "format": FIT_FORMAT,
        "version": __version__,
        "problem": {
            "labels": list(p.dataset.labels),
            "y": p.dataset.y.tolist(),
            "sigma": p.dataset.sigma.tolist(),
            "design": {"columns": list(p.design.column_names),
                       "rows": p.design.entries.tolist()},
            "tau_prior": p.tau_prior.to_dict(),
            "beta_prior": _beta_prior_dict(p.beta_prior),
        },
        "delta": fit.delta,
        "epsilon": fit.epsilon,
        "grid": [
            {"tau": float(g.tau[j]), "weight": float(g.weights[j]),
             "mean": g.means[j].tolist(), "cov_lower": g.covariances[j][tril].tolist()}
            for j in range(len(g))
        ],
        "summary": fit.summary.to_dict(),
        "log_marginal_likelihood": _finite_or_none(lml),
        "marginal_likelihood": None if lml is None else float(np.exp(lml)),
    }
    if samples is not None:
        out["samples"] = samples
    return out


def write_fit_json(fit: FitResult, path, samples: dict | None = None) -> None:
    text = json.dumps(fit_to_dict(fit, samples), indent=1, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def fit_from_dict(data: dict) -> FitResult:
    if not isinstance(data, dict) or data.get("format") != FIT_FORMAT:
        raise DataError("not a fit file")
    try:
        return _fit_from_dict(data)
    except (KeyError, TypeError, IndexError) as exc:
        raise DataError(f"malformed fit file ({exc!r})") from None


def _fit_from_dict(data: dict) -> FitResult:
    pd = data["problem"]
    dataset = StudyDataset(pd["labels"], pd["y"], pd["sigma"])
    design = DesignMatrix(np.array(pd["design"]["rows"], dtype=float), pd["design"]["columns"])
    problem = RegressionProblem(
        dataset, design, TauPrior.from_dict(pd["tau_prior"]), _beta_prior_from(pd["beta_prior"])
    )
    d = design.d
    tril = np.tril_indices(d)
    nodes = data["grid"]
    covs = np.zeros((len(nodes), d, d))
    for j, node in enumerate(nodes):
        covs[j][tril] = node["cov_lower"]
        covs[j] = covs[j] + np.tril(covs[j], -1).T
    grid = PosteriorGrid(
        np.array([n["tau"] for n in nodes]),
        np.array([n["weight"] for n in nodes]),
        np.array([n["mean"] for n in nodes], dtype=float).reshape(len(nodes), d),
        covs,
        float(data["delta"]),
        float(data["epsilon"]),
    )
    kernel = Kernel(problem)
    return FitResult(
        problem, grid, TauPosterior(kernel), data["log_marginal_likelihood"],
        SummaryTable.from_dict(data["summary"]), grid.delta, grid.epsilon, kernel,
    )


def load_fit_json(path) -> FitResult:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    return fit_from_dict(data)
