"""Config-driven experiment runner: ``powvar run|validate|list-experiments``.

A config is a TOML file with a fixed schema; unknown keys are errors.
Example::

    experiment = "variation_ladder"
    m = 3
    eps_ladder = ["2^-5", "2^-7"]
    n_paths = 2000
    seed = 11
    output_dir = "out"

    [kernel]
    family = "fbm"
    hurst = 0.25

    [grid]
    T = 1.0
    n = 2048

``grid.n`` sets the step T/n (``grid.step`` may be given instead); the grid
is extended past T by the largest ladder entry. ``output_dir`` is relative
to the config file.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import tomli

from .covariance import build_model, check_concavity, check_conditions, mu_offdiagonal_mass
from .errors import ConfigError, PowvarError
from .kernels import INTEGRANDS, DriverSpec, Gamma2, KernelSpec, constant
from .moments import chaos_variances_fbm, exact_msq_variation, rate_fit
from .simulate import TimeGrid, simulate_gaussian, simulate_martingale_volterra
from .variation import VariationResult, ensemble_variation, ito_residual

SCHEMA = 1

EXPERIMENTS = {
    "variation_ladder": "MC second moments of [X,m]_eps along the ladder, against exact values",
    "rate_fit": "log-log slope of the exact second moment along the ladder",
    "critical_h16": "exact second moment and chaos split of fBm at the critical Hurst index",
    "ito_check": "symmetric-integral Ito residual along the ladder, plus telescoping cases",
    "conditions": "structural conditions (i)-(iii) and concavity of the metric",
    "martingale_case": "MC second moments for a martingale-driven Volterra process",
    "mu_mass": "off-diagonal mass of the mixed-derivative measure of delta^2",
}
MC_EXPERIMENTS = {"variation_ladder", "ito_check", "martingale_case"}

TOP_KEYS = {"experiment", "kernel", "m", "grid", "eps_ladder", "n_paths", "seed",
            "output_dir", "checks", "driver", "conditions", "ito"}
KERNEL_KEYS = {"family", "hurst", "T", "gamma2"}
GAMMA2_KEYS = {"kind", "exponent"}
GRID_KEYS = {"T", "n", "step"}
DRIVER_KEYS = {"integrand", "inner_refine"}
CONDITION_KEYS = {"a", "b", "c", "cprime", "probe_n"}
ITO_KEYS = {"function"}
CHECK_KEYS = {
    "variation_ladder": {"decreasing", "concordance", "se_max", "expected_slope", "slope_tol"},
    "rate_fit": {"expected_slope", "slope_tol", "min_r2"},
    "critical_h16": {"ratio_band", "slope_tol", "orthogonality_rtol"},
    "ito_check": {"ratio_max"},
    "conditions": {"concavity"},
    "martingale_case": {"ratio_max"},
    "mu_mass": {"expected_slope", "slope_tol"},
}
ITO_FUNCTIONS = {
    "x": (lambda x: x, lambda x: np.ones_like(x)),
    "x2": (lambda x: x * x, lambda x: 2.0 * x),
    "x3": (lambda x: x**3, lambda x: 3.0 * x * x),
    "x4": (lambda x: x**4, lambda x: 4.0 * x**3),
}
DRIVER_INTEGRANDS = {"one": lambda: constant(1.0), "identity": INTEGRANDS["identity"],
                     "sin": INTEGRANDS["sin"]}

_DYADIC = re.compile(r"^\s*2\s*\^\s*(-?\d+)\s*$")


@dataclass
class ExperimentConfig:
    experiment: str
    kernel: dict
    m: int
    T: float
    step: float
    eps_ladder: list
    n_paths: int
    seed: int
    output_dir: Path
    checks: dict = field(default_factory=dict)
    driver: dict = field(default_factory=dict)
    conditions: dict = field(default_factory=dict)
    ito: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @property
    def grid(self):
        return TimeGrid.from_step(self.T, max(self.eps_ladder), self.step)


# --------------------------------------------------------------------------
# parsing and validation
# --------------------------------------------------------------------------


def _line_of(text, key):
    m = re.search(rf"^\s*{re.escape(key)}\s*=", text, flags=re.M)
    if m is None:
        m = re.search(rf"^\s*\[\s*{re.escape(key)}\s*\]", text, flags=re.M)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def _parse_eps(value):
    if isinstance(value, str):
        m = _DYADIC.match(value)
        if not m:
            raise ValueError(f"cannot read duration {value!r} (use a number or '2^-k')")
        return 2.0 ** int(m.group(1))
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"cannot read duration {value!r}")
    return float(value)


def parse_config(text, base_dir=Path(".")):
    """Return (ExperimentConfig or None, diagnostics); diagnostics are ConfigErrors."""
    diags = []

    def bad(msg, fld):
        diags.append(ConfigError(msg, field=fld, line=_line_of(text, fld.split(".")[-1])))

    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        return None, [ConfigError(f"syntax error: {exc}", line=int(m.group(1)) if m else None)]

    def unknown(table, allowed, prefix):
        for key in table:
            if key not in allowed:
                bad(f"unknown key {prefix}{key!r}", prefix + key)

    unknown(raw, TOP_KEYS, "")
    exp = raw.get("experiment")
    if exp not in EXPERIMENTS:
        bad(f"experiment must be one of {sorted(EXPERIMENTS)}, got {exp!r}", "experiment")
        return None, diags

    kernel = raw.get("kernel")
    if not isinstance(kernel, dict):
        bad("missing [kernel] table", "kernel")
        kernel = {}
    unknown(kernel, KERNEL_KEYS, "kernel.")
    if isinstance(kernel.get("gamma2"), dict):
        unknown(kernel["gamma2"], GAMMA2_KEYS, "kernel.gamma2.")

    grid = raw.get("grid", {})
    if not isinstance(grid, dict):
        bad("grid must be a table", "grid")
        grid = {}
    unknown(grid, GRID_KEYS, "grid.")
    T = float(grid.get("T", kernel.get("T", 1.0)))
    if "n" in grid and "step" in grid:
        bad("give either grid.n or grid.step, not both", "grid.step")
    if "step" in grid:
        step = float(grid["step"])
    else:
        n = grid.get("n", 2048)
        if not isinstance(n, int) or n < 2:
            bad("grid.n must be an integer >= 2", "grid.n")
            n = 2048
        step = T / n
    if not (T > 0 and step > 0):
        bad("grid.T and the grid step must be positive", "grid.T")
        step = T = 1.0

    m = raw.get("m", 3)
    if not isinstance(m, int) or isinstance(m, bool) or m < 1 or m % 2 == 0:
        bad("m must be odd", "m")

    ladder = []
    raw_ladder = raw.get("eps_ladder")
    if not isinstance(raw_ladder, list) or not raw_ladder:
        bad("eps_ladder must be a non-empty list", "eps_ladder")
    else:
        for v in raw_ladder:
            try:
                ladder.append(_parse_eps(v))
            except ValueError as exc:
                bad(str(exc), "eps_ladder")
        for a, b in zip(ladder, ladder[1:]):
            if not b < a:
                bad(f"eps_ladder must be strictly decreasing ({a!r} then {b!r})", "eps_ladder")
        for eps in ladder:
            k = eps / step
            if eps <= 0 or abs(k - round(k)) > 1e-9 * max(k, 1.0) or round(k) < 1:
                bad(f"eps={eps!r} is not a multiple of the grid step {step!r}", "eps_ladder")
            if eps >= T:
                bad(f"eps={eps!r} must be smaller than T={T!r}", "eps_ladder")
        if exp in ("variation_ladder", "rate_fit", "critical_h16", "ito_check",
                   "martingale_case", "mu_mass") and len(ladder) < 2:
            bad("eps_ladder needs at least two entries", "eps_ladder")

    n_paths = raw.get("n_paths", 0)
    if exp in MC_EXPERIMENTS and (not isinstance(n_paths, int) or n_paths < 2):
        bad("n_paths must be >= 2 for Monte Carlo experiments", "n_paths")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        bad("seed must be a non-negative integer", "seed")

    checks = raw.get("checks", {})
    unknown(checks, CHECK_KEYS[exp], "checks.")
    driver = raw.get("driver", {})
    unknown(driver, DRIVER_KEYS, "driver.")
    if exp == "martingale_case":
        if driver.get("integrand", "sin") not in DRIVER_INTEGRANDS:
            bad(f"driver.integrand must be one of {sorted(DRIVER_INTEGRANDS)}", "driver.integrand")
        if not isinstance(driver.get("inner_refine", 4), int) or driver.get("inner_refine", 4) < 4:
            bad("driver.inner_refine must be an integer >= 4", "driver.inner_refine")
    elif driver:
        bad("[driver] is only used by martingale_case", "driver")
    conditions = raw.get("conditions", {})
    unknown(conditions, CONDITION_KEYS, "conditions.")
    if exp == "conditions":
        for key in ("a", "b", "c", "cprime"):
            if key not in conditions:
                bad(f"conditions.{key} is required", f"conditions.{key}")
    ito = raw.get("ito", {})
    unknown(ito, ITO_KEYS, "ito.")
    if exp == "ito_check" and ito.get("function", "x4") not in ITO_FUNCTIONS:
        bad(f"ito.function must be one of {sorted(ITO_FUNCTIONS)}", "ito.function")

    if not diags:
        try:
            _make_kernel(kernel, T)
        except (PowvarError, TypeError, ValueError) as exc:
            bad(f"invalid kernel: {exc}", "kernel")
    if exp in ("critical_h16",) and kernel.get("family") != "fbm":
        bad("critical_h16 needs kernel.family = 'fbm'", "kernel.family")
    if exp == "martingale_case" and kernel.get("family") == "fbm":
        bad("martingale_case needs a causal kernel family", "kernel.family")
    if diags:
        return None, diags

    out = Path(raw.get("output_dir", "powvar_out"))
    if not out.is_absolute():
        out = Path(base_dir) / out
    cfg = ExperimentConfig(exp, kernel, m, T, step, ladder, int(n_paths), seed, out,
                           checks, driver, conditions, ito, raw)
    return cfg, []


def load_config(path):
    """Parse a config file; raise ConfigError on the first diagnostic."""
    path = Path(path)
    cfg, diags = parse_config(path.read_text(), path.parent)
    if diags:
        raise diags[0]
    return cfg


def _make_kernel(table, T):
    fam = table.get("family")
    T = float(table.get("T", T))
    if fam in ("fbm", "rl_fbm"):
        return KernelSpec(fam, hurst=float(table["hurst"]), T=T)
    if fam == "volterra_concave":
        g = table.get("gamma2") or {}
        return KernelSpec.volterra_concave(Gamma2(g.get("kind", "power"), float(g["exponent"])), T=T)
    raise ValueError(f"family must be fbm, rl_fbm or volterra_concave, got {fam!r}")


# --------------------------------------------------------------------------
# report assembly
# --------------------------------------------------------------------------


class Report:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.tables = {}
        self.fits = {}
        self.deltas = {}
        self.verdicts = []
        self.timings = {}
        self.series = {}

    def table(self, name, columns, rows):
        self.tables[name] = (tuple(columns), [tuple(r) for r in rows])

    def fit(self, name, ladder, values):
        f = rate_fit(ladder, values)
        self.fits[name] = {"slope": f.slope, "intercept": f.intercept, "r2": f.r2,
                           "slope_stderr": f.slope_stderr,
                           "band95": [f.slope - 1.96 * f.slope_stderr, f.slope + 1.96 * f.slope_stderr]}
        return f

    def verdict(self, rule, ok, detail):
        self.verdicts.append({"rule": f"{self.cfg.experiment}.{rule}",
                              "status": "pass" if ok else "fail", "detail": detail})

    def timed(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        out = fn(*args, **kw)
        self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0
        return out

    @property
    def passed(self):
        return all(v["status"] == "pass" for v in self.verdicts)

    def write(self):
        out = self.cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        for name, (cols, rows) in self.tables.items():
            with open(out / f"{name}.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                w.writerows([_fmt(v) for v in row] for row in rows)
        if self.series:
            (out / "convergence.svg").write_text(loglog_svg(self.series, self.cfg.experiment))
        report = {
            "schema": SCHEMA,
            "experiment": self.cfg.experiment,
            "config": self.cfg.raw,
            "tables": {k: {"columns": list(c), "rows": [list(r) for r in rows]}
                       for k, (c, rows) in self.tables.items()},
            "fits": self.fits,
            "deltas": self.deltas,
            "verdicts": self.verdicts,
            "all_pass": self.passed,
            "timings": self.timings,
        }
        (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
        return out


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, Path):
        return str(v)
    raise TypeError(type(v).__name__)


def loglog_svg(series, title, width=480, height=360):
    """Log-log polyline plot of {name: (x, y)} as a standalone SVG string."""
    pad = 50
    pts = {k: [(math.log10(x), math.log10(y)) for x, y in zip(*xy) if x > 0 and y > 0]
           for k, xy in series.items()}
    allx = [p[0] for v in pts.values() for p in v] or [0.0, 1.0]
    ally = [p[1] for v in pts.values() for p in v] or [0.0, 1.0]
    x0, x1 = math.floor(min(allx)), math.ceil(max(allx))
    y0, y1 = math.floor(min(ally)), math.ceil(max(ally))
    x1, y1 = max(x1, x0 + 1), max(y1, y0 + 1)

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"]
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>']
    for k in range(x0, x1 + 1):
        out.append(f'<text x="{px(k):.1f}" y="{height - pad + 16}" text-anchor="middle" '
                   f'font-size="10">1e{k}</text>')
    for k in range(y0, y1 + 1):
        out.append(f'<text x="{pad - 6}" y="{py(k) + 3:.1f}" text-anchor="end" font-size="10">1e{k}</text>')
    out.append(f'<text x="{width / 2:.1f}" y="{height - 10}" text-anchor="middle" font-size="12">eps</text>')
    for i, (name, p) in enumerate(sorted(pts.items())):
        col = colors[i % len(colors)]
        coords = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in p)
        out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{coords}"/>')
        out.extend(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="{col}"/>' for x, y in p)
        out.append(f'<text x="{width - pad}" y="{pad + 14 * i}" text-anchor="end" font-size="11" '
                   f'fill="{col}">{name}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def _model(cfg, rep):
    spec = _make_kernel(cfg.kernel, cfg.T)
    return spec, rep.timed("build_model", build_model, spec)


def _ladder_table(rep, results, exact=None):
    cols = list(VariationResult.CSV_HEADER)
    rows = [list(r.csv_row()) for r in results]
    if exact is not None:
        cols += ["exact", "z"]
        for row, r, ex in zip(rows, results, exact):
            z = (r.mc_second_moment - ex) / r.stderr_of_second_moment
            row += [repr(ex), repr(z)]
    rep.table("ladder", cols, rows)


def run_variation_ladder(cfg, rep):
    spec, model = _model(cfg, rep)
    ens = rep.timed("simulate", simulate_gaussian, model, cfg.grid, cfg.n_paths, cfg.seed)
    res = rep.timed("estimate", ensemble_variation, ens, cfg.m, cfg.eps_ladder)
    mc = [r.mc_second_moment for r in res]
    rep.series["MC second moment"] = (cfg.eps_ladder, mc)
    exact = None
    if cfg.checks.get("concordance", model.stationary_increments):
        exact = [rep.timed("exact", exact_msq_variation, model, cfg.m, e, T=cfg.T).total
                 for e in cfg.eps_ladder]
        rep.series["exact"] = (cfg.eps_ladder, exact)
        z = [(a - b) / r.stderr_of_second_moment for a, b, r in zip(mc, exact, res)]
        rep.deltas["mc_minus_exact_in_se"] = z
        lim = float(cfg.checks.get("se_max", 3.0))
        rep.verdict("concordance", max(abs(v) for v in z) <= lim,
                    f"max |z| = {max(abs(v) for v in z):.3f} (limit {lim})")
    _ladder_table(rep, res, exact)
    if cfg.checks.get("decreasing", True):
        rep.verdict("decreasing", all(b < a for a, b in zip(mc, mc[1:])),
                    "MC second moments strictly decreasing along the ladder")
    fit = rep.fit("mc_second_moment", cfg.eps_ladder, mc) if len(mc) >= 4 else None
    if "expected_slope" in cfg.checks:
        want, tol = float(cfg.checks["expected_slope"]), float(cfg.checks.get("slope_tol", 0.1))
        ok = fit is not None and abs(fit.slope - want) <= tol
        rep.verdict("slope", ok, f"slope {fit.slope if fit else float('nan'):.4f}, expected {want} +- {tol}")


def _exact_ladder(cfg, rep, model):
    res = [rep.timed("exact", exact_msq_variation, model, cfg.m, e, T=cfg.T) for e in cfg.eps_ladder]
    rep.table("breakdown", ("m", "eps", "j", "c_j", "J_j", "total"),
              [row for r in res for row in r.rows()])
    return [r.total for r in res]


def run_rate_fit(cfg, rep):
    spec, model = _model(cfg, rep)
    vals = _exact_ladder(cfg, rep, model)
    rep.table("ladder", ("eps", "exact_second_moment"), zip(cfg.eps_ladder, vals))
    rep.series["exact"] = (cfg.eps_ladder, vals)
    fit = rep.fit("exact_second_moment", cfg.eps_ladder, vals)
    if "expected_slope" in cfg.checks or spec.family == "fbm":
        want = float(cfg.checks.get("expected_slope", 2 * cfg.m * spec.hurst - 1 if spec.hurst else 0))
        tol = float(cfg.checks.get("slope_tol", 0.1))
        rep.verdict("slope", abs(fit.slope - want) <= tol,
                    f"slope {fit.slope:.4f}, expected {want:.4f} +- {tol}")
    min_r2 = float(cfg.checks.get("min_r2", 0.99))
    rep.verdict("r2", fit.r2 >= min_r2, f"r2 {fit.r2:.5f} (min {min_r2})")


def run_critical_h16(cfg, rep):
    spec, model = _model(cfg, rep)
    H = spec.hurst
    vals = _exact_ladder(cfg, rep, model)
    chaos = [rep.timed("chaos", chaos_variances_fbm, H, e, T=cfg.T) for e in cfg.eps_ladder]
    v1, v3 = [c[0] for c in chaos], [c[1] for c in chaos]
    rel = [abs(a + b - t) / t for a, b, t in zip(v1, v3, vals)]
    rep.table("ladder", ("eps", "exact_second_moment", "varI1", "varI3", "orthogonality_rel"),
              zip(cfg.eps_ladder, vals, v1, v3, rel))
    rep.series.update({"exact": (cfg.eps_ladder, vals), "varI1": (cfg.eps_ladder, v1),
                       "varI3": (cfg.eps_ladder, v3)})
    lo, hi = cfg.checks.get("ratio_band", [0.5, 2.0])
    tol = float(cfg.checks.get("slope_tol", 0.1))
    ratio = min(vals) / max(vals)
    rep.verdict("total_bounded", lo <= ratio <= hi, f"min/max {ratio:.4f} in [{lo}, {hi}]")
    fit = rep.fit("exact_second_moment", cfg.eps_ladder, vals)
    want = 2 * cfg.m * H - 1
    rep.verdict("total_slope", abs(fit.slope - want) <= tol, f"slope {fit.slope:.4f}, expected {want:.4f} +- {tol}")
    f1 = rep.fit("varI1", cfg.eps_ladder, v1)
    rep.verdict("varI1_slope", abs(f1.slope - 4 * H) <= tol, f"slope {f1.slope:.4f}, expected {4 * H:.4f} +- {tol}")
    r3 = min(v3) / max(v3)
    rep.verdict("varI3_bounded", lo <= r3 <= hi, f"min/max {r3:.4f} in [{lo}, {hi}]")
    rtol = float(cfg.checks.get("orthogonality_rtol", 1e-4))
    rep.verdict("orthogonality", max(rel) <= rtol, f"max relative gap {max(rel):.3e} (limit {rtol})")


def run_ito_check(cfg, rep):
    spec, model = _model(cfg, rep)
    grid = cfg.grid
    ens = rep.timed("simulate", simulate_gaussian, model, grid, cfg.n_paths, cfg.seed)
    name = cfg.ito.get("function", "x4")
    f, fp = ITO_FUNCTIONS[name]
    rows, med = [], []
    for eps in cfg.eps_ladder:
        r = rep.timed("residual", ito_residual, ens.values, grid, f, fp, eps)
        med.append(float(np.median(np.abs(r))))
        rows.append((name, eps, med[-1], float(np.mean(r))))
    rep.table("ladder", ("function", "eps", "median_abs_residual", "mean_residual"), rows)
    rep.series[f"median |residual| f={name}"] = (cfg.eps_ladder, med)
    lim = float(cfg.checks.get("ratio_max", 0.25))
    ratio = med[-1] / med[0]
    rep.verdict("median_ratio", ratio <= lim, f"finest/coarsest median |residual| {ratio:.4f} (limit {lim})")
    tel = []
    for key in ("x", "x2"):
        g, gp = ITO_FUNCTIONS[key]
        tel.append((key, grid.step, float(np.max(np.abs(ito_residual(ens.values, grid, g, gp, grid.step))))))
    rep.table("telescoping", ("function", "eps", "max_abs_residual"), tel)
    rep.verdict("telescoping", all(t[2] == 0.0 for t in tel), "residual exactly 0 at eps=step for f=x, x^2")


def run_conditions(cfg, rep):
    spec, model = _model(cfg, rep)
    c = cfg.conditions
    reports = rep.timed("conditions", check_conditions, model, float(c["a"]), float(c["b"]),
                        float(c["c"]), float(c["cprime"]), probe_n=int(c.get("probe_n", 40)))
    if cfg.checks.get("concavity", model.stationary_increments):
        reports.append(rep.timed("concavity", check_concavity, model.delta2_univ, T=cfg.T))
    rep.table("conditions", ("condition", "worst_margin", "holds", "probe_count"),
              [(r.condition, r.worst_margin, r.holds, r.probe_count) for r in reports])
    for r in reports:
        rep.verdict(r.condition, r.holds, f"worst margin {r.worst_margin:.3e} over {r.probe_count} probes")


def run_martingale_case(cfg, rep):
    spec = _make_kernel(cfg.kernel, cfg.T)
    driver = DriverSpec("integrand", DRIVER_INTEGRANDS[cfg.driver.get("integrand", "sin")]())
    ens = rep.timed("simulate", simulate_martingale_volterra, spec, driver, cfg.grid,
                    int(cfg.driver.get("inner_refine", 4)), cfg.n_paths, cfg.seed)
    res = rep.timed("estimate", ensemble_variation, ens, cfg.m, cfg.eps_ladder)
    _ladder_table(rep, res)
    mc = [r.mc_second_moment for r in res]
    rep.series["MC second moment"] = (cfg.eps_ladder, mc)
    if len(mc) >= 4:
        rep.fit("mc_second_moment", cfg.eps_ladder, mc)
    lim = float(cfg.checks.get("ratio_max", 0.25))
    ratio = mc[-1] / mc[0]
    rep.verdict("ratio", ratio <= lim, f"finest/coarsest second moment {ratio:.4f} (limit {lim})")


def run_mu_mass(cfg, rep):
    spec, model = _model(cfg, rep)
    out = [rep.timed("mu_mass", mu_offdiagonal_mass, model, e) for e in cfg.eps_ladder]
    masses = [o[0] for o in out]
    rep.table("ladder", ("eps", "mass", "grid_n", "converged"),
              [(e, o[0], o[1]["grid_n"], o[1]["converged"]) for e, o in zip(cfg.eps_ladder, out)])
    if any(v <= 0 for v in masses):
        rep.verdict("slope", False, "mass vanishes on the ladder; no power law to fit")
        return
    rep.series["off-diagonal mass"] = (cfg.eps_ladder, masses)
    fit = rep.fit("mass", cfg.eps_ladder, masses)
    if "expected_slope" in cfg.checks or spec.hurst is not None:
        want = float(cfg.checks.get("expected_slope", 2 * (spec.hurst or 0) - 1))
        tol = float(cfg.checks.get("slope_tol", 0.15))
        rep.verdict("slope", abs(fit.slope - want) <= tol, f"slope {fit.slope:.4f}, expected {want:.4f} +- {tol}")


RUNNERS = {
    "variation_ladder": run_variation_ladder,
    "rate_fit": run_rate_fit,
    "critical_h16": run_critical_h16,
    "ito_check": run_ito_check,
    "conditions": run_conditions,
    "martingale_case": run_martingale_case,
    "mu_mass": run_mu_mass,
}


def run(cfg: ExperimentConfig):
    """Execute an experiment, write its artifacts and return the Report."""
    rep = Report(cfg)
    t0 = time.perf_counter()
    try:
        RUNNERS[cfg.experiment](cfg, rep)
    except PowvarError as exc:
        raise type(exc)(f"[{cfg.experiment}] {exc}") from exc
    rep.timings["total"] = time.perf_counter() - t0
    rep.write()
    return rep


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _describe(err: ConfigError):
    return str(err)


def main(argv=None):
    ap = argparse.ArgumentParser(prog="powvar", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", help="override output_dir from the config")
    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")
    sub.add_parser("list-experiments", help="list experiment names")
    args = ap.parse_args(argv)

    if args.command == "list-experiments":
        for name, desc in EXPERIMENTS.items():
            print(f"{name:18s} {desc}")
        return 0
    path = Path(args.config)
    try:
        text = path.read_text()
    except OSError as exc:
        print(f"powvar: cannot read {path}: {exc}", file=sys.stderr)
        return 2
    cfg, diags = parse_config(text, path.parent)
    if args.command == "validate":
        for d in diags:
            print(f"{path}: {_describe(d)}")
        return 1 if diags else 0
    if diags:
        for d in diags:
            print(f"{path}: {_describe(d)}", file=sys.stderr)
        return 2
    if args.output_dir:
        cfg.output_dir = Path(args.output_dir)
    try:
        rep = run(cfg)
    except PowvarError as exc:
        print(f"powvar: {exc}", file=sys.stderr)
        return 2
    for v in rep.verdicts:
        print(f"{v['status'].upper():4s} {v['rule']}: {v['detail']}")
    print(f"artifacts in {cfg.output_dir}")
    return 0 if rep.passed else 1


if __name__ == "__main__":
    sys.exit(main())
