"""Reproducible experiments behind one command-line tool.

Each subcommand reads a flat ``key = value`` config (one section per
experiment, parsed with configparser), runs its checks and writes CSV
tables, SVG line plots and a manifest with the resolved config and the
SHA-256 of every artifact.  The exit code is 0 exactly when every gating
check passes.

CSV tables hold only deterministic quantities, so repeated runs with the
same config and seed are byte-identical.  Wall-clock timings go to
``timing.txt``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exact_family import (
    Jet2,
    SelfSimilarParams,
    Singularity,
    classify_singularity,
    eval_uk,
    similarity_profile,
    steady_ode_residual,
    steady_profile,
    timelike_q,
    wave_residual,
)
from .geometry import ConeDomain, Grid1D, SpaceTimeGrid
from .linearization import (
    BackgroundField,
    check_coefficient_bounds,
    coefficient_field,
    coefficients,
    type_atlas,
)
from .mixed_solver import (
    EnergyWeights,
    LinearProblem,
    energy_monitor,
    manufactured_problem,
    solve,
)
from .nash_moser import DivergenceError, IterationConfig, Profile, iterate
from .nonlinear_solver import (
    SliceState,
    Termination,
    evolve,
    evolve_slice,
    exact_slice_state,
    exact_state,
    exact_trace_bc,
)
from .smoothing_sobolev import axiom_sweep, cosine_corpus, h_norm, smooth

log = logging.getLogger(__name__)

COMMANDS = ("verify-exact", "blowup", "coeffs", "linsolve", "smooth", "nash", "stability")

DEFAULTS: dict[str, dict] = {
    "verify-exact": dict(n_points=1000, n_params=10, k_min=-3.0, k_max=3.0, T_min=0.5,
                         T_max=2.0, tol=1e-9, q_tol=1e-10, ode_tol=1e-12, n_rho=1999,
                         k=None, T=None),
    "blowup": dict(k=1.0, T=1.0, n=2048, margin=0.05, width=0.9, tol=0.05,
                   convergence=[512, 1024, 2048], slope=-2.0, slope_tol=0.3,
                   coarse=[256], time_limit=60.0),
    "coeffs": dict(n=64, refinements=[32, 64], n_backgrounds=20, R=0.1,
                   b_tol=1e-12, stable_factor=2.0),
    "linsolve": dict(sizes=[32, 64, 128], kappa=1e-4, theta=1e-4, slope=-2.0,
                     slope_tol=0.3, zero_tol=1e-10, sensitivity_factor=10.0,
                     nu=50.0, chi=6.0, mu=10.0, stable_factor=2.0, time_limit=120.0),
    "smooth": dict(n=512, length=1.0, count=8, max_mode=24,
                   thetas=[2, 4, 8, 16, 32], orders=[0, 1, 2, 3], C_max=10.0,
                   projection_tol=1e-12),
    "nash": dict(epsilon=1e-4, n=64, R=0.1, N0=2, s_bar=2, s=4, d=0.1, max_m=4,
                 kappa=1e-4, theta=1e-4, ratio_min=1.5, ratio_max=2.5,
                 monotone_steps=3, time_limit=600.0),
    "stability": dict(k=1.0, T=1.0, delta=0.9, margin=0.1, n=1024,
                      epsilons=[0.0, 1e-3, 1e-2], C_max=10.0, linear_tol=0.2,
                      time_limit=300.0),
}


class ConfigError(ValueError):
    """The config cannot describe a valid run."""


@dataclass
class Check:
    name: str
    value: float | None
    bound: str
    passed: bool
    gating: bool = True


@dataclass
class Outcome:
    command: str
    config: dict
    checks: list[Check] = field(default_factory=list)
    tables: dict[str, tuple[list[str], list[list]]] = field(default_factory=dict)
    plots: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gating)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def add(self, name, value, bound, passed, gating=True):
        self.checks.append(Check(name, None if value is None else float(value), bound,
                                 bool(passed), gating))


# ---------------------------------------------------------------- config


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    if "," in text:
        return [_parse_value(part) for part in text.split(",") if part.strip()]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def load_config(command: str, path: str | Path | None = None,
                overrides: dict | None = None) -> dict:
    """Defaults, then the [common] and [command] sections of the file, then overrides."""
    if command not in DEFAULTS:
        raise ConfigError(f"unknown experiment {command!r}")
    cfg = dict(DEFAULTS[command])
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        if not parser.read(path):
            raise ConfigError(f"cannot read config {path}")
        for section in ("common", command):
            if parser.has_section(section):
                for key, val in parser.items(section):
                    cfg[key] = _parse_value(val)
    cfg.update(overrides or {})
    unknown = set(cfg) - set(DEFAULTS[command])
    if unknown:
        raise ConfigError(f"unknown keys for {command}: {sorted(unknown)}")
    for key, default in DEFAULTS[command].items():
        if isinstance(default, list) and not isinstance(cfg[key], list):
            cfg[key] = [cfg[key]]
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict):
    for key in ("k",):
        if key in cfg and cfg[key] is not None and cfg[key] == 0:
            raise ConfigError("k must be nonzero (k in R \\ {0})")
    if "T" in cfg and cfg["T"] is not None and cfg["T"] <= 0:
        raise ConfigError("T must be positive")
    if command == "stability" and not 0 < cfg["delta"] < 1:
        raise ConfigError("delta must lie in (0, 1)")


def config_text(cfg: dict) -> str:
    def fmt(v):
        if isinstance(v, list):
            return ", ".join(fmt(x) for x in v)
        if isinstance(v, float):
            return repr(v)
        return str(v)
    return "".join(f"{k} = {fmt(cfg[k])}\n" for k in sorted(cfg))


# ---------------------------------------------------------------- output


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if v is None:
        return ""
    return str(v)


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def line_plot(series: list[tuple[str, np.ndarray, np.ndarray]], title: str,
              xlabel: str, ylabel: str, logy: bool = False,
              width: int = 640, height: int = 400) -> str:
    """Static SVG line plot; output depends only on the data."""
    pad = 60
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
    pts = []
    for _, x, y in series:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if logy:
            y = np.log10(np.where(y > 0, y, np.nan))
        pts.append((x, y))
    allx = np.concatenate([p[0][np.isfinite(p[1])] for p in pts]) if pts else np.zeros(1)
    ally = np.concatenate([p[1][np.isfinite(p[1])] for p in pts]) if pts else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="15" y="{height / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 15 {height / 2:.1f})">{"log10 " if logy else ""}{ylabel}</text>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{sx(xv):.1f}" y="{height - pad + 16}" text-anchor="middle" '
                   f'font-size="10">{xv:.4g}</text>')
        out.append(f'<text x="{pad - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end" '
                   f'font-size="10">{yv:.4g}</text>')
    for idx, ((label, _, _), (x, y)) in enumerate(zip(series, pts)):
        color = palette[idx % len(palette)]
        ok = np.isfinite(y)
        coords = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x[ok], y[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{width - pad + 4}" y="{pad + 14 * idx}" font-size="11" '
                   f'fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_outputs(outcome: Outcome, out_dir: str | Path, seed: int) -> Path:
    """Write checks.csv, tables, plots, timing.txt and manifest.txt."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files: dict[str, str] = {}
    files["checks.csv"] = csv_text(
        ["check", "value", "bound", "passed", "gating"],
        [[c.name, c.value, c.bound, c.passed, c.gating] for c in outcome.checks])
    for name, (header, rows) in outcome.tables.items():
        files[f"{name}.csv"] = csv_text(header, rows)
    for name, svg in outcome.plots.items():
        files[f"{name}.svg"] = svg
    files["timing.txt"] = "".join(f"{k} = {v:.3f} s\n" for k, v in sorted(outcome.timings.items()))
    for name, text in files.items():
        (out / name).write_text(text)
    lines = [f"command = {outcome.command}", f"seed = {seed}",
             f"passed = {'true' if outcome.passed else 'false'}", "", "[config]",
             config_text(outcome.config).rstrip("\n"), "", "[artifacts]"]
    for name in sorted(files):
        digest = hashlib.sha256(files[name].encode()).hexdigest()
        lines.append(f"{name} = sha256:{digest}")
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    return out / "manifest.txt"


def _map(fn, items, jobs: int):
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


# ---------------------------------------------------------------- verify-exact


def cmd_verify_exact(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("verify-exact", cfg)
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    params = []
    for _ in range(cfg["n_params"]):
        k = cfg["k"] if cfg["k"] is not None else rng.uniform(cfg["k_min"], cfg["k_max"])
        if k == 0 or abs(k) < 1e-3:
            k = 1.0
        T = cfg["T"] if cfg["T"] is not None else rng.uniform(cfg["T_min"], cfg["T_max"])
        params.append(SelfSimilarParams(k, T))
    rows = []
    worst = dict(bi=0.0, wave=0.0, q=0.0, qmin=np.inf, nontimelike=0, similarity=0.0)
    for p in params:
        t = rng.uniform(0.0, 0.95, cfg["n_points"]) * p.T
        s = p.T - t
        x = rng.uniform(-0.95, 0.95, cfg["n_points"]) * s
        j = eval_uk(p, t, x)
        terms = (j.u_tt * (1 + j.u_x**2), j.u_xx * (1 - j.u_t**2), 2 * j.u_t * j.u_x * j.u_tx)
        scale = 1 + sum(np.abs(v) for v in terms)
        bi = np.max(np.abs(terms[0] - terms[1] - terms[2]) / scale)
        wave = np.max(np.abs(wave_residual(j)) / (1 + np.abs(j.u_tt) + np.abs(j.u_xx)))
        q = timelike_q(j)
        qf = 1 + 4 * p.k**2 / (s * s - x * x)
        qerr = np.max(np.abs(q - qf) / qf)
        kinds = [classify_singularity(Jet2(u_t=a, u_x=b)) for a, b in zip(j.u_t, j.u_x)]
        nont = sum(kd is not Singularity.TIMELIKE for kd in kinds)
        rho = np.linspace(-0.95, 0.95, 39)
        sim = max(float(np.max(np.abs(similarity_profile(p, tau, rho) - steady_profile(p.k, rho))))
                  for tau in (0.0, 0.5, 2.0))
        sim /= 1 + float(np.max(np.abs(steady_profile(p.k, rho))))
        rows.append([p.k, p.T, bi, wave, qerr, float(q.min()), nont, sim])
        worst["bi"] = max(worst["bi"], bi)
        worst["wave"] = max(worst["wave"], wave)
        worst["q"] = max(worst["q"], qerr)
        worst["qmin"] = min(worst["qmin"], float(q.min()))
        worst["nontimelike"] += nont
        worst["similarity"] = max(worst["similarity"], sim)
    t_family = time.perf_counter() - start
    start = time.perf_counter()
    rho = np.linspace(-0.99, 0.99, cfg["n_rho"])
    ks = sorted({1.0} | {p.k for p in params}) if cfg["k"] is None else [cfg["k"]]
    ode = max(float(np.max(np.abs(steady_ode_residual(k, rho)))) for k in ks)
    t_ode = time.perf_counter() - start
    tol = cfg["tol"]
    out.add("bi_residual_scaled", worst["bi"], f"<= {tol:g}", worst["bi"] <= tol)
    out.add("wave_residual_scaled", worst["wave"], f"<= {tol:g}", worst["wave"] <= tol)
    out.add("similarity_constancy", worst["similarity"], f"<= {tol:g}", worst["similarity"] <= tol)
    out.add("steady_ode_residual", ode, f"<= {cfg['ode_tol']:g}", ode <= cfg["ode_tol"])
    out.add("timelike_min_Q", worst["qmin"], "> 0", worst["qmin"] > 0 and worst["nontimelike"] == 0)
    out.add("timelike_Q_formula", worst["q"], f"<= {cfg['q_tol']:g}", worst["q"] <= cfg["q_tol"])
    out.add("runtime_family_lt_1s", None, "< 1 s", t_family < 1.0)
    out.add("runtime_ode_lt_0.1s", None, "< 0.1 s", t_ode < 0.1)
    out.tables["exact_family"] = (
        ["k", "T", "bi_scaled", "wave_scaled", "q_rel_err", "q_min", "non_timelike", "similarity"],
        rows)
    out.timings.update(family=t_family, ode=t_ode)
    return out


# ---------------------------------------------------------------- blowup


def blowup_run(p: SelfSimilarParams, n: int, t_end: float, width: float):
    """Evolve exact data on [0, width (T - t_end)]; returns (report, grid)."""
    g = Grid1D(0.0, width * (p.T - t_end), n)
    rep = evolve(exact_state(p, g), exact_trace_bc(p, g), t_end, record_every=max(1, n // 64))
    return rep, g


def _blowup_job(args):
    k, T, n, t_end, width = args
    start = time.perf_counter()
    rep, _ = blowup_run(SelfSimilarParams(k, T), n, t_end, width)
    return rep.times, rep.grad_at_origin, rep.final.u, rep.terminated, time.perf_counter() - start


def cmd_blowup(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("blowup", cfg)
    p = SelfSimilarParams(cfg["k"], cfg["T"])
    t_end = p.T - cfg["margin"]
    sizes = sorted(set(cfg["convergence"]) | {cfg["n"]} | set(cfg["coarse"]))
    results = dict(zip(sizes, _map(_blowup_job, [(p.k, p.T, n, t_end, cfg["width"])
                                                 for n in sizes], jobs)))
    out.timings.update({f"run_{n}": results[n][4] for n in sizes})
    rows, series = [], []
    for n in sizes:
        times, grad, _, term, _ = results[n]
        rate = (p.T - times) * grad
        dev = float(np.max(np.abs(rate / (2 * p.k) - 1)))
        lit = float(np.max(np.abs(rate / p.k - 1)))
        rows.append([n, term.value, float(times[-1]), dev, lit])
        series.append((f"n={n}", times, rate / p.k))
    times, grad, _, term, _ = results[cfg["n"]]
    rate = (p.T - times) * grad
    dev = float(np.max(np.abs(rate / (2 * p.k) - 1)))
    lit = float(np.max(np.abs(rate / p.k - 1)))
    reached = term is Termination.REACHED_T_END
    out.add("rate_2k_within_tol", dev, f"<= {cfg['tol']:g}", reached and dev <= cfg["tol"])
    out.add("rate_equals_k_literal", lit, f"<= {cfg['tol']:g}", lit <= cfg["tol"], gating=False)
    conv = sorted(cfg["convergence"])
    diffs = []
    for a, b in zip(conv[:-1], conv[1:]):
        ua, ub = results[a][2], results[b][2]
        diffs.append(float(np.max(np.abs(ub[:: b // a] - ua))))
    if len(diffs) >= 2:
        slope = float(np.polyfit(np.log(conv[:-1]), np.log(diffs), 1)[0])
    else:
        slope = float("nan")
    ok = abs(slope - cfg["slope"]) <= cfg["slope_tol"]
    out.add("self_convergence_slope", slope, f"{cfg['slope']:g} +- {cfg['slope_tol']:g}", ok)
    out.add("runtime", None, f"< {cfg['time_limit']:g} s",
            out.timings[f"run_{cfg['n']}"] < cfg["time_limit"])
    out.tables["blowup_rate"] = (["t", "rate", "rate_over_k"],
                                 [[t, r, r / p.k] for t, r in zip(times, rate)])
    out.tables["blowup_resolution"] = (["n", "terminated", "t_final", "max_dev_2k", "max_dev_k"], rows)
    out.tables["blowup_convergence"] = (["n_coarse", "n_fine", "max_diff"],
                                        [[a, b, d] for a, b, d in zip(conv[:-1], conv[1:], diffs)])
    out.plots["blowup_rate"] = line_plot(series, "(T-t) u_x(t,0) / k", "t", "rate / k")
    return out


# ---------------------------------------------------------------- coeffs


def random_background(grid: SpaceTimeGrid, rng, R: float) -> BackgroundField:
    """amp sin(a x + p) ((t + 1/2)/1.5)^2 with amp small enough for the R-ball."""
    amp = rng.uniform(0.1, 0.2) * R
    a, ph = rng.uniform(0.5, 1.5), rng.uniform(0.0, np.pi)

    def fn(t, x):
        S, C = np.sin(a * x + ph), np.cos(a * x + ph)
        q, qt = (t + 0.5) ** 2 / 2.25, 2 * (t + 0.5) / 2.25
        return Jet2(u=amp * S * q, u_t=amp * S * qt, u_x=amp * a * C * q,
                    u_tt=amp * S * 2 / 2.25, u_tx=amp * a * C * qt,
                    u_xx=-amp * a * a * S * q)

    return BackgroundField.from_function(grid, fn, R=R)


def cmd_coeffs(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("coeffs", cfg)
    dom = ConeDomain()
    g = SpaceTimeGrid(dom, cfg["n"], cfg["n"])
    atlas = type_atlas(g)
    rows, worst_cell, all_one = [], 0.0, True
    for n_t, t in enumerate(g.t):
        xs = float(atlas["x_star"][n_t])
        cross = atlas["crossings"][n_t]
        dx = (dom.T - t) * g.dxi
        err = float(np.min(np.abs(np.asarray(cross) - xs))) if len(cross) else np.inf
        single = len(cross) == 1
        all_one &= single and err <= dx
        worst_cell = max(worst_cell, err / dx)
        b_star = float(coefficients(Jet2(), t, xs, dom.T).b)
        rows.append([t, xs, cross[0] if len(cross) else None, err, dx, b_star])
    b_max = max(abs(r[5]) for r in rows)
    out.add("degenerate_within_one_cell", worst_cell, "<= 1 cell", all_one)
    out.add("b_at_degenerate_curve", b_max, f"<= {cfg['b_tol']:g}", b_max <= cfg["b_tol"])
    out.tables["degenerate_curve"] = (["t", "x_star", "crossing", "error", "cell", "b_at_x_star"], rows)
    out.plots["degenerate_curve"] = line_plot(
        [("x*(t)", g.t, [r[1] for r in rows]),
         ("sign change of b", g.t, [np.nan if r[2] is None else r[2] for r in rows])],
        "degenerate curve", "t", "x")

    brow, stable, bounds_ok = [], True, True
    names = ("a", "b", "c", "d", "e", "j")
    for idx in range(cfg["n_backgrounds"]):
        consts = []
        for n in cfg["refinements"]:
            gr = SpaceTimeGrid(dom, n, n)
            # the same background on every grid of the refinement study
            bg = random_background(gr, np.random.default_rng([seed, idx]), cfg["R"])
            rep = check_coefficient_bounds(coefficient_field(bg), bg)
            bounds_ok &= rep.ok and bg.in_ball()
            consts.append(rep.constants)
            brow.append([idx, n] + [rep.constants[k] for k in names])
        for name in names:
            vals = [c[name] for c in consts]
            if min(vals) > 0:
                stable &= max(vals) / min(vals) <= cfg["stable_factor"]
    out.add("coefficient_bounds_hold", None, "finite constants, 0 < j < 1", bounds_ok)
    out.add("coefficient_constants_stable", None, f"within x{cfg['stable_factor']:g}", stable)
    out.tables["coefficient_bounds"] = (["background", "n"] + [f"C_{k}" for k in names], brow)
    return out


# ---------------------------------------------------------------- linsolve


def cmd_linsolve(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("linsolve", cfg)
    dom = ConeDomain()
    sizes = sorted(cfg["sizes"])
    errs, rows, consts = [], [], []
    weights = EnergyWeights(cfg["nu"], cfg["chi"], cfg["mu"])
    t_top = 0.0
    for n in sizes:
        g = SpaceTimeGrid(dom, n, n)
        cf = coefficient_field(BackgroundField.zero(g))
        p0, H = manufactured_problem(g, cf, kappa=0.0, theta=0.0)
        start = time.perf_counter()
        h0 = solve(p0).h
        p1, _ = manufactured_problem(g, cf, kappa=cfg["kappa"], theta=cfg["theta"])
        h1 = solve(p1).h
        elapsed = time.perf_counter() - start
        t_top = elapsed if n == sizes[-1] else t_top
        out.timings[f"solve_{n}"] = elapsed
        err = float(np.max(np.abs(h0 - H)))
        sens = float(np.max(np.abs(h1 - h0)))
        zero = float(np.max(np.abs(solve(LinearProblem(g, cf, np.zeros(g.shape))).h)))
        rep = energy_monitor(h1, cf, g, p1.rhs, weights=weights, h0=p1.h0, h1=p1.h1)
        consts.append(rep.constants)
        errs.append(err)
        rows.append([n, err, sens, zero, rep.constants["hyp"], rep.constants["ell"]]
                    + [rep.margins[k] for k in ("hyp_t", "hyp_x", "ell_t", "ell_x")])
    slope = float(np.polyfit(np.log(sizes), np.log(errs), 1)[0])
    out.add("manufactured_order", slope, f"{cfg['slope']:g} +- {cfg['slope_tol']:g}",
            abs(slope - cfg["slope"]) <= cfg["slope_tol"])
    zmax = max(r[3] for r in rows)
    out.add("zero_data_zero_solution", zmax, f"<= {cfg['zero_tol']:g}", zmax <= cfg["zero_tol"])
    ratio = rows[-1][2] / rows[-1][1]
    out.add("kappa_theta_sensitivity_over_error", ratio, f"< {cfg['sensitivity_factor']:g}",
            ratio < cfg["sensitivity_factor"])
    out.add("runtime_top_grid", None, f"< {cfg['time_limit']:g} s", t_top < cfg["time_limit"])
    margin = min(rows[-1][6:10])
    out.add("energy_margins_positive", margin, "> 0", margin > 0)
    stable = all(max(c[k] for c in consts) <= cfg["stable_factor"] * min(c[k] for c in consts)
                 and min(c[k] for c in consts) > 0 for k in ("hyp", "ell"))
    out.add("energy_constants_stable", None, f"within x{cfg['stable_factor']:g}", stable)
    out.tables["linsolve"] = (["n", "max_error", "kappa_theta_shift", "zero_data_max", "C_hyp",
                               "C_ell", "margin_hyp_t", "margin_hyp_x", "margin_ell_t",
                               "margin_ell_x"], rows)
    out.plots["manufactured_error"] = line_plot([("max error", sizes, errs)],
                                                "manufactured solution error", "n", "error",
                                                logy=True)
    return out


# ---------------------------------------------------------------- smooth


def cmd_smooth(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("smooth", cfg)
    rng = np.random.default_rng(seed)
    L = cfg["length"]
    corpus = cosine_corpus(cfg["n"], L, cfg["count"], cfg["max_mode"], rng)
    rep = axiom_sweep(corpus, L, thetas=tuple(cfg["thetas"]), orders=tuple(cfg["orders"]))
    proj = 0.0
    for f in corpus:
        for th in cfg["thetas"]:
            pf = smooth(f, th, L)
            proj = max(proj, float(np.max(np.abs(smooth(pf, th, L) - pf))) / (1 + np.max(np.abs(f))))
    out.add("axiom_constant", rep.C, f"<= {cfg['C_max']:g}", rep.holds(cfg["C_max"]))
    out.add("projection_property", proj, f"<= {cfg['projection_tol']:g}", proj <= cfg["projection_tol"])
    out.tables["smoothing_axioms"] = (["inequality", "constant", "corpus_index", "theta", "s1", "s2"],
                                      [[k, v, *rep.worst.get(k, (None,) * 4)]
                                       for k, v in rep.constants.items()])
    return out


# ---------------------------------------------------------------- nash


def cmd_nash(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("nash", cfg)
    dom = ConeDomain()
    g = SpaceTimeGrid(dom, cfg["n"], cfg["n"])
    ic = IterationConfig(epsilon=cfg["epsilon"], R=cfg["R"], N0=cfg["N0"], s_bar=cfg["s_bar"],
                         s=cfg["s"], d=cfg["d"], max_m=cfg["max_m"], kappa=cfg["kappa"],
                         theta=cfg["theta"], stop_at_floor=False)
    w0, w1 = Profile.unit_h2_bump(dom.delta * dom.T), Profile.zero()
    start = time.perf_counter()
    diverged = False
    try:
        tr = iterate(ic, w0, w1, g)
    except DivergenceError as exc:
        tr, diverged = exc.trace, True
    elapsed = time.perf_counter() - start
    out.timings["iterate"] = elapsed
    E = [tr.E0_norm] + list(tr.column("E_norm"))
    steps = tr.steps
    mono = len(E) > cfg["monotone_steps"] and all(
        E[m] < E[m - 1] for m in range(1, cfg["monotone_steps"] + 1))
    # a ratio is undefined while a norm exceeds 1; such steps fail the check
    pre = np.array([r.ratio for r in steps if not r.below_floor])
    ratio_ok = pre.size > 0 and bool(np.all(np.isfinite(pre))) and bool(
        np.all((pre >= cfg["ratio_min"]) & (pre <= cfg["ratio_max"])))
    psi_max = float(np.max(tr.column("psi_norm"))) if steps else 0.0
    bound = ic.epsilon + sum(ic.d ** (2**i) for i in range(1, len(steps) + 1))
    C = tr.quadratic_constant()
    out.add("quadratic_bound_fitted_C", C, "finite", np.isfinite(C) and C > 0)
    out.add("monotone_decrease_m1_3", None, "E(m) < E(m-1)", mono)
    finite = pre[np.isfinite(pre)]
    out.add("decay_ratio_pre_floor", float(finite.min()) if finite.size else None,
            f"in [{cfg['ratio_min']:g}, {cfg['ratio_max']:g}]", ratio_ok)
    out.add("psi_inside_ball", psi_max, f"< {ic.R:g}", psi_max < ic.R and not diverged)
    out.add("psi_membership_bound", psi_max, f"<= {bound:.4g}", psi_max <= bound, gating=False)
    out.add("smallness_chain", ic.epsilon, f"< {ic.N0 ** -8 * ic.d ** 2:.4g}",
            ic.smallness_chain(), gating=False)
    out.add("final_residual_floor", tr.final_residual, f"<= {10 * tr.floor:.4g}",
            tr.final_residual <= 10 * tr.floor, gating=False)
    out.add("runtime", None, f"< {cfg['time_limit']:g} s", elapsed < cfg["time_limit"])
    out.tables["nash_trace"] = (
        ["m", "N_m", "s_m", "h_norm", "E_norm", "psi_norm", "ratio", "quadratic_C", "below_floor"],
        [[0, 1.0, ic.s_m(0), None, tr.E0_norm, 0.0, None, None, tr.E0_norm < tr.floor]]
        + [[r.m, r.N_m, r.s_m, r.h_norm, r.E_norm, r.psi_norm,
            None if not np.isfinite(r.ratio) else r.ratio, r.quadratic_constant, r.below_floor]
           for r in steps])
    out.plots["nash_error"] = line_plot([("|E(m)|", np.arange(len(E)), E)],
                                        "Nash-Moser error", "m", "|E|", logy=True)
    return out


# ---------------------------------------------------------------- stability


def stability_data(p: SelfSimilarParams, delta: float, n: int, eps: float) -> SliceState:
    """u_k(0) + eps b and d_t u_k(0) + eps b, b = unit-H^2 x^2 (delta T - x)^2."""
    base = exact_slice_state(p, delta, n)
    bump = Profile.unit_h2_bump(delta * p.T)
    x = base.xi * p.T
    # P = u_t - xi u_x at t = 0, and the u_k part of it vanishes
    P = eps * (bump.value(x) - base.xi * p.T * bump.first(x))
    return SliceState(0.0, base.xi, base.U + eps * bump.value(x), P)


def stability_run(p: SelfSimilarParams, delta: float, n: int, eps: float, t_end: float):
    """(sup_t H^2 deviation on xi slices, termination, times, deviation history)."""
    ref = exact_slice_state(p, delta, n)
    h = ref.h
    hist = []

    def observe(st: SliceState):
        hist.append(float(h_norm(st.U - ref.U, 2, h)))

    rep = evolve_slice(stability_data(p, delta, n, eps), p.T, t_end, [observe])
    return max(hist), rep.terminated, rep.times, np.array(hist)


def _stability_job(args):
    k, T, delta, n, eps, t_end = args
    sup, term, times, hist = stability_run(SelfSimilarParams(k, T), delta, n, eps, t_end)
    return sup, term.value, times, hist


def cmd_stability(cfg: dict, seed: int = 0, jobs: int = 1) -> Outcome:
    out = Outcome("stability", cfg)
    p = SelfSimilarParams(cfg["k"], cfg["T"])
    t_end = p.T - cfg["margin"]
    eps_list = sorted(cfg["epsilons"])
    start = time.perf_counter()
    res = _map(_stability_job, [(p.k, p.T, cfg["delta"], cfg["n"], e, t_end) for e in eps_list], jobs)
    out.timings["all_runs"] = time.perf_counter() - start
    rows, series = [], []
    by_eps = {}
    for eps, (sup, term, times, hist) in zip(eps_list, res):
        ok_run = term == Termination.REACHED_T_END.value
        C = sup / eps if eps > 0 else None
        verdict = ok_run and (eps == 0 or C <= cfg["C_max"])
        rows.append([eps, sup, C, term, verdict])
        by_eps[eps] = (sup, ok_run)
        stride = max(1, len(times) // 400)
        series.append((f"eps={eps:g}", times[::stride], hist[::stride]))
    for eps in eps_list:
        if eps > 0:
            sup, ok_run = by_eps[eps]
            out.add(f"amplification_eps_{eps:g}", sup / eps, f"<= {cfg['C_max']:g}",
                    ok_run and sup / eps <= cfg["C_max"])
        else:
            out.add("deviation_eps_0", by_eps[eps][0], "discretisation floor", by_eps[eps][1],
                    gating=False)
    pos = [e for e in eps_list if e > 0]
    if len(pos) >= 2:
        lo, hi = pos[0], pos[-1]
        ratio = by_eps[hi][0] / by_eps[lo][0] / (hi / lo)
        out.add("linear_scaling", ratio, f"1 +- {cfg['linear_tol']:g}",
                abs(ratio - 1) <= cfg["linear_tol"])
    out.add("runtime", None, f"< {cfg['time_limit']:g} s",
            out.timings["all_runs"] < cfg["time_limit"])
    out.tables["stability"] = (["epsilon", "sup_H2_deviation", "C", "terminated", "verdict"], rows)
    out.plots["stability"] = line_plot(series, "H^2 deviation on xi slices", "t", "deviation",
                                       logy=True)
    return out


# ---------------------------------------------------------------- driver


RUNNERS = {
    "verify-exact": cmd_verify_exact,
    "blowup": cmd_blowup,
    "coeffs": cmd_coeffs,
    "linsolve": cmd_linsolve,
    "smooth": cmd_smooth,
    "nash": cmd_nash,
    "stability": cmd_stability,
}


def run(command: str, config: str | Path | None = None, overrides: dict | None = None,
        seed: int = 0, jobs: int = 1) -> Outcome:
    cfg = load_config(command, config, overrides)
    return RUNNERS[command](cfg, seed=seed, jobs=jobs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="borninfeld",
                                 description="Born-Infeld blow-up and stability experiments")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default=None, help="key = value config file")
    ap.add_argument("--out", default="out", help="output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        outcome = run(args.command, args.config, seed=args.seed, jobs=max(1, args.jobs))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_outputs(outcome, args.out, args.seed)
    for c in outcome.checks:
        tag = "PASS" if c.passed else ("FAIL" if c.gating else "info")
        val = "" if c.value is None else f" {c.value:.6g}"
        print(f"[{tag}] {c.name}{val} ({c.bound})")
    return 0 if outcome.passed else 1


if __name__ == "__main__":
    sys.exit(main())
