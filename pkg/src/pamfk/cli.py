"""Configuration-driven experiment runner.

``pamfk <subcommand> --config FILE [--seed N] [--out DIR] [--threads K]``

Config files are flat UTF-8 ``key = value`` lines; ``#`` starts a comment and
dotted keys group settings. Lists are comma separated, optional values
accept ``auto``. Unknown keys, duplicates, type mismatches and missing
required keys are fatal and reported with a line number.

Every run writes ``results.csv``, ``summary.json`` and ``config.echo`` (the
config file verbatim) into the output directory. Exit codes: 0 ok, 2 config
or input error, 3 numerical failure, 4 acceptance failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__, _backend
from .errors import ConfigError, InputError, NumericalFailure
from .ilt import alpha_batch, beta_batch, box_batch, DyadicBox, triangle_boxes
from .kernel import (MollifierKernel, RenormSpec, limit_constants, lemma_residual,
                     nu_epsilon, renorm_constant)
from .moments import (HEAVY_TAIL, InitialCondition, MomentRequest, MonteCarlo, default_steps,
                      exp_moment, explosion_probe, fk_moment, form_ratio, limit_moment)
from .oracle import PdeParams, cross_validate, noise_mc_moment, required_extent
from .paths import derive_seed, sample_batch

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 2, 3, 4

CSV_COLUMNS = ("quantity", "eps", "t", "n", "mean", "stderr", "n_samples", "warnings")

REQUIRED = object()
XVAL_STEPS_PER_EPS2 = 64.0     # xval FK grid: dt <= eps^2 / 64

# key -> (type, default)
SCHEMA = {
    "dimension": ("int", REQUIRED),
    "kernel.family": ("str", "gaussian"),
    "kernel.sigma2": ("float", 0.5),
    "kernel.support_radius": ("float", 1.0),
    "eps_list": ("floats", (0.2, 0.1, 0.05)),
    "t_list": ("floats", (0.05,)),
    "n": ("int", 1),
    "x": ("floats", None),
    "mc.n_paths": ("int", 10000),
    "mc.n_steps": ("opt_int", None),
    "master_seed": ("int", 0),
    "output_dir": ("str", "out"),
    "u0.form": ("str", "constant"),
    "u0.c": ("float", 1.0),
    "u0.center": ("floats", None),
    "u0.width": ("float", 1.0),
    "moments.theta": ("float", 2.0),
    "moments.lambda_hat": ("float", 0.5),
    "renorm.c1": ("opt_float", None),
    "renorm.c2": ("float", 0.0),
    "exp.lambda": ("float", 0.5),
    "exp.which": ("strs", ("X", "Y")),
    "exp.max_ratio": ("float", 1.5),
    "ilt.samples": ("int", 2000),
    "ilt.level": ("int", 2),
    "ilt.p_min": ("float", 0.01),
    "xval.h": ("opt_float", None),
    "xval.extent": ("opt_float", None),
    "xval.dt": ("opt_float", None),
    "explosion.c_prime": ("opt_float", None),
    "explosion.delta_hat": ("opt_float", None),
    "explosion.mc": ("bool", True),
}

SUBCOMMANDS = ("lemma-check", "fk-moment", "limit-moment", "exp-moment",
               "ilt-props", "xval", "explosion")


# --------------------------------------------------------------------------
# config

def _convert(kind, raw, key, line):
    def bad(what):
        return ConfigError(f"key {key!r} expects {what}, got {raw!r}", line)
    text = raw.strip()
    if kind in ("opt_int", "opt_float") and text.lower() in ("auto", "none"):
        return None
    try:
        if kind in ("int", "opt_int"):
            return int(text)
        if kind in ("float", "opt_float"):
            v = float(text)
            if not math.isfinite(v):
                raise ValueError
            return v
    except ValueError:
        raise bad("an integer" if "int" in kind else "a finite number") from None
    if kind == "bool":
        if text.lower() in ("true", "yes", "1"):
            return True
        if text.lower() in ("false", "no", "0"):
            return False
        raise bad("true or false")
    if kind == "floats":
        try:
            vals = tuple(float(p) for p in text.split(","))
        except ValueError:
            raise bad("a comma-separated list of numbers") from None
        if not all(math.isfinite(v) for v in vals):
            raise bad("finite numbers")
        return vals
    if kind == "strs":
        vals = tuple(p.strip() for p in text.split(","))
        if not all(vals):
            raise bad("a comma-separated list of names")
        return vals
    if not text:
        raise bad("a non-empty string")
    return text


def _format(kind, value):
    if value is None:
        return "auto" if kind.startswith("opt") else None
    if kind == "floats":
        return ", ".join(repr(float(v)) for v in value)
    if kind == "strs":
        return ", ".join(value)
    if kind == "bool":
        return "true" if value else "false"
    if kind in ("float", "opt_float"):
        return repr(float(value))
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed configuration: every schema key with its value or default."""

    values: dict
    source: str = field(default="", compare=False, repr=False)

    def __getitem__(self, key):
        return self.values[key]

    def kernel(self) -> MollifierKernel:
        try:
            return MollifierKernel(self["kernel.family"], self["dimension"],
                                   self["kernel.sigma2"], self["kernel.support_radius"])
        except InputError as exc:
            raise ConfigError(str(exc)) from None

    def mc(self, seed=None) -> MonteCarlo:
        return MonteCarlo(self["mc.n_paths"], self["mc.n_steps"],
                          self["master_seed"] if seed is None else seed)

    def point(self):
        x = self["x"]
        return None if x is None else tuple(x)

    def u0(self) -> InitialCondition:
        form = self["u0.form"]
        if form == "constant":
            return InitialCondition.constant(self["u0.c"])
        if form == "gaussian_bump":
            center = self["u0.center"] or (0.0,) * self["dimension"]
            return InitialCondition.gaussian_bump(center, self["u0.width"], self["u0.c"])
        raise ConfigError(f"u0.form must be constant or gaussian_bump, got {form!r}")

    def renorm(self, k: MollifierKernel) -> RenormSpec:
        return RenormSpec.for_kernel(k, c1=self["renorm.c1"], c2=self["renorm.c2"])


def parse_config_text(text: str) -> ExperimentConfig:
    values, seen = {}, {}
    lines = text.splitlines()
    for lineno, raw in enumerate(lines, start=1):
        body = raw.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        key, val = (s.strip() for s in body.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first set on line {seen[key]})", lineno)
        seen[key] = lineno
        values[key] = _convert(SCHEMA[key][0], val, key, lineno)
    for key, (_, default) in SCHEMA.items():
        if key in values:
            continue
        if default is REQUIRED:
            raise ConfigError(f"missing required key {key!r}", len(lines) + 1)
        values[key] = default
    if values["dimension"] not in (1, 2, 3):
        raise ConfigError("dimension must be 1, 2 or 3", seen["dimension"])
    if values["mc.n_paths"] < 2:
        raise ConfigError("mc.n_paths must be >= 2", seen.get("mc.n_paths"))
    return ExperimentConfig(values, text)


def parse_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    return parse_config_text(text)


def serialize(cfg: ExperimentConfig) -> str:
    """Config text listing every key; reparses to an equal config."""
    out = []
    for key, (kind, _) in SCHEMA.items():
        text = _format(kind, cfg[key])
        if text is not None:
            out.append(f"{key} = {text}")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# results

def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Results:
    def __init__(self):
        self.rows = []

    def add(self, quantity, eps=None, t=None, n=None, mean=None, stderr=None,
            n_samples=None, warnings=()):
        self.rows.append((quantity, eps, t, n, mean, stderr, n_samples, ";".join(warnings)))

    def add_estimate(self, quantity, est, eps=None, t=None, n=None):
        self.add(quantity, eps, t, n, est.mean, est.stderr, est.n_samples, est.warnings)

    def text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([_cell(v) for v in row])
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# --------------------------------------------------------------------------
# subcommands; each returns a summary dict with a "verdict" entry

def run_lemma_check(cfg, res, seed, threads):
    k = cfg.kernel()
    lc = limit_constants(k)
    spec = RenormSpec(d=2)
    verdict = lc.residual < 1e-4
    monotone = {}
    for t in cfg["t_list"]:
        seq = []
        for eps in sorted(cfg["eps_list"], reverse=True):
            nu = nu_epsilon(k, eps, t)
            r = lemma_residual(k, eps, t, lc)
            res.add("nu", eps, t, mean=nu)
            res.add("nu_minus_ct", eps, t, mean=nu - renorm_constant(spec, eps) * t)
            res.add("lemma_residual", eps, t, mean=r)
            seq.append(abs(r))
        ok = all(b < a for a, b in zip(seq, seq[1:]))
        monotone[repr(t)] = ok
        verdict &= ok
    return {"mu1": lc.mu1, "mu2": lc.mu2, "residual": lc.residual, "method": lc.method,
            "residual_decreasing_in_eps": monotone, "verdict": "PASS" if verdict else "FAIL"}


def _request(cfg, t, eps, seed, n=None):
    k = cfg.kernel()
    return MomentRequest(n or cfg["n"], t, eps, kernel=k, x=cfg.point(), u0=cfg.u0(),
                         mc=cfg.mc(seed), theta=cfg["moments.theta"],
                         lambda_hat=cfg["moments.lambda_hat"], renorm=cfg.renorm(k))


def run_fk_moment(cfg, res, seed, threads):
    cell = 0
    for t in cfg["t_list"]:
        for eps in cfg["eps_list"]:
            req = _request(cfg, t, eps, derive_seed(seed, cell))
            res.add_estimate("fk_moment", fk_moment(req, threads=threads), eps, t, req.n)
            cell += 1
    return {"verdict": None}


def run_limit_moment(cfg, res, seed, threads):
    out, verdict = {}, True
    for c, t in enumerate(cfg["t_list"]):
        req = _request(cfg, t, cfg["eps_list"][0], derive_seed(seed, c))
        rep = limit_moment(req, cfg["eps_list"], threads=threads)
        for eps, est in zip(rep.eps, rep.estimates):
            res.add_estimate("limit_moment", est, eps, t, req.n)
        ratio_err = None
        if cfg.kernel().d == 2:
            # exponent-form identity on the finest rung's own samples
            fine = replace(req, eps=rep.eps[-1], mc=replace(req.mc, n_steps=rep.n_steps[-1]))
            rseed = derive_seed(req.mc.master_seed, len(rep.eps) - 1)
            a = fk_moment(fine, "C", threads, rseed)
            ratio_err = abs(a.mean / rep.estimates[-1].mean / form_ratio(fine) - 1.0)
        out[repr(t)] = {"z": list(rep.z), "verdict": rep.verdict, "bound": rep.bound,
                        "n_steps": list(rep.n_steps), "form_ratio_error": ratio_err}
        verdict &= rep.verdict == "PASS" and (ratio_err is None or ratio_err <= 1e-12)
    return {"ladders": out, "verdict": "PASS" if verdict else "FAIL"}


def run_exp_moment(cfg, res, seed, threads):
    k = cfg.kernel()
    lam = cfg["exp.lambda"]
    out, verdict, cell = {}, True, 0
    for which in cfg["exp.which"]:
        if which not in ("X", "Y"):
            raise ConfigError(f"exp.which entries must be X or Y, got {which!r}")
        ests = []
        for eps in cfg["eps_list"]:
            est = exp_moment(which, lam, k, eps, cfg.mc(derive_seed(seed, cell)), threads)
            cell += 1
            res.add_estimate(f"exp_{which}", est, eps, 1.0)
            ests.append(est)
        means = [e.mean for e in ests]
        ratio = max(means) / min(means) if min(means) > 0 else math.inf
        tails = any(HEAVY_TAIL in e.warnings for e in ests)
        ok = ratio <= cfg["exp.max_ratio"] and not tails
        out[which] = {"ratio": ratio, "heavy_tail": tails, "verdict": "PASS" if ok else "FAIL"}
        verdict &= ok
    return {"lambda": lam, "sweeps": out, "verdict": "PASS" if verdict else "FAIL"}


def scaling_ks(k, eps, t, samples, n_steps, seed, which="beta"):
    """KS p-value for F([0, t]) against t F_{eps / sqrt t}([0, 1]) on equal step counts."""
    def draw(tm, e, stream):
        if which == "beta":
            P = sample_batch(k.d, tm, n_steps, derive_seed(seed, stream), np.arange(samples))
            return beta_batch(P, k, e, tm)
        s = derive_seed(seed, stream)
        P = sample_batch(k.d, tm, n_steps, s, 2 * np.arange(samples))
        Q = sample_batch(k.d, tm, n_steps, s, 2 * np.arange(samples) + 1)
        return alpha_batch(P, Q, k, e, tm)
    lhs = draw(t, eps, 0)
    rhs = t * draw(1.0, eps / math.sqrt(t), 1)
    return float(stats.ks_2samp(lhs, rhs).pvalue), lhs, rhs


def box_correlations(k, eps, level, M, n_steps, seed):
    """Max |corr| between distinct boxes of one level, and the 4/sqrt(M) band."""
    P = sample_batch(k.d, 1.0, n_steps, seed, np.arange(M))
    vals = np.column_stack([box_batch(P, DyadicBox(level, l), k, eps) for l in range(2 ** level)])
    c = np.corrcoef(vals, rowvar=False)
    off = c[~np.eye(len(c), dtype=bool)]
    return float(np.max(np.abs(off))), 4.0 / math.sqrt(M)


def box_law_ks(k, eps, level, samples, n_steps, seed):
    """KS p-value for 2^(k+1) beta(A_0^k) against alpha at eps 2^((k+1)/2) (d = 2)."""
    if k.d != 2:
        raise InputError("the box law identity holds for d = 2")
    scale = 2 ** (level + 1)
    if n_steps % scale:
        raise InputError("n_steps must be divisible by 2^(level+1)")
    P = sample_batch(2, 1.0, n_steps, derive_seed(seed, 0), np.arange(samples))
    lhs = scale * box_batch(P, DyadicBox(level, 0), k, eps)
    s = derive_seed(seed, 1)
    m = n_steps // scale
    A = sample_batch(2, 1.0, m, s, 2 * np.arange(samples))
    B = sample_batch(2, 1.0, m, s, 2 * np.arange(samples) + 1)
    rhs = alpha_batch(A, B, k, eps * 2 ** ((level + 1) / 2), 1.0)
    return float(stats.ks_2samp(lhs, rhs).pvalue)


def run_ilt_props(cfg, res, seed, threads):
    k = cfg.kernel()
    eps, t = cfg["eps_list"][0], cfg["t_list"][0]
    samples, level, pmin = cfg["ilt.samples"], cfg["ilt.level"], cfg["ilt.p_min"]
    steps = cfg["mc.n_steps"] or default_steps(t, eps)
    out = {}
    for c, which in enumerate(("beta", "alpha")):
        p, _, _ = scaling_ks(k, eps, t, samples, steps, derive_seed(seed, c), which)
        res.add(f"ks_scaling_{which}", eps, t, mean=p, n_samples=samples)
        out[f"ks_scaling_{which}"] = p
    scale = 2 ** (level + 1)
    n1 = cfg["mc.n_steps"] or default_steps(1.0, eps)
    n1 = scale * math.ceil(n1 / scale)
    M = cfg["mc.n_paths"]
    cmax, band = box_correlations(k, eps, level, M, n1, derive_seed(seed, 2))
    res.add("box_corr_max", eps, 1.0, mean=cmax, stderr=band / 4, n_samples=M)
    out["box_corr_max"], out["box_corr_band"] = cmax, band
    ok = cmax <= band and out["ks_scaling_beta"] > pmin and out["ks_scaling_alpha"] > pmin
    if k.d == 2:
        p = box_law_ks(k, eps, level, samples, n1, derive_seed(seed, 3))
        res.add("ks_box_law", eps, 1.0, mean=p, n_samples=samples)
        out["ks_box_law"] = p
        ok &= p > pmin
    area = sum(b.area for b in triangle_boxes(10))
    area_err = abs(area - 0.5 * (1 - 2.0 ** -11))
    res.add("box_area_level10", mean=area)
    out["box_area_error"] = area_err
    ok &= area_err <= 1e-12
    out["verdict"] = "PASS" if ok else "FAIL"
    return out


def run_xval(cfg, res, seed, threads):
    k = cfg.kernel()
    d = k.d
    if d not in (1, 2):
        raise ConfigError("xval supports dimension 1 or 2")
    n = cfg["n"]
    x = np.zeros(d) if cfg.point() is None else np.asarray(cfg.point())
    out, verdict, cell = {}, True, 0
    for t in cfg["t_list"]:
        for eps in cfg["eps_list"]:
            h = cfg["xval.h"] or min(0.05 if d == 1 else 0.1, eps / 3)
            L = cfg["xval.extent"] or h * math.ceil(required_extent(x, t, eps) / h - 1e-9)
            req = _request(cfg, t, eps, derive_seed(seed, 2 * cell))
            if cfg["mc.n_steps"] is None:
                # finer grid than the Monte Carlo default: the strict-simplex bias
                # t dt R_eps(0) / 2 would otherwise show at this sample size
                steps = math.ceil(XVAL_STEPS_PER_EPS2 * t / eps ** 2 - 1e-9)
                req = replace(req, mc=replace(req.mc, n_steps=max(1, steps)))
            a = fk_moment(req, threads=threads)
            b = noise_mc_moment(n, t, x, eps, k, cfg.mc(derive_seed(seed, 2 * cell + 1)),
                                PdeParams(h, L, cfg["xval.dt"]), u0=cfg.u0(),
                                renorm=req.renorm_spec, threads=threads)
            rep = cross_validate(a, b)
            res.add_estimate("fk_moment", a, eps, t, n)
            res.add_estimate("pde_moment", b, eps, t, n)
            out[f"eps={eps!r},t={t!r}"] = {"z": rep.z, "verdict": rep.verdict, "h": h, "extent": L}
            verdict &= rep.verdict == "PASS"
            cell += 1
    return {"cells": out, "verdict": "PASS" if verdict else "FAIL"}


def run_explosion(cfg, res, seed, threads):
    k = cfg.kernel()
    out, verdict = {}, True
    for c, t in enumerate(cfg["t_list"]):
        tab = explosion_probe(k.d, t, cfg["eps_list"], k, cfg.mc(derive_seed(seed, c)),
                              renorm=cfg.renorm(k), c_prime=cfg["explosion.c_prime"],
                              delta_hat=cfg["explosion.delta_hat"], with_mc=cfg["explosion.mc"],
                              threads=threads)
        for row in tab.rows:
            res.add("log_lower_bound", row.eps, t, 1, mean=row.log_lower_bound)
            if row.mc is not None:
                res.add_estimate("explosion_mc", row.mc, row.eps, t, 1)
        out[repr(t)] = {"delta_hat": tab.delta_hat, "c_prime": tab.c_prime,
                        "lower_bound_increasing": tab.lower_bound_increasing,
                        "growth": [r.growth for r in tab.rows[1:]],
                        "mc_z": list(tab.mc_z), "mc_stable": tab.mc_stable}
    # the lower bound is expected to grow only above 2 c' / delta_hat in d = 2
    for t_key, rep in out.items():
        expect_growth = k.d == 3 or float(t_key) > 2 * rep["c_prime"] / rep["delta_hat"]
        rep["growth_expected"] = expect_growth
        if expect_growth:
            verdict &= rep["lower_bound_increasing"]
        if rep["mc_stable"] is not None and not expect_growth:
            verdict &= rep["mc_stable"]
    return {"times": out, "verdict": "PASS" if verdict else "FAIL"}


RUNNERS = {
    "lemma-check": run_lemma_check,
    "fk-moment": run_fk_moment,
    "limit-moment": run_limit_moment,
    "exp-moment": run_exp_moment,
    "ilt-props": run_ilt_props,
    "xval": run_xval,
    "explosion": run_explosion,
}


# --------------------------------------------------------------------------
# entry point

def _write(out: Path, summary, results: Results | None, echo: str | None):
    out.mkdir(parents=True, exist_ok=True)
    if results is not None:
        (out / "results.csv").write_text(results.text(), encoding="utf-8")
    if echo is not None:
        (out / "config.echo").write_text(echo, encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")


def run_experiment(subcommand, cfg: ExperimentConfig, out=None, seed=None, threads=None):
    """Run one subcommand and write its outputs; returns the exit status."""
    seed = cfg["master_seed"] if seed is None else seed
    out = Path(out or cfg["output_dir"])
    base = {"subcommand": subcommand, "version": __version__, "backend": _backend.BACKEND,
            "master_seed": seed}
    results = Results()
    try:
        summary = RUNNERS[subcommand](cfg, results, seed, threads)
    except ConfigError as exc:
        status, err = EXIT_CONFIG, exc
    except NumericalFailure as exc:
        status, err = EXIT_NUMERICAL, exc
    except InputError as exc:
        status, err = EXIT_CONFIG, exc
    else:
        verdict = summary.get("verdict")
        status = EXIT_ACCEPTANCE if verdict == "FAIL" else EXIT_OK
        _write(out, {**base, "status": "ok" if status == EXIT_OK else "acceptance-failure",
                     **summary}, results, cfg.source)
        return status
    _write(out, {**base, "status": "error",
                 "error": {"type": type(err).__name__, "message": str(err)}}, None, cfg.source)
    return status


def main(argv=None):
    parser = argparse.ArgumentParser(prog="pamfk", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="experiment config file")
    parser.add_argument("--seed", type=int, help="override master_seed")
    parser.add_argument("--out", help="override output_dir")
    parser.add_argument("--threads", type=int, help="worker threads (default $PAMFK_THREADS or 1)")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        print(f"pamfk: {exc}", file=sys.stderr)
        out = Path(args.out or "out")
        _write(out, {"subcommand": args.subcommand, "version": __version__, "status": "error",
                     "error": {"type": "ConfigError", "message": str(exc), "line": exc.line}},
               None, None)
        return EXIT_CONFIG
    status = run_experiment(args.subcommand, cfg, args.out, args.seed, args.threads)
    if status == EXIT_ACCEPTANCE:
        print("pamfk: acceptance check failed; see summary.json", file=sys.stderr)
    elif status != EXIT_OK:
        print("pamfk: run failed; see summary.json", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
