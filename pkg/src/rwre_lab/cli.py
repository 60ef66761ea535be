"""Reproducible experiment runner.

Usage:
    rwre-lab <experiment> --config cfg.json [--seed N] [--out DIR]
    rwre-lab summary report.json [report.json ...]

The config file is the source of truth for every run; the only flag
overrides are the seed and the output directory.  Every output file echoes
the config hash and seed, and reruns of the same config are byte-identical
regardless of worker count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import ballisticity as bal
from . import kalikow as kal
from . import monte_carlo as mc
from .env_model import (
    SignedAxisKickLaw,
    check_k_conditions,
    law_from_dict,
    law_moments,
)
from .exact_solver import exit_distribution, green_operator, green_row
from .lattice import build_region
from .reporting import config_hash, read_json, write_csv, write_json, write_plotdata

EXPERIMENTS = (
    "moments", "green", "kalikow-drift", "eps-k", "theorem2", "theorem3",
    "condition-p", "prop31", "fluctuations", "rho", "velocity", "freedman",
)


class ConfigError(ValueError):
    pass


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing required key {key!r}")
    return cfg[key]


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config parse error in {path} at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}")


def _law(cfg: dict):
    law = law_from_dict(_require(cfg, "law"))
    if law.d < 2:
        raise ConfigError("model requires d >= 2")
    return law


def _region(cfg: dict, d: int):
    spec = _require(cfg, "region")
    return build_region(_require(spec, "kind"), spec, d)


class _Run:
    """Collects report payload and tables for one experiment run."""

    def __init__(self, kind: str, cfg: dict, seed: int, out_dir: str):
        self.kind = kind
        self.cfg = cfg
        self.seed = seed
        self.out_dir = out_dir
        self.hash = config_hash({**cfg, "seed": seed})
        self.report = {
            "experiment": kind,
            "seed": seed,
            "config_hash": self.hash,
        }
        self.meta = f"config_hash={self.hash} seed={seed}"

    def csv(self, name: str, header, rows):
        path = os.path.join(self.out_dir, name)
        write_csv(path, header, rows, meta=self.meta)
        return path

    def plotdata(self, name: str, xs, ys):
        path = os.path.join(self.out_dir, name)
        write_plotdata(path, xs, ys, meta=self.meta)
        return path

    def finish(self) -> str:
        path = os.path.join(self.out_dir, "report.json")
        write_json(path, self.report)
        return path


# ---------------------------------------------------------------------------
# Experiment runners
# ---------------------------------------------------------------------------


def _run_moments(run: _Run):
    law = _law(run.cfg)
    mom = law_moments(law)
    run.report["law"] = law.to_dict()
    run.report["moments"] = mom.to_dict()
    if "rho" in run.cfg:
        rep = check_k_conditions(law, float(run.cfg["rho"]),
                                 float(run.cfg.get("eps0", 0.5)))
        run.report["k_conditions"] = rep.to_dict()


def _run_green(run: _Run):
    law = _law(run.cfg)
    region = _region(run.cfg, law.d)
    x = tuple(run.cfg.get("source", [0] * law.d))
    tol = float(run.cfg.get("tol", 1e-10))
    env_seed = int(run.cfg.get("env_seed", run.seed))
    from .env_model import sample_environment
    env = sample_environment(law, seed=env_seed)
    table = green_row(env, region, x, tol=tol)
    run.csv("green_row.csv",
            [f"y{k + 1}" for k in range(law.d)] + ["green_value"],
            [list(map(int, s)) + [float(v)] for s, v in zip(table.sites, table.values)])
    dist = exit_distribution(env, region, x, tol=tol)
    run.csv("exit_distribution.csv",
            [f"y{k + 1}" for k in range(law.d)] + ["probability"],
            [list(map(int, s)) + [float(m)] for s, m in zip(dist.sites, dist.masses)])
    ones = np.ones(region.interior_count())
    run.report.update({
        "law": law.to_dict(),
        "region": region.descriptor(),
        "source": list(x),
        "env_seed": env_seed,
        "green_at_source": table.value_at(x),
        "green_total": table.total(),
        "achieved_tol": table.achieved_tol,
        "exit_total_mass": dist.total(),
        "frontal_mass": dist.frontal_mass() if region.has_frontal else None,
        "green_operator_ones": green_operator(env, region, ones, x, tol=tol),
    })


def _run_kalikow_drift(run: _Run):
    law = _law(run.cfg)
    region = _region(run.cfg, law.d)
    x = tuple(run.cfg.get("x", [0] * law.d))
    y = tuple(run.cfg.get("y", [0] * law.d))
    n_env = int(run.cfg.get("n_env", 2000))
    method = run.cfg.get("method", "auto")
    rep_def = kal.kalikow_drift(law, region, x, y, n_env=n_env,
                                seed=run.seed, method=method)
    rep_form = kal.kalikow_drift_formula(law, region, x, y, n_env=n_env,
                                         seed=run.seed + 1, method=method)
    kenv = kal.kalikow_environment(law, region, x, n_env=n_env,
                                   seed=run.seed, method=method)
    from .env_model import direction_labels
    labels = direction_labels(law.d)
    header = [f"y{k + 1}" for k in range(law.d)]
    for lbl in labels:
        header += [f"w({lbl})", f"se({lbl})"]
    rows = []
    for i, s in enumerate(kenv.sites):
        row = list(map(int, s))
        for e in range(2 * law.d):
            row += [float(kenv.ratios[i, e]), float(kenv.ratio_se[i, e])]
        rows.append(row)
    run.csv("kalikow_environment.csv", header, rows)
    run.report.update({
        "law": law.to_dict(),
        "region": region.descriptor(),
        "x": list(x), "y": list(y), "n_env": n_env,
        "definition_route": rep_def.to_dict(),
        "formula_route": rep_form.to_dict(),
        "routes_agree_within_3se": bool(
            abs(rep_def.drift_e1 - rep_form.drift_e1)
            <= 3 * float(np.hypot(rep_def.se[0], rep_form.se[0])) + 1e-9),
    })


def _eps_k_family(cfg: dict) -> kal.EpsKFamilySpec:
    fam = cfg.get("family", {})
    return kal.EpsKFamilySpec(
        box_k_max=int(fam.get("box_k_max", 3)),
        slab_L_max=int(fam.get("slab_L_max", 4)),
        halfspace_N_max=int(fam.get("halfspace_N_max", 8)),
        n_clusters=int(fam.get("n_clusters", 15)),
        cluster_size_cap=int(fam.get("cluster_size_cap", 20)),
        cluster_seed=int(fam.get("cluster_seed", 12345)),
    )


def _eps_k_csv(run: _Run, report: kal.EpsKReport):
    run.csv("eps_k_sets.csv",
            ["label", "n_sites", "min_lcb", "min_ucb", "min_estimate",
             "argmin_site", "exact"],
            [[s.label, s.n_sites, s.min_lcb, s.min_ucb, s.min_estimate,
              " ".join(map(str, s.argmin_site)), s.exact]
             for s in report.sets])


def _run_eps_k(run: _Run):
    law = _law(run.cfg)
    n_env = int(run.cfg.get("n_env", 800))
    report = kal.estimate_eps_k(law, _eps_k_family(run.cfg),
                                n_env=n_env, seed=run.seed)
    _eps_k_csv(run, report)
    run.report.update({"law": law.to_dict(), "eps_k": report.to_dict()})


def _run_theorem2(run: _Run):
    law = _law(run.cfg)
    mom = law_moments(law)
    threshold = 4 * law.d * mom.sigma2 * (1 + 9 * mom.eps)
    n_env = int(run.cfg.get("n_env", 800))
    probe = kal.estimate_eps_k(law, _eps_k_family(run.cfg),
                               n_env=n_env, seed=run.seed)
    _eps_k_csv(run, probe)
    run.report.update({
        "law": law.to_dict(),
        "moments": mom.to_dict(),
        "drift_threshold": threshold,
        "drift_exceeds_threshold": bool(mom.lam > threshold),
        "eps_k": probe.to_dict(),
        "verdict": probe.verdict,
    })


def _run_theorem3(run: _Run):
    law = _law(run.cfg)
    report = kal.theorem3_experiment(
        law, float(_require(run.cfg, "rho")),
        N_list=tuple(run.cfg.get("N_list", (10, 20, 30))),
        n_env=int(run.cfg.get("n_env", 4000)),
        seed=run.seed,
        eps0=float(run.cfg.get("eps0", 0.5)),
        force=bool(run.cfg.get("force", False)),
    )
    run.csv("halfspace_drift.csv",
            ["sign", "N", "n_sites", "drift_e1", "se_e1"]
            + [f"drift_e{k + 1}" for k in range(1, law.d)]
            + [f"se_e{k + 1}" for k in range(1, law.d)],
            [[r.sign, r.N, r.n_sites, float(r.drift[0]), float(r.se[0])]
             + [float(v) for v in r.drift[1:]] + [float(v) for v in r.se[1:]]
             for r in report.rows])
    run.report.update({"law": law.to_dict(), "theorem3": report.to_dict()})


def _run_condition_p(run: _Run):
    law = _law(run.cfg)
    Ms = run.cfg.get("M_list") or [_require(run.cfg, "M")]
    n_per_site = int(run.cfg.get("n_per_site", 10000))
    site_cap = int(run.cfg.get("site_cap", 64))
    reports = []
    for j, M in enumerate(Ms):
        rep = bal.condition_p_probe(law, int(M), n_per_site=n_per_site,
                                    site_cap=site_cap,
                                    seed=run.seed if len(Ms) == 1 else run.seed + j)
        reports.append(rep)
        suffix = "" if len(Ms) == 1 else f"_M{M}"
        run.csv(f"condition_p_starts{suffix}.csv",
                [f"x{k + 1}" for k in range(law.d)] + ["p_hat", "se", "n", "hits"],
                [list(map(int, s.site)) + [s.p_hat, s.se, s.n, s.hits]
                 for s in rep.starts])
    run.plotdata("exit_probability_vs_M.txt",
                 [r.M for r in reports], [r.sup_estimate for r in reports])
    run.report.update({
        "law": law.to_dict(),
        "probes": [r.to_dict() for r in reports],
    })


def _run_prop31(run: _Run):
    law = _law(run.cfg)
    stats = bal.mean_drift_green_check(
        law, int(_require(run.cfg, "L")), int(_require(run.cfg, "W")),
        int(run.cfg.get("n_env", 500)), seed=run.seed)
    if stats.distribution is not None:
        run.csv("drift_green_samples.csv", ["env_seed", "value"],
                [[s, float(v)] for s, v in
                 zip(stats.distribution.seeds, stats.distribution.samples)])
    run.report.update({"law": law.to_dict(), "drift_green": stats.to_dict()})


def _run_fluctuations(run: _Run):
    base = _require(run.cfg, "law")
    if base.get("family") != "signed_axis_kick":
        raise ConfigError("fluctuation scans sweep the signed_axis_kick amplitude")
    d = int(base["d"])
    shift = float(base.get("lambda_shift", 0.0))
    amplitudes = [float(a) for a in _require(run.cfg, "amplitudes")]
    scan = bal.fluctuation_scan(
        lambda a: SignedAxisKickLaw(d, a, shift), amplitudes,
        int(_require(run.cfg, "L")), int(_require(run.cfg, "W")),
        int(run.cfg.get("n_env", 2000)), float(run.cfg.get("alpha", 2.0 / 3.0)),
        seed=run.seed)
    run.csv("fluctuation_scan.csv",
            ["amplitude", "sigma2", "mean", "variance", "n_env"],
            [[r.amplitude, r.sigma2, r.mean, r.variance, r.n_env] for r in scan.rows])
    run.plotdata("variance_vs_amplitude.txt",
                 [r.amplitude for r in scan.rows], [r.variance for r in scan.rows])
    run.report.update({"fluctuations": scan.to_dict()})


def _run_rho(run: _Run):
    law = _law(run.cfg)
    stats = bal.rho_statistics(
        law, float(_require(run.cfg, "theta")), float(_require(run.cfg, "eta")),
        int(run.cfg.get("n_env", 100)), seed=run.seed,
        L=run.cfg.get("L"),
        lateral_cap=run.cfg.get("lateral_cap"),
        subgrid_halfwidth=run.cfg.get("subgrid_halfwidth"),
        slab_W=run.cfg.get("slab_W"),
        allow_subsample=bool(run.cfg.get("allow_subsample", True)))
    run.csv("rho_samples.csv",
            ["index", "q_B", "rho_B", "rho_hat", "g_drift_origin"],
            [[i, float(q), float(r), float(rh), float(g)]
             for i, (q, r, rh, g) in enumerate(zip(
                 stats.q_samples, stats.rho_samples,
                 stats.rho_hat_samples, stats.g_origin_samples))])
    run.report.update({"law": law.to_dict(), "rho": stats.to_dict()})


def _run_velocity(run: _Run):
    law = _law(run.cfg)
    est = mc.estimate_velocity(law, int(_require(run.cfg, "n_steps")),
                               int(_require(run.cfg, "n_walks")), seed=run.seed)
    mom = law_moments(law)
    b2_radius = (4 * law.d + 1) * mom.sigma2
    run.report.update({
        "law": law.to_dict(),
        "velocity": est.to_dict(),
        "lambda": mom.lam,
        "b2_radius": b2_radius,
        "within_b2_bound": bool(abs(est.mean - mom.lam) <= b2_radius + 4 * est.se),
    })


def _run_freedman(run: _Run):
    points = run.cfg.get("points", [])
    rows = []
    for p in points:
        value = bal.freedman_bound(u=float(p["u"]), b=float(p["b"]),
                                   sum_v2=float(p["sum_v2"]))
        rows.append([float(p["u"]), float(p["b"]), float(p["sum_v2"]), value])
    if rows:
        run.csv("freedman_bounds.csv", ["u", "b", "sum_v2", "bound"], rows)
    run.report["bounds"] = [
        {"u": r[0], "b": r[1], "sum_v2": r[2], "bound": r[3]} for r in rows]
    tail = run.cfg.get("tail_test")
    if tail:
        rep = bal.martingale_tail_test(
            tail.get("increment", "plusminus"), int(tail["n"]),
            [float(u) for u in tail["u_grid"]], int(tail["n_paths"]),
            seed=run.seed, b=float(tail.get("b", 1.0)))
        run.csv("martingale_tails.csv",
                ["u", "bound", "upper_freq", "lower_freq",
                 "se_upper", "se_lower", "within_bound"],
                [[r.u, r.bound, r.upper_freq, r.lower_freq,
                  r.se_upper, r.se_lower, r.within_bound] for r in rep.rows])
        run.report["tail_test"] = rep.to_dict()


_RUNNERS = {
    "moments": _run_moments,
    "green": _run_green,
    "kalikow-drift": _run_kalikow_drift,
    "eps-k": _run_eps_k,
    "theorem2": _run_theorem2,
    "theorem3": _run_theorem3,
    "condition-p": _run_condition_p,
    "prop31": _run_prop31,
    "fluctuations": _run_fluctuations,
    "rho": _run_rho,
    "velocity": _run_velocity,
    "freedman": _run_freedman,
}


def run(kind: str, config_path: str, seed: int | None = None,
        out_dir: str | None = None) -> str:
    """Execute one experiment; returns the report path."""
    cfg = _load_config(config_path)
    declared = cfg.get("experiment")
    if declared is not None and declared != kind:
        raise ConfigError(
            f"config declares experiment {declared!r} but {kind!r} was requested")
    use_seed = int(seed if seed is not None else cfg.get("seed", 0))
    use_out = out_dir or cfg.get("out") or os.path.join("out", kind)
    runner = _RUNNERS[kind]
    r = _Run(kind, cfg, use_seed, use_out)
    runner(r)
    return r.finish()


# ---------------------------------------------------------------------------
# Summary
# ---------------------------------------------------------------------------


def _summary_line(report: dict) -> str:
    kind = report.get("experiment", "?")
    if kind == "moments":
        m = report["moments"]
        return (f"eps={m['eps']:.6g} sigma2={m['sigma2']:.6g} "
                f"lambda={m['lambda']:.6g}")
    if kind == "green":
        return (f"g(x,x)={report['green_at_source']:.9g} "
                f"sum={report['green_total']:.9g} "
                f"frontal={report['frontal_mass']}")
    if kind == "kalikow-drift":
        a = report["definition_route"]["drift"][0]
        b = report["formula_route"]["drift"][0]
        agree = "agree" if report["routes_agree_within_3se"] else "DISAGREE"
        return f"drift.e1 definition={a:.6g} formula={b:.6g} ({agree})"
    if kind in ("eps-k", "theorem2"):
        probe = report["eps_k"]
        line = (f"min drift.e1 LCB={probe['global_min_lcb']:.6g} over "
                f"{len(probe['sets'])} sets -> {probe['verdict']}")
        if kind == "theorem2":
            m = report["moments"]
            line = (f"lambda={m['lambda']:.4g} vs 4*d*sigma2*(1+9*eps)="
                    f"{report['drift_threshold']:.4g} -> "
                    f"Kalikow evidence: "
                    f"{'positive' if report['verdict'] == 'positive-evidence' else report['verdict']}"
                    f" | {line}")
        return line
    if kind == "theorem3":
        t = report["theorem3"]
        rows = t["rows"]
        last = {r["sign"]: r for r in rows if r["N"] == max(x["N"] for x in rows)}
        return (f"drift.e1 U+={last[1]['drift'][0]:+.3e} "
                f"U-={last[-1]['drift'][0]:+.3e} -> {t['verdict']}")
    if kind == "condition-p":
        parts = []
        for p in report["probes"]:
            parts.append(
                f"M={p['M']}: sup={p['sup_estimate']:.4g} vs threshold "
                f"M^-{p['threshold_exponent']} -> {p['verdict']}"
                f" (log_M0={p['log_m0']:.4f}, below M0: {p['below_m0']})")
        return "; ".join(parts)
    if kind == "prop31":
        g = report["drift_green"]
        ok = "holds" if g["bound_holds_with_ci"] else "FAILS"
        return (f"mean={g['mean']:.4g} lower_cb={g['lower_cb']:.4g} vs "
                f"bound={g['bound']:.4g} -> {ok}")
    if kind == "fluctuations":
        f = report["fluctuations"]
        return (f"variance slope={f['slope']:.3f} ratios="
                f"{[round(r, 2) for r in f['ratios']]} c_alpha={f['c_alpha']:.4g}")
    if kind == "rho":
        r = report["rho"]
        return (f"L={r['L']} M={r['M']} lambda0={r['lambda0']:.4g} "
                f"q_mean={r['q_mean']:.4g} rho_hat_max={r['rho_hat_max']:.4g} "
                f"p_hat={r['p_hat']:.4g}")
    if kind == "velocity":
        v = report["velocity"]
        ok = "within" if report["within_b2_bound"] else "OUTSIDE"
        return (f"v.e1={v['mean']:.6g} (se {v['se']:.2g}) vs lambda="
                f"{report['lambda']:.6g}, {ok} drift+variance bound")
    if kind == "freedman":
        n = len(report.get("bounds", []))
        tail = report.get("tail_test")
        msg = f"{n} bound value(s)"
        if tail:
            msg += f"; tails within bound: {tail['all_within']}"
        return msg
    return "(no summary)"


def emit_summary(report_paths: list[str], stream=None) -> None:
    """Print a one-line verdict per report file."""
    stream = stream or sys.stdout
    if not report_paths:
        raise ConfigError("no report files given")
    rows = []
    for path in report_paths:
        try:
            report = read_json(path)
        except FileNotFoundError:
            raise ConfigError(f"report file not found: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"corrupt report file {path}: {exc.msg}")
        rows.append((report.get("experiment", "?"), report.get("seed", "?"),
                     report.get("config_hash", "?"), _summary_line(report)))
    width = max(len(r[0]) for r in rows)
    for kind, seed, hsh, line in rows:
        stream.write(f"{kind:<{width}}  seed={seed}  cfg={hsh}  {line}\n")


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rwre-lab",
        description="Random-walk-in-random-environment numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENTS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
    s = sub.add_parser("summary", help="summarize report files")
    s.add_argument("reports", nargs="+", help="report.json paths")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "summary":
            emit_summary(args.reports)
        else:
            path = run(args.command, args.config, seed=args.seed, out_dir=args.out)
            print(f"report written to {path}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
