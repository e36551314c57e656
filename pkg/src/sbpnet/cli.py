"""Command-line interface.

Every subcommand takes a network: a YAML/JSON file or one of the built-in
pilots ``2s5c``, ``priority`` and ``mm1``.  Numbers go to stdout (or
``--out``) as CSV with columns ``estimator,value,std_error,batches``; a short
human summary goes to stderr.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from . import pilots
from .analysis import analyze
from .ctmc import exact_functionals, solve_ctmc
from .network import NetworkError, load_network, network_to_dict
from .sim import simulate
from .srbm import simulate_srbm
from .verify import (
    AnalysisFailed,
    abar_residual,
    palm_identity_check,
    rows_to_csv,
    run_sweep,
    ssc_diagnostics,
)

PILOTS = {
    "2s5c": lambda: (pilots.reentrant_2s5c(), pilots.reentrant_2s5c_family()),
    "priority": lambda: (pilots.priority_station(), None),
    "mm1": lambda: (pilots.single_class(), pilots.single_class_family()),
}


def _load(name):
    if name in PILOTS:
        return PILOTS[name]()
    return load_network(name)


def _need_family(fam, name):
    if fam is None:
        raise SystemExit(f"error: {name} has no heavy_traffic section")
    return fam


def _network(args):
    net, fam = _load(args.network)
    if getattr(args, "r", None) is not None:
        net = _need_family(fam, args.network).instantiate_at(args.r)
    return net, fam


def _emit(args, rows, summary):
    text = rows_to_csv(rows)
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    for line in summary:
        print(line, file=sys.stderr)


def _vec_rows(prefix, est, labels=None):
    v = np.atleast_1d(est.value)
    s = np.atleast_1d(est.std_error)
    labels = labels or [str(i + 1) for i in range(len(v))]
    return [(f"{prefix}{lab}", a, b, est.batches) for lab, a, b in zip(labels, v, s)]


def cmd_analyze(args):
    _, fam = _load(args.network)
    rep = analyze(_need_family(fam, args.network))
    d = rep.reflection
    rows = []
    L = [l + 1 for l in d.L]
    for i, a in enumerate(L):
        for j, c in enumerate(L):
            rows.append((f"R[{a},{c}]", d.R[i, j], 0.0, 0))
    if rep.diffusion is not None:
        for i, a in enumerate(L):
            for j, c in enumerate(L):
                rows.append((f"Sigma[{a},{c}]", rep.diffusion.Sigma[i, j], 0.0, 0))
    for i, a in enumerate(L):
        rows.append((f"b[{a}]", rep.b[i], 0.0, 0))
    summary = [
        f"L = {L}, H = {[h + 1 for h in d.H]}",
        f"completely-S: {rep.completely_S}   M-matrix: {rep.M_matrix}",
        f"tight: {rep.tight.verdict if rep.tight else 'not checked'}   Sigma positive definite: {rep.sigma_pd}",
        "all checks passed" if rep.ok else "FAILED: " + "; ".join(rep.failures),
    ]
    _emit(args, rows, summary)
    return 0 if rep.ok else 1


def cmd_simulate(args):
    net, _ = _network(args)
    st = simulate(net, args.horizon, warmup=args.warmup, seed=args.seed, batches=args.batches)
    arr, srv = st.event_rates()
    rows = (_vec_rows("E[Z", st.mean(), [f"{k + 1}]" for k in range(net.K)])
            + _vec_rows("beta", st.beta())
            + _vec_rows("busy", st.busy_fraction())
            + [row for k, row in enumerate(_vec_rows("arrival_rate", arr)) if net.lam[k] > 0]
            + _vec_rows("completion_rate", srv))
    tr = net.traffic
    summary = [f"rho = {np.round(tr.rho, 4).tolist()}",
               f"beta (exact) = {np.round(tr.beta, 4).tolist()}",
               f"beta (sim)   = {np.round(st.beta().value, 4).tolist()}"]
    _emit(args, rows, summary)
    return 0


def cmd_oracle(args):
    net, _ = _network(args)
    c = solve_ctmc(net, args.cap)
    theta = np.asarray(args.theta, dtype=float) if args.theta else None
    f = exact_functionals(c, theta=theta, max_z=args.max_z)
    rows = [(f"E[Z{k + 1}]", f["mean"][k], 0.0, 0) for k in range(net.K)]
    rows += [(f"beta{k + 1}", f["beta"][k], 0.0, 0) for k in range(net.K)]
    for k in range(net.K):
        rows += [(f"P(Z{k + 1}={z})", f["marginal"][k, z], 0.0, 0) for z in range(args.max_z + 1)]
    if theta is not None:
        rows.append(("phi", f["phi"], 0.0, 0))
    _emit(args, rows, [f"{c.num_states} states, boundary mass {f['boundary_mass']:.3g}"])
    return 0


def cmd_srbm(args):
    _, fam = _load(args.network)
    rep = analyze(_need_family(fam, args.network))
    if not rep.ok:
        print("FAILED: " + "; ".join(rep.failures), file=sys.stderr)
        return 1
    st = simulate_srbm(rep.srbm(), h=args.h, horizon=args.horizon, seed=args.seed,
                       batches=args.batches)
    L = [f"{l + 1}]" for l in rep.reflection.L]
    rows = _vec_rows("E[W", st.mean(), L) + _vec_rows("pushing_rate", st.pushing_rate())
    _emit(args, rows, [f"step {st.h:g}, violations {int(st.violations.sum())}"])
    return 0


def cmd_sweep(args):
    _, fam = _load(args.network)
    try:
        rep = run_sweep(_need_family(fam, args.network), args.r_grid, budget=args.budget,
                        seed=args.seed, srbm=not args.no_srbm, srbm_h=args.h,
                        srbm_horizon=args.srbm_horizon)
    except AnalysisFailed as e:
        print(f"FAILED: {e}", file=sys.stderr)
        return 1
    summary = [f"r={row.r:g}: rE[Z_L]={np.round(row.mean_L.value, 4).tolist()} "
               f"rE[Z_H]={row.mean_H.value:.4f}" for row in rep.rows]
    if rep.srbm_mean is not None:
        summary.append(f"SRBM: E[W]={np.round(rep.srbm_mean.value, 4).tolist()}")
    _emit(args, rep.to_rows(), summary)
    return 0


def cmd_abar(args):
    _, fam = _load(args.network)
    fam = _need_family(fam, args.network)
    th = np.asarray(args.theta_l, dtype=float).reshape(-1, len(analyze(fam).reflection.L))
    res = abar_residual(fam, th, args.r_grid, budget=args.budget, seeds=range(args.seeds))
    rows = []
    for d in res:
        tag = ",".join(f"{t:g}" for t in d["theta"])
        rows.append((f"r={d['r']:g}:theta=({tag})", d["residual_over_r2"], d["std_error"],
                     len(d["per_seed"])))
    _emit(args, rows, [f"{len(res)} residuals / r^2"])
    return 0


def cmd_palm(args):
    net, _ = _network(args)
    oracle = solve_ctmc(net, args.cap) if args.cap else None
    c = math.inf if args.c is None else args.c
    d = palm_identity_check(net, args.k - 1, args.n, c=c, horizon=args.horizon, seed=args.seed,
                            oracle=oracle)
    rows = [("left", d["left"], d["left_se"], d["batches"]),
            ("right", d["right"], d["right_se"], d["batches"])]
    if "left_exact" in d:
        rows.append(("left_exact", d["left_exact"], 0.0, 0))
    gap = abs(d["left"] - d["right"]) / d["pooled_se"]
    _emit(args, rows, [f"|left - right| = {gap:.2f} pooled s.e."])
    return 0


def cmd_ssc(args):
    net, _ = _network(args)
    d = ssc_diagnostics(net, args.r, args.horizon, seed=args.seed)
    rows = _vec_rows("E[Z", d["mean"], [f"{k + 1}]" for k in range(net.K)])
    rows.append(("rE[Z_H]", d["r_mean_H"].value, d["r_mean_H"].std_error, d["r_mean_H"].batches))
    for a, ests in d["ui_tail"].items():
        for k, e in enumerate(ests):
            rows.append((f"E[Z{k + 1};Z{k + 1}>{a:g}]", e.value, e.std_error, e.batches))
    _emit(args, rows, [f"r={args.r:g}: rE[Z_H]={d['r_mean_H'].value:.4f}"])
    return 0


def cmd_export(args):
    import yaml

    net, fam = _load(args.network)
    text = yaml.safe_dump(network_to_dict(net, fam), sort_keys=False)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbpnet", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help, r=False, sim=False):
        s = sub.add_parser(name, help=help)
        s.add_argument("network", help="network file or pilot name (2s5c, priority, mm1)")
        s.add_argument("--out", help="write CSV here instead of stdout")
        if r:
            s.add_argument("--r", type=float, help="instantiate the family at this r")
        if sim:
            s.add_argument("--horizon", type=float, default=1e5)
            s.add_argument("--seed", type=int, default=0)
        s.set_defaults(func=func)
        return s

    add("analyze", cmd_analyze, "reflection matrix, covariance and checks")
    s = add("simulate", cmd_simulate, "steady-state simulation", r=True, sim=True)
    s.add_argument("--warmup", type=float)
    s.add_argument("--batches", type=int, default=32)
    s = add("oracle", cmd_oracle, "exact CTMC functionals", r=True)
    s.add_argument("--cap", type=int, default=100)
    s.add_argument("--theta", type=float, nargs="+")
    s.add_argument("--max-z", type=int, default=10)
    s = add("srbm", cmd_srbm, "simulate the limiting SRBM", sim=True)
    s.add_argument("--h", type=float)
    s.add_argument("--batches", type=int, default=32)
    s = add("sweep", cmd_sweep, "heavy-traffic sweep against the SRBM")
    s.add_argument("--r-grid", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    s.add_argument("--budget", type=float, default=1e4, help="about budget/r^2 events per r")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--h", type=float, help="SRBM step")
    s.add_argument("--srbm-horizon", type=float, default=1e5)
    s.add_argument("--no-srbm", action="store_true")
    s = add("abar", cmd_abar, "asymptotic BAR residuals")
    s.add_argument("--theta-l", type=float, nargs="+", required=True,
                   help="theta_L values, |L| per point")
    s.add_argument("--r-grid", type=float, nargs="+", default=[0.2, 0.1, 0.05])
    s.add_argument("--budget", type=float, default=1e4)
    s.add_argument("--seeds", type=int, default=10)
    s = add("palm", cmd_palm, "Palm tail identity", r=True, sim=True)
    s.add_argument("--k", type=int, required=True, help="class (1-based)")
    s.add_argument("--n", type=int, default=1)
    s.add_argument("--c", type=float, help="remaining-time cutoff (default: none)")
    s.add_argument("--cap", type=int, default=0, help="also solve the CTMC at this cap")
    s = add("ssc", cmd_ssc, "state-space collapse diagnostics", sim=True)
    s.add_argument("--r", type=float, required=True)
    add("export", cmd_export, "write the network as YAML")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (NetworkError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
