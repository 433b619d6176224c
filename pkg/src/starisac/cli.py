"""Command-line front end: parameter sweeps, single solves and self checks."""

import argparse
import concurrent.futures
import csv
import json
import os
import sys

import numpy as np

from . import model
from .driver import Scheme, optimize
from .linalg import InvalidInputError
from .scenario import _CONFIG_KEYS, ConfigError, Scenario, load_scenario


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_sweep(scn, param, value):
    if param not in _CONFIG_KEYS:
        valid = ", ".join(sorted(_CONFIG_KEYS))
        raise ConfigError(f"unknown sweep parameter '{param}' (one of: {valid})")
    return scn.with_overrides(**{_CONFIG_KEYS[param]: value})


def _rth_label(scn):
    vals = scn.rate_threshold
    if all(v == vals[0] for v in vals):
        return repr(vals[0])
    return ";".join(repr(v) for v in vals)


def _csv_header(n_users):
    return (["scheme", "seed", "P_max", "M", "K", "R_th", "outer_iters",
             "gamma_bs", "gamma_bs_db", "sum_c"]
            + [f"rate_k[{k}]" for k in range(n_users)]
            + ["trace_W0", "feasible", "wall_ms"])


def _csv_row(scn, res, n_users):
    rates = list(res.rates) + [float("nan")] * (n_users - len(res.rates))
    return ([res.scheme, res.seed, repr(float(scn.p_max)), scn.n_elements,
             scn.n_users, _rth_label(scn), res.outer_iters,
             repr(float(res.gamma_bs)), repr(float(res.gamma_bs_db)),
             repr(float(res.sum_c))]
            + [repr(float(r)) for r in rates[:n_users]]
            + [repr(float(res.trace_w0)), int(res.feasible),
               "%.1f" % res.wall_ms])


def _run_one(job):
    scheme, param, value, seed, scn = job
    try:
        res = optimize(scn, scheme)
        return job, res, None
    except Exception as e:                      # noqa: BLE001 - reported per run
        return job, None, f"{type(e).__name__}: {e}"


def run_sweep(scn, schemes, param, values, seeds, out_dir, jobs=1):
    """Execute the sweep grid and write results.csv plus per-run traces.

    Rows are ordered by (scheme, sweep value, seed) regardless of worker
    scheduling, so identical inputs give byte-identical output.
    Returns the number of runs that errored.
    """
    os.makedirs(out_dir, exist_ok=True)
    trace_dir = os.path.join(out_dir, "traces")
    os.makedirs(trace_dir, exist_ok=True)

    jobs_list = []
    for scheme in schemes:
        for vi, value in enumerate(values):
            for seed in seeds:
                s = _apply_sweep(scn, param, value) if param else scn
                s = s.with_overrides(seed=seed)
                jobs_list.append((scheme, param, value, seed, s))

    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, jobs_list))
    else:
        results = [_run_one(j) for j in jobs_list]

    max_k = max(j[4].n_users for j in jobs_list)
    n_err = 0
    rows = []
    for (scheme, _p, value, seed, s), res, err in results:
        if err is not None or (res is not None and res.error):
            n_err += 1
        if res is None:
            continue
        rows.append(_csv_row(s, res, max_k))
        tag = f"{scheme}_{param or 'base'}={value}_seed{seed}"
        with open(os.path.join(trace_dir, tag + ".json"), "w") as f:
            json.dump({"scheme": scheme, "seed": seed,
                       "sweep_param": param, "sweep_value": value,
                       "omega_trace": [float(x) for x in res.omega_trace],
                       "beta_t": [float(x) for x in res.beta_t],
                       "beta_r": [float(x) for x in res.beta_r],
                       "error": res.error}, f, indent=2)

    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(_csv_header(max_k))
        w.writerows(rows)
    return n_err


def _parse_list(text, cast):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok:
            out.append(cast(tok))
    return out


def cmd_run(args):
    scn = load_scenario(args.config) if args.config else Scenario()
    schemes = _parse_list(args.schemes, str) if args.schemes \
        else [s.value for s in Scheme]
    for s in schemes:
        Scheme.parse(s)
    seeds = _parse_list(args.seeds, int) if args.seeds else [scn.seed]
    if not seeds:
        print("error: --seeds must list at least one seed", file=sys.stderr)
        return 2
    if args.sweep:
        if not args.values:
            print("error: --sweep requires --values", file=sys.stderr)
            return 2
        values = [_parse_value(v) for v in _parse_list(args.values, str)]
    else:
        values = [None]
    n_err = run_sweep(scn, schemes, args.sweep, values, seeds,
                      args.out, jobs=args.jobs)
    print(f"wrote {os.path.join(args.out, 'results.csv')}"
          + (f" ({n_err} run(s) errored)" if n_err else ""))
    return 1 if n_err else 0


def cmd_solve(args):
    scn = load_scenario(args.config) if args.config else Scenario()
    res = optimize(scn, args.scheme)
    print(f"scheme        {res.scheme}")
    print(f"seed          {res.seed}")
    print(f"outer iters   {res.outer_iters}")
    print(f"gamma_bs      {res.gamma_bs:.6g} ({res.gamma_bs_db:.3f} dB)")
    print(f"sum_c         {res.sum_c:.6g}")
    print("rates         " + " ".join(f"{r:.4f}" for r in res.rates))
    print(f"trace_W0      {res.trace_w0:.6g}")
    print(f"feasible      {res.feasible}")
    if res.error:
        print(f"error         {res.error}")
    print(f"wall_ms       {res.wall_ms:.1f}")
    return 0 if res.feasible else 1


def _selftests():
    from . import beamform as bf
    from .conic import ConicProblem, LinExpr, solve
    from .scenario import gen_channels, steering_vector

    def check(name, fn):
        try:
            ok = bool(fn())
        except Exception as e:                  # noqa: BLE001
            print(f"FAIL {name}: {type(e).__name__}: {e}")
            return False
        print(("PASS" if ok else "FAIL") + f" {name}")
        return ok

    def steering_norm():
        return abs(np.linalg.norm(steering_vector(0.3, 8)) - np.sqrt(8)) < 1e-12

    def rate_identity():
        scn = Scenario(n_antennas=3, n_elements=4, n_users=2, n_scatterers=1,
                       p_max=1.0, seed=1)
        ch = gen_channels(scn)
        ris = model.StarRisState.from_coeffs(
            0.5 * np.ones(4), np.linspace(0, 1, 4), np.linspace(1, 2, 4))
        rng = np.random.Generator(np.random.Philox(5))
        w = rng.standard_normal(3) + 1j * rng.standard_normal(3)
        W = np.outer(w, np.conj(w))
        h = model.composite_gt_channel(ch, ris.Phi_r, 0)
        direct = abs(np.conj(h) @ w) ** 2
        trace = float(np.real(np.trace(np.outer(h, np.conj(h)) @ W)))
        return abs(direct - trace) < 1e-9 * max(1.0, direct)

    def sensing_forms_agree():
        scn = Scenario(n_antennas=3, n_elements=4, n_users=2, n_scatterers=2,
                       p_max=1.0, seed=2)
        ch = gen_channels(scn)
        ris = model.StarRisState.from_coeffs(
            0.3 * np.ones(4), np.linspace(0, 2, 4), np.linspace(2, 4, 4))
        rng = np.random.Generator(np.random.Philox(6))
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        Q = A @ A.conj().T
        g1 = model.sensing_sinr(ch, ris.Phi_t, Q, scn)
        g2 = model.sensing_sinr_trace_form(ch, ris.Phi_t, Q, scn)
        return abs(g1 - g2) < 1e-6 * max(1.0, g1)

    def conic_minimum_eigenvalue():
        rng = np.random.Generator(np.random.Philox(7))
        A = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
        S = A @ A.conj().T + np.eye(3)
        prob = ConicProblem(psd_vars=[("X", 3)])
        prob.objective = LinExpr(mats={"X": S})
        prob.eq_constraints.append(
            (LinExpr(mats={"X": np.eye(3, dtype=complex)}), 1.0))
        sol = solve(prob)
        lam = np.linalg.eigvalsh(S)[0]
        return sol.optimal and abs(sol.objective - lam) < 1e-5 * max(1.0, lam)

    def sensing_fold_preserves_q():
        rng = np.random.Generator(np.random.Philox(8))

        def psd(n):
            A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            return A @ A.conj().T

        W_c, W_p, W_0 = psd(3), [psd(3), psd(3)], psd(3)
        Wc2, Wp2 = bf.reconstruct_no_sensing(W_c, W_p, W_0, 0.5, [0.25, 0.25])
        Q1 = W_c + sum(W_p) + W_0
        Q2 = Wc2 + sum(Wp2)
        return np.max(np.abs(Q1 - Q2)) < 1e-10

    names = [("steering vector norm", steering_norm),
             ("rate trace identity", rate_identity),
             ("sensing SINR trace form", sensing_forms_agree),
             ("conic minimum eigenvalue", conic_minimum_eigenvalue),
             ("sensing-stream fold preserves Q", sensing_fold_preserves_q)]
    return all([check(n, f) for n, f in names])


def cmd_selftest(_args):
    return 0 if _selftests() else 1


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="starisac",
        description="STAR-RIS-assisted sensing/communication optimizer")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a parameter sweep, write CSV results")
    p.add_argument("--config", help="JSON scenario config")
    p.add_argument("--sweep", help="config key to sweep")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--seeds", help="comma-separated channel seeds")
    p.add_argument("--schemes", help="comma-separated scheme names")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("solve", help="solve a single instance, print a summary")
    p.add_argument("--config", help="JSON scenario config")
    p.add_argument("--scheme", default="StarRsma")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("selftest", help="run built-in consistency checks")
    p.set_defaults(fn=cmd_selftest)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, InvalidInputError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
