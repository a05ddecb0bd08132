"""Command line entry point: ``qgraphon <command> --config cfg.json --out dir``.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 resource guard.
Every run ends by writing ``manifest.json`` into the output directory.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import demo as demo_mod
from . import graphon as gr
from . import limit as lm
from . import nbody as nb
from . import qmatrix as qm
from .config import COMMANDS, parse_config
from .errors import NoConvergence, QGraphonError
from .model import COUNTING


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x):
    return format(float(x), ".17g")


def run_demo(cfg, out, threads):
    s = cfg.sim
    dcfg = demo_mod.DemoConfig(
        n_traj=s["n_traj"], dt=s["dt"], T=s["T"], seed=cfg.seed, U=s["U"], feedback=s["feedback"],
        interaction=s["interaction"], initial=tuple(qm.bloch_vector(s["initial_state"]).tolist()),
        check_T=s["check_T"], check_traj=s["check_traj"],
    )
    res = demo_mod.run_qubit_demo(dcfg, threads=threads)
    with open(os.path.join(out, "demo_paths.csv"), "w") as fh:
        demo_mod.write_demo_csv(res, fh, every=s["csv_every"])
    _write_json(os.path.join(out, "summary.json"), res.summary)
    return ["demo_paths.csv", "summary.json"]


def _limit_cfg(cfg, detection=None):
    s = cfg.sim
    return lm.LimitSimConfig(
        n_u=s.get("n_u", 2), dt=s["dt"], T=s["T"], M=s.get("M", 1), seed=cfg.seed,
        detection=detection or cfg.model.meas.detection,
        picard_tol=s.get("picard_tol", 1e-8), picard_max_iter=s.get("picard_max_iter", 50),
    )


def run_stability(cfg, out, threads):
    s = cfg.sim
    model = cfg.model
    det = s["detection"] or model.meas.detection
    if det != model.meas.detection:
        model = model.replace(meas=type(model.meas)(model.L, model.eta, det))
    lcfg = _limit_cfg(cfg, det)
    rho0 = s["initial_state"]
    kw = {"threads": threads, "cut_restarts": s["cut_restarts"]}
    if s["eps"] is None:
        res = lm.stability_experiment(cfg.graphon, cfg.graphon_b, model, rho0, lcfg, **kw)
        _write_json(os.path.join(out, "stability.json"), res.to_json())
        return ["stability.json"]
    rows, spread = lm.stability_sweep(cfg.graphon, cfg.graphon_b, model, rho0, lcfg, s["eps"], **kw)
    with open(os.path.join(out, "stability.csv"), "w") as fh:
        fh.write("eps,distance_sq,mc_stderr,cut_norm,cut_method,ratio\n")
        for eps, r in rows:
            fh.write(f"{_fmt(eps)},{_fmt(r.distance_sq)},{_fmt(r.mc_stderr)},{_fmt(r.cut_norm)},{r.cut_method},{_fmt(r.ratio)}\n")
    _write_json(os.path.join(out, "stability.json"), {
        "rows": [{"eps": e, **r.to_json()} for e, r in rows],
        "ratio_spread": spread,
        "bound_constant": max(r.ratio for _, r in rows),
    })
    return ["stability.csv", "stability.json"]


def run_chaos(cfg, out, threads):
    s = cfg.sim
    sim_cfg = nb.SimConfig(dt=s["dt"], T=s["T"], seed=cfg.seed)
    rows, controls = lm.chaos_experiment(
        cfg.model, cfg.graphon, s["N_list"], sim_cfg, n_traj=s["n_traj"], rho0=s["initial_state"],
        graph=s["graph"], n_u=s["n_u"], zero_control_N=s["zero_control_N"], threads=threads, chunk=s["chunk"],
    )
    with open(os.path.join(out, "chaos.csv"), "w") as fh:
        fh.write("N,variant,distance,stderr,within_3se\n")
        for r in rows + controls:
            fh.write(f"{r.N},{r.variant},{_fmt(r.distance)},{_fmt(r.stderr)},{int(r.within_3se)}\n")
    _write_json(os.path.join(out, "chaos.json"), {
        "rows": [r.to_json() for r in rows],
        "controls": [r.to_json() for r in controls],
    })
    return ["chaos.csv", "chaos.json"]


def run_cutnorm(cfg, out, threads):
    s = cfg.sim
    value, method = gr.cut_norm(cfg.graphon, restarts=s["restarts"], seed=cfg.seed, n_max=s["n_max"])
    _write_json(os.path.join(out, "cutnorm.json"), {"cut_norm": value, "method": method})
    return ["cutnorm.json"]


def run_mean_ode(cfg, out, threads):
    s = cfg.sim
    lcfg = _limit_cfg(cfg)
    path = lm.solve_mean_ode(cfg.graphon, cfg.model, s["initial_state"], lcfg)
    with open(os.path.join(out, "mean_path.csv"), "w") as fh:
        path.write_csv(fh)
    files = ["mean_path.csv"]
    if s["picard"]:
        try:
            fixed, report = lm.picard_solve(cfg.graphon, cfg.model, s["initial_state"], lcfg)
        except NoConvergence as exc:
            _write_json(os.path.join(out, "picard.json"), exc.report.to_json())
            raise
        rep = report.to_json()
        rep["distance_to_ode"] = lm.path_distance(fixed, path)
        _write_json(os.path.join(out, "picard.json"), rep)
        files.append("picard.json")
    return files


def run_simulate(cfg, out, threads):
    s = cfg.sim
    N = s["N"]
    model = cfg.model
    W = cfg.graphon if isinstance(cfg.graphon, gr.StepKernel) else gr.discretize(cfg.graphon, N)
    g = gr.weighted_graph(W, N) if s["graph"] == "weighted" else gr.sample_bernoulli(W, N, cfg.seed)
    stored = s["store_marginals"] if s["store_marginals"] is not None else list(range(1, N + 1))
    sc = nb.SimConfig(dt=s["dt"], T=s["T"], seed=cfg.seed, store_marginals=tuple(stored), renorm_every=s["renorm_every"])
    if model.meas.detection == COUNTING:
        rec = nb.simulate_jump_nbody(model, g, sc, rho0=s["initial_state"], trajectory=s["trajectory"],
                                     interaction_scale=s["interaction_scale"])
    else:
        rec = nb.simulate_homodyne_nbody(model, g, sc, rho0=s["initial_state"], trajectory=s["trajectory"],
                                         interaction_scale=s["interaction_scale"])
    with open(os.path.join(out, "trajectory.csv"), "w") as fh:
        rec.write_csv(fh)
    side = rec.sidecar(sc, model)
    side["graph"] = g.to_json()
    _write_json(os.path.join(out, "trajectory.json"), side)
    return ["trajectory.csv", "trajectory.json"]


RUNNERS = {
    "demo": run_demo,
    "stability": run_stability,
    "chaos": run_chaos,
    "cutnorm": run_cutnorm,
    "mean-ode": run_mean_ode,
    "simulate": run_simulate,
}


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def build_parser():
    p = argparse.ArgumentParser(prog="qgraphon", description="Graphon mean-field quantum filtering experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        with open(args.config) as fh:
            text = fh.read()
        cfg = parse_config(text, seed=args.seed)
    except OSError as exc:
        print(json.dumps({"error": "IOError", "message": str(exc)}), file=sys.stderr)
        return 2
    except QGraphonError as exc:
        return _fail(exc, args.command)
    if cfg.command != args.command:
        print(json.dumps({"error": "ValidationError", "errors": [["command", f"config is for {cfg.command!r}"]]}),
              file=sys.stderr)
        return 2
    os.makedirs(args.out, exist_ok=True)
    try:
        files = RUNNERS[cfg.command](cfg, args.out, max(1, args.threads))
    except QGraphonError as exc:
        return _fail(exc, cfg.command)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(json.dumps({"error": type(exc).__name__, "command": cfg.command, "message": str(exc)}), file=sys.stderr)
        return 3
    manifest = {
        "command": cfg.command,
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "version": __version__,
        "threads": args.threads,
        "wall_time_s": round(time.perf_counter() - start, 3),
        "files": {f: _sha(os.path.join(args.out, f)) for f in files},
    }
    _write_json(os.path.join(args.out, "manifest.json"), manifest)
    return 0


def _fail(exc, command):
    payload = {"error": type(exc).__name__, "command": command, "message": str(exc)}
    if hasattr(exc, "errors"):
        payload["errors"] = [list(e) for e in exc.errors]
    print(json.dumps(payload), file=sys.stderr)
    return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
