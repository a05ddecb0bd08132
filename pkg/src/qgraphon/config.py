"""JSON experiment configuration.

A config is one JSON object::

    {
      "command": "demo" | "stability" | "chaos" | "cutnorm" | "mean-ode" | "simulate",
      "seed": 0,
      "model": {...},          # ParticleModel JSON; defaults to the qubit demo preset
      "graphon": ...,          # catalog name, {"name": ..., ...} or StepKernel JSON
      "graphon_b": ...,        # second graphon (stability)
      "sim": {...},            # numerical settings, see DEFAULTS
      "output": "dir"          # optional; the command line --out wins
    }

Every violated field is collected and reported together as a
:class:`ValidationError` with dotted field paths.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import graphon as gr
from . import qmatrix as qm
from .errors import ParseError, ValidationError
from .model import COUNTING, HOMODYNE, ParticleModel, demo_model, model_from_json

COMMANDS = ("demo", "stability", "chaos", "cutnorm", "mean-ode", "simulate")

DEFAULTS = {
    "demo": {"n_traj": 100, "dt": 1e-3, "T": 10.0, "U": 10.0, "feedback": True, "interaction": True,
             "initial": "plus", "check_T": 1.0, "check_traj": 20, "csv_every": 10},
    "stability": {"n_u": 8, "dt": 1e-3, "T": 1.0, "M": 500, "detection": None, "eps": None, "initial": "plus",
                  "cut_restarts": 32},
    "chaos": {"N_list": [2, 4, 6, 8], "n_traj": 2000, "dt": 1e-3, "T": 1.0, "graph": "weighted", "n_u": None,
              "initial": [0.7071067811865476, 0.0, 0.7071067811865476], "zero_control_N": 4, "chunk": 250},
    "cutnorm": {"restarts": 32, "n_max": 20},
    "mean-ode": {"n_u": 2, "dt": 1e-3, "T": 1.0, "initial": "plus", "picard": True, "picard_tol": 1e-8,
                 "picard_max_iter": 50},
    "simulate": {"N": 2, "dt": 1e-3, "T": 1.0, "graph": "weighted", "trajectory": 0, "initial": "plus",
                 "store_marginals": None, "renorm_every": 1, "interaction_scale": 1.0},
}

# commands whose default model is the demo preset without feedback
_PLAIN_MODEL = ("chaos", "simulate")


@dataclass
class ExperimentConfig:
    command: str
    seed: int
    model: ParticleModel
    graphon: object
    graphon_b: object
    sim: dict
    output: str | None
    raw: dict = field(default_factory=dict)

    def digest(self):
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _graphon(obj, path, errors):
    if obj is None:
        return None
    try:
        if isinstance(obj, str):
            obj = {"name": obj}
        if not isinstance(obj, dict):
            raise ValueError("must be a name or an object")
        if "weights" in obj and "name" not in obj:
            return gr.StepKernel.from_json(obj)
        name = obj.get("name")
        if name == "constant":
            return gr.constant(float(obj.get("c", 1.0)))
        if name == "table":
            return gr.table(np.asarray(obj["weights"], dtype=float))
        if name in ("two_block", "min"):
            return gr.CATALOG[name]()
        raise ValueError(f"unknown graphon {name!r}")
    except (KeyError, TypeError, ValueError) as exc:
        errors.append((path, str(exc)))
        return None


def initial_state(spec, d=2):
    """State from a name, a Bloch triple or an encoded matrix."""
    if isinstance(spec, str):
        if spec not in qm.NAMED_STATES:
            raise ValueError(f"unknown state {spec!r}")
        return qm.NAMED_STATES[spec]
    arr = np.asarray(spec, dtype=float) if _flat_numbers(spec) else None
    if arr is not None and arr.shape == (3,):
        if arr @ arr > 1.0 + 1e-9:
            raise ValueError("Bloch vector outside the unit ball")
        return qm.bloch_density(*arr)
    M = qm.decode_matrix(spec)
    if M.shape != (d, d) or not qm.is_density(M):
        raise ValueError("not a density matrix of the model dimension")
    return M


def _flat_numbers(obj):
    return isinstance(obj, (list, tuple)) and all(isinstance(v, (int, float)) for v in obj)


def _check_sim(command, sim, errors):
    out = copy.deepcopy(DEFAULTS[command])
    for key in sim:
        if key not in out:
            errors.append((f"sim.{key}", "unknown field"))
    out.update({k: v for k, v in sim.items() if k in out})

    def positive(key, kind=(int, float)):
        v = out.get(key)
        if v is not None and (isinstance(v, bool) or not isinstance(v, kind) or v <= 0):
            errors.append((f"sim.{key}", f"must be positive, got {v!r}"))

    for key in ("dt", "T", "check_T"):
        positive(key)
    for key in ("n_traj", "M", "n_u", "N", "restarts", "n_max", "picard_max_iter", "renorm_every",
                "cut_restarts", "csv_every", "zero_control_N", "chunk"):
        positive(key, int)
    positive("picard_tol")
    positive("U")
    if "dt" in out and "T" in out and isinstance(out["dt"], (int, float)) and isinstance(out["T"], (int, float)):
        if out["dt"] > out["T"]:
            errors.append(("sim.dt", "must not exceed sim.T"))
    if out.get("detection") not in (None, HOMODYNE, COUNTING):
        errors.append(("sim.detection", f"must be {HOMODYNE!r} or {COUNTING!r}"))
    if "graph" in out and out["graph"] not in ("weighted", "bernoulli"):
        errors.append(("sim.graph", "must be 'weighted' or 'bernoulli'"))
    if "N_list" in out:
        nl = out["N_list"]
        if not isinstance(nl, list) or not nl or not all(isinstance(n, int) and n >= 1 for n in nl):
            errors.append(("sim.N_list", "must be a nonempty list of positive integers"))
    if out.get("eps") is not None:
        eps = out["eps"]
        if not isinstance(eps, list) or not all(isinstance(e, (int, float)) and 0 <= e <= 1 for e in eps):
            errors.append(("sim.eps", "must be a list of numbers in [0, 1]"))
    if "initial" in out:
        try:
            out["initial_state"] = initial_state(out["initial"])
        except (ValueError, TypeError) as exc:
            errors.append(("sim.initial", str(exc)))
    return out


def parse_config(text, seed=None):
    """Parse and validate a JSON config; ``seed`` overrides the file's seed."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ParseError("config must be a JSON object")
    errors = []
    command = raw.get("command")
    if command not in COMMANDS:
        raise ValidationError([("command", f"must be one of {', '.join(COMMANDS)}")])
    if seed is not None:
        raw = {**raw, "seed": seed}
    s = raw.get("seed")
    if s is None:
        errors.append(("seed", "required (in the file or via --seed)"))
    elif isinstance(s, bool) or not isinstance(s, int) or s < 0:
        errors.append(("seed", "must be a nonnegative integer"))
    model = None
    if "model" in raw:
        try:
            model = model_from_json(raw["model"], "model")
        except ValidationError as exc:
            errors.extend(exc.errors)
    else:
        model = demo_model(feedback=command not in _PLAIN_MODEL)
    sim = raw.get("sim", {})
    if not isinstance(sim, dict):
        errors.append(("sim", "must be an object"))
        sim = {}
    sim = _check_sim(command, sim, errors)
    W = _graphon(raw.get("graphon", _default_graphon(command)), "graphon", errors)
    Wb = _graphon(raw.get("graphon_b", {"name": "constant", "c": 0.5} if command == "stability" else None),
                  "graphon_b", errors)
    if command == "cutnorm" and "graphon" not in raw:
        errors.append(("graphon", "required for cutnorm"))
    elif command == "cutnorm" and W is not None and not isinstance(W, gr.StepKernel):
        errors.append(("graphon", "cutnorm needs a step kernel ({'n', 'weights'})"))
    if command == "demo" and "model" in raw:
        errors.append(("model", "the demo uses its fixed preset; configure it through sim"))
    out = raw.get("output")
    if out is not None and not isinstance(out, str):
        errors.append(("output", "must be a path string"))
    if errors:
        raise ValidationError(errors)
    return ExperimentConfig(command, int(raw["seed"]), model, W, Wb, sim, out, raw)


def _default_graphon(command):
    if command == "chaos":
        return {"name": "constant", "c": 1.0}
    if command == "cutnorm":
        return None
    return {"name": "two_block"}
