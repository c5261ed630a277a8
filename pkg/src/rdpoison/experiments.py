"""Experiment registry: JSON-configured runs that return CSV/JSON artifacts.

Every experiment is a function ``(params, seed) -> Result``. Parameter
defaults live in the schemas below; ``load_config`` validates a raw config and
fills them in.
"""
from __future__ import annotations

import copy
import csv
import io
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import attack, envs, info, planning, victim

# -- schemas --------------------------------------------------------------------

_prob_vector = {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1}
_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_evaluator = {
    "type": "object",
    "properties": {"kind": {"enum": ["exact", "sweep"]}, "threshold": {"type": "number", "exclusiveMinimum": 0}},
    "required": ["kind"],
    "additionalProperties": False,
}
_channel = {
    "type": "object",
    "properties": {
        "likelihood": _matrix,
        "parametric": {
            "type": "object",
            "properties": {"p1": {"type": "number", "minimum": 0, "maximum": 1}, "p2": {"type": "number", "minimum": 0, "maximum": 1}},
            "required": ["p1", "p2"],
            "additionalProperties": False,
        },
    },
    "oneOf": [{"required": ["likelihood"]}, {"required": ["parametric"]}],
}
_budgets = {
    "oneOf": [
        {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        {
            "type": "object",
            "properties": {
                "start": {"type": "number", "minimum": 0},
                "stop": {"type": "number", "minimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["start", "stop", "step"],
            "additionalProperties": False,
        },
    ]
}
_schedule = {
    "type": "object",
    "properties": {
        "lr_power": {"type": ["number", "null"]},
        "lr_constant": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "eps_start": {"type": "number", "minimum": 0, "maximum": 1},
        "eps_end": {"type": "number", "minimum": 0, "maximum": 1},
        "eps_decay_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

SWEEP = {"kind": "sweep", "threshold": 0.1}
EXACT = {"kind": "exact"}


def _params(properties: dict, defaults: dict) -> dict:
    return {"schema": {"type": "object", "properties": properties, "additionalProperties": False}, "defaults": defaults}


PARAMS = {
    "table2": _params(
        {"prior": _prob_vector, "reward": _matrix},
        {"prior": [0.5, 0.5]},
    ),
    "thm51_trace": _params(
        {
            "reward": _matrix,
            "weights": _prob_vector,
            "initial_policy": {"type": "array", "items": {"type": "integer", "minimum": 0}},
            "evaluator": _evaluator,
            "max_iters": {"type": "integer", "minimum": 1},
        },
        {"weights": [0.5, 0.5], "initial_policy": [0, 1, 2], "evaluator": SWEEP, "max_iters": 100},
    ),
    "rd_attack_planning": _params(
        {
            "reward": _matrix,
            "prior": _prob_vector,
            "channel": _channel,
            "cost": _matrix,
            "budget": {"type": "number", "minimum": 0},
            "evaluator": _evaluator,
            "objective": {"enum": list(planning.OBJECTIVES)},
        },
        {"prior": [0.5, 0.5], "channel": {"likelihood": [[0.5, 0.5], [0.5, 0.5]]}, "cost": [[0, 1.5], [2, 0]],
         "evaluator": SWEEP, "objective": "mean_sup_gap"},
    ),
    "budget_regret": _params(
        {
            "c1": {"type": "number", "minimum": 0},
            "c2": {"type": "number", "minimum": 0},
            "prior": _prob_vector,
            "budgets": _budgets,
            "grid_step": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "evaluator": _evaluator,
            "objective": {"enum": list(planning.OBJECTIVES)},
        },
        {"c1": 1.5, "c2": 2.0, "prior": [0.5, 0.5], "budgets": {"start": 0.0, "stop": 0.9, "step": 0.001},
         "grid_step": 0.005, "evaluator": SWEEP, "objective": "mean_sup_gap"},
    ),
    "blockworld_qlearning": _params(
        {
            "alphas": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}, "minItems": 1},
            "prior": _prob_vector,
            "likelihood": _matrix,
            "runs": {"type": "integer", "minimum": 1},
            "episodes": {"type": "integer", "minimum": 1},
            "T": {"type": "integer", "minimum": 1},
            "schedule": _schedule,
        },
        {"alphas": [0.8, 0.2], "runs": 20, "episodes": 50_000, "T": 100, "schedule": {}},
    ),
    "permutation_attack": _params(
        {
            "seeds": {"type": "integer", "minimum": 1},
            "episodes": {"type": "integer", "minimum": 1},
            "T": {"type": "integer", "minimum": 1},
            "attacked": {"type": "boolean"},
        },
        {"seeds": 100, "episodes": 20, "T": 100, "attacked": True},
    ),
    "value_surface": _params(
        {"prior": _prob_vector, "grid_resolution": {"type": "integer", "minimum": 2}},
        {"prior": [0.5, 0.5], "grid_resolution": 101},
    ),
    "fano_check": _params(
        {"prior": _prob_vector, "channel": _channel, "env": {"enum": ["three_state_cycle", "two_state", "none"]},
         "evaluator": _evaluator},
        {"prior": [0.5, 0.5], "channel": {"likelihood": [[0.5, 0.5], [0.5, 0.5]]}, "env": "three_state_cycle",
         "evaluator": SWEEP},
    ),
}
PARAMS["budget_mi"] = copy.deepcopy(PARAMS["budget_regret"])

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "experiment": {"enum": sorted(PARAMS)},
        "params": {"type": "object"},
        "seed": {"type": "integer"},
        "output_dir": {"type": "string"},
    },
    "required": ["experiment"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    pass


def _path(parts) -> str:
    out = ""
    for part in parts:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def _validate(doc, schema, root=()):
    errors = sorted(jsonschema.Draft7Validator(schema).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("\n".join(f"{_path([*root, *e.absolute_path])}: {e.message}" for e in errors))


def load_config(doc: dict) -> dict:
    """Validate a raw config and fill in parameter defaults."""
    _validate(doc, CONFIG_SCHEMA)
    spec = PARAMS[doc["experiment"]]
    params = doc.get("params", {})
    _validate(params, spec["schema"], root=("params",))
    full = copy.deepcopy(spec["defaults"])
    full.update(copy.deepcopy(params))
    return {"experiment": doc["experiment"], "params": full, "seed": doc.get("seed", 0),
            "output_dir": doc.get("output_dir", "out")}


# -- helpers ---------------------------------------------------------------------


@dataclass
class Result:
    files: dict = field(default_factory=dict)  # file name -> text
    summary: str = ""
    data: dict = field(default_factory=dict)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def json_text(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def make_evaluator(cfg: dict):
    if cfg["kind"] == "exact":
        return planning.exact_evaluator
    return planning.SweepEvaluator(cfg.get("threshold", 0.1))


def make_likelihood(cfg: dict) -> np.ndarray:
    if "parametric" in cfg:
        return attack.two_kernel_likelihood(cfg["parametric"]["p1"], cfg["parametric"]["p2"])
    return np.array(cfg["likelihood"], dtype=float)


def budget_list(cfg) -> list[float]:
    if isinstance(cfg, list):
        return [float(b) for b in cfg]
    n = int(round((cfg["stop"] - cfg["start"]) / cfg["step"]))
    return [round(cfg["start"] + i * cfg["step"], 10) for i in range(n + 1)]


def _cycle_env(params) -> envs.EnvironmentSpec:
    return envs.three_state_cycle_env(params.get("reward"))


def _fmt(v) -> str:
    return np.array2string(np.asarray(v), precision=4, floatmode="fixed")


# -- experiments -------------------------------------------------------------------


def table2(params, seed) -> Result:
    env = envs.two_state_env(params["prior"])
    if "reward" in params:
        mdp = planning.TabularMdp.from_state_reward(params["reward"], 2, envs.GAMMA)
        env = envs.EnvironmentSpec(env.name, mdp, env.ensemble)
    rows = []
    for i, pol in enumerate(planning.enumerate_policies(2, 2)):
        ev = planning.expected_values(env.mdp, env.ensemble, env.ensemble.prior, pol)
        rows.append((f"pi{i + 1}", envs.TWO_STATE_ACTIONS[pol[0]], envs.TWO_STATE_ACTIONS[pol[1]], ev[0], ev[1]))
    mx = planning.exhaustive_expected_value_maximizer(env.mdp, env.ensemble, env.ensemble.prior)
    summary = "\n".join(f"{r[0]} {{0:{r[1]}, 1:{r[2]}}}  E V(0)={r[3]:.4f}  E V(1)={r[4]:.4f}" for r in rows)
    summary += f"\ncommon expected-value optimum exists: {mx.exists_common_optimum}"
    return Result(
        {"table2.csv": csv_text(("policy", "action_state0", "action_state1", "EV_state0", "EV_state1"), rows)},
        summary,
        {"rows": rows, "exists_common_optimum": mx.exists_common_optimum},
    )


def thm51_trace(params, seed) -> Result:
    env = _cycle_env(params)
    ev = make_evaluator(params["evaluator"])
    w = params["weights"]
    trace = planning.extended_policy_iteration(env.mdp, env.ensemble, w, params["initial_policy"], params["max_iters"], ev)
    table = planning.PolicyValueTable.build(env.mdp, env.ensemble, ev)
    plans = {obj: planning.exhaustive_regret_optimal_policy(env.mdp, env.ensemble, w, ev, obj, table) for obj in planning.OBJECTIVES}
    mx = planning.exhaustive_expected_value_maximizer(env.mdp, env.ensemble, w, ev, table)
    first = trace.steps[0]
    values_rows = [(f"X{k + 1}", *v) for k, v in enumerate(first.per_kernel_values)]
    q_rows = [(s, *first.mixed_q[s]) for s in range(env.mdp.num_states)]
    names = envs.CYCLE_ACTIONS
    label = lambda p: "{" + ", ".join(f"{s}:{names[a]}" for s, a in enumerate(p)) + "}"
    doc = {
        "evaluator": planning.describe_evaluator(ev),
        "trace": trace.to_dict(),
        "per_kernel_optimal": [list(p) for p in table.optimal_policies],
        "exhaustive": {k: v.to_dict() for k, v in plans.items()},
        "expected_value_maximizer": {
            "argmax_sets": [[list(p) for p in s] for s in mx.argmax_sets],
            "exists_common_optimum": mx.exists_common_optimum,
            "common": [list(p) for p in mx.common],
        },
    }
    summary = "\n".join(
        [
            f"evaluator: {doc['evaluator']}",
            *(f"V^pi0_{r[0]} = {_fmt(r[1:])}" for r in values_rows),
            "mixed Q (rows: states; cols: left, right, stay):",
            _fmt(first.mixed_q),
            f"extended PI from {label(trace.steps[0].policy)} -> {label(trace.policy)} after {len(trace.steps)} evaluation(s)",
            *(f"exhaustive {k}: {label(v.policy)} (objective {v.objective:.4f})" for k, v in plans.items()),
            f"common expected-value maximiser: {', '.join(label(p) for p in mx.common) or 'none'}",
        ]
    )
    return Result(
        {
            "trace.json": json_text(doc),
            "values.csv": csv_text(("kernel", "V_state0", "V_state1", "V_state2"), values_rows),
            "mixed_q.csv": csv_text(("state", "Q_left", "Q_right", "Q_stay"), q_rows),
        },
        summary,
        {"trace": trace, "plans": plans, "maximizer": mx, "table": table},
    )


def rd_attack_planning(params, seed) -> Result:
    env = _cycle_env(params)
    ensemble = planning.KernelEnsemble(env.ensemble.kernels, params["prior"])
    model = attack.RegretModel.build(env.mdp, ensemble, make_evaluator(params["evaluator"]), params["objective"])
    ch = info.JointChannel(ensemble.prior, make_likelihood(params["channel"]))
    atk = attack.AttackChannel(ch, np.array(params["cost"], dtype=float), params.get("budget", np.inf))
    rep = model.report(atk)
    doc = rep.to_dict()
    doc["feasible"] = atk.feasible if np.isfinite(atk.budget) else None
    summary = (
        f"regret R = {rep.regret:.4f} ({100 * rep.regret_fraction:.2f}% of {rep.baseline_value:.4f})\n"
        f"victim policies per observation: {rep.victim_policies}\n"
        f"expectation-form regret = {rep.expectation_form_regret:.4f}\n"
        f"expected attack cost = {rep.expected_cost:.4f}\n" + rep.fano.table()
    )
    return Result({"report.json": json_text(doc)}, summary, {"report": rep})


def _budget_curve(params, mode) -> Result:
    env = envs.three_state_cycle_env()
    ensemble = planning.KernelEnsemble(env.ensemble.kernels, params["prior"])
    model = attack.RegretModel.build(env.mdp, ensemble, make_evaluator(params["evaluator"]), params["objective"])
    search = attack.BudgetSearch(model, attack.two_kernel_cost(params["c1"], params["c2"]), params["grid_step"])
    rows = search.curve(budget_list(params["budgets"]), mode)
    sat = attack.saturation_budget(rows)
    summary = (
        f"mode {mode}: maximum regret fraction {100 * rows[-1]['regret_fraction']:.2f}% "
        f"first reached at B = {sat:g}"
    )
    if mode == "min_mi":
        zero = next((r["B"] for r in rows if r["mi_bits"] <= 1e-12), None)
        summary += f"\nminimum MI first reaches 0 at B = {zero}"
    return Result({"curve.csv": attack.curve_csv(rows)}, summary, {"rows": rows, "saturation": sat})


def budget_regret(params, seed) -> Result:
    return _budget_curve(params, "max_regret")


def budget_mi(params, seed) -> Result:
    return _budget_curve(params, "min_mi")


def blockworld_qlearning(params, seed) -> Result:
    grid = envs.GridWorldSpec()
    env = envs.block_world_ensemble(params["alphas"], params.get("prior"), grid)
    K = len(env.ensemble)
    lik = np.array(params.get("likelihood", np.full((K, K), 1.0 / K)), dtype=float)
    res = victim.run_rate_distortion_model_free(
        env, lik, params["runs"], seed, params["episodes"], params["T"],
        victim.QLearningSchedule(**params["schedule"]), grid.open_states, grid.terminal_states,
    )
    per_run = [(r, s, float(res.regret[r, j]), float(res.baseline[r, j])) for r in range(params["runs"]) for j, s in enumerate(res.states)]
    sanity = [(a, f) for a, f in zip(params["alphas"], res.sanity)]
    summary = "start  attack_regret  baseline\n" + "\n".join(f"{s:5d}  {a:13.4f}  {b:8.4f}" for s, a, b in res.rows())
    summary += "\nplanner agreement per alpha: " + ", ".join(f"{a:g}: {100 * f:.0f}%" for a, f in sanity)
    return Result(
        {
            "regret.csv": csv_text(victim.MODEL_FREE_HEADER, res.rows()),
            "regret_runs.csv": csv_text(("run", "start_state", "attack_regret", "deterministic_baseline_regret"), per_run),
            "sanity.csv": csv_text(("alpha", "planner_agreement"), sanity),
        },
        summary,
        {"result": res},
    )


def permutation_attack(params, seed) -> Result:
    env = envs.permutation_family_env()
    seeds = range(seed, seed + params["seeds"])
    ex = victim.run_permutation_attack(env, seeds, params["episodes"], params["T"], params["attacked"])
    summary = (
        f"attacked: {ex.attacked}\nmax final posterior TV from uniform: {ex.final_tv.max():.3g}\n"
        f"mean regret of the posterior-planning victim: {ex.mean_aware_regret:.4f}\n"
        f"zero-information regret: {ex.zero_info_regret:.4f} (policy {ex.zero_info_policy})\n"
        f"naive identification rate after the last episode: {ex.identification_rate:.2f}"
    )
    return Result({"per_episode.csv": csv_text(victim.PERMUTATION_HEADER, ex.rows())}, summary, {"experiment": ex})


def value_surface(params, seed) -> Result:
    env = envs.two_state_env(params["prior"])
    surf = planning.random_policy_value_surface(env.mdp, env.ensemble, env.ensemble.prior, params["grid_resolution"])
    summary = "\n".join(f"state {s} grid argmax (theta0, theta1) = {surf.argmax[s]}" for s in range(2))
    summary += f"\nper-state argmax sets intersect: {surf.common}"
    return Result({"surface.csv": csv_text(planning.SURFACE_HEADER, surf.rows())}, summary, {"surface": surf})


def fano_check(params, seed) -> Result:
    ch = info.JointChannel(params["prior"], make_likelihood(params["channel"]))
    eps, err = None, None
    if params["env"] != "none":
        env = envs.ENVIRONMENTS[params["env"]]()
        if len(env.ensemble) != len(ch.prior):
            raise ConfigError("params.prior: length differs from the ensemble size")
        ens = planning.KernelEnsemble(env.ensemble.kernels, ch.prior)
        try:
            eps = info.epsilon_gap(env.mdp, ens, make_evaluator(params["evaluator"])).epsilon
        except info.GapHypothesisError as exc:
            err = str(exc)
    cert = info.fano_certificate(ch, eps)
    decoder, _ = info.map_decoder(ch)
    doc = cert.to_dict() | {"decoder": list(decoder), "epsilon_error": err}
    return Result({"certificate.json": json_text(doc)}, cert.table(), {"certificate": cert})


EXPERIMENTS = {
    "table2": table2,
    "thm51_trace": thm51_trace,
    "rd_attack_planning": rd_attack_planning,
    "budget_regret": budget_regret,
    "budget_mi": budget_mi,
    "blockworld_qlearning": blockworld_qlearning,
    "permutation_attack": permutation_attack,
    "value_surface": value_surface,
    "fano_check": fano_check,
}


def run_experiment(config: dict) -> Result:
    return EXPERIMENTS[config["experiment"]](config["params"], config["seed"])
