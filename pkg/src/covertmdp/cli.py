"""Command-line front-end.

Subcommands: ``validate``, ``solve-nominal``, ``solve-augmented``,
``simulate``, ``plan``. Models are either builtin names (``example1``,
``gridworld``) or paths to model files; a JSON file with grid dimensions is
treated as a grid-world spec and expanded on load. Exit codes: 0 success,
1 domain error (bad model data, non-convergence, inadmissibility), 2 I/O or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augmented as aug
from . import belief as bel
from . import mdp
from . import models
from . import rho
from . import sim
from .errors import CovertMdpError, ModelFormatError

AUGMENTED_STATE_CAP = 6
BUILTIN_NAMES = ("example1", "gridworld")


@dataclass
class Scenario:
    name: str
    model: mdp.MdpModel
    obs: bel.ObservationModel | None
    start_belief: np.ndarray
    start_state: int | None  # None: draw the start from the belief
    grid_spec: models.GridWorldSpec | None


def _load_scenario(model_arg: str, obs_arg: str | None) -> Scenario:
    if model_arg == "example1":
        model, obs = models.example1_model()
        start = bel.uniform_belief(model.num_states)
        return Scenario("example1", model, obs, start, None, None)
    if model_arg == "gridworld":
        spec = models.desk_gridworld()
        model, obs = models.gridworld_model(spec)
        start = bel.uniform_belief(model.num_states)
        return Scenario(
            "gridworld", model, obs, start, spec.cell_index(*spec.start), spec
        )
    path = Path(model_arg)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ModelFormatError(["top-level document must be an object"])
    if "width" in doc and "height" in doc:
        spec = models.gridworld_spec_from_dict(doc)
        model, obs = models.gridworld_model(spec)
        start = bel.uniform_belief(model.num_states)
        return Scenario(
            str(path), model, obs, start, spec.cell_index(*spec.start), spec
        )
    model = mdp.model_from_dict(doc)
    obs = bel.load_observation_file(obs_arg, model.num_states) if obs_arg else None
    return Scenario(
        str(path), model, obs, bel.uniform_belief(model.num_states), None, None
    )


def _require_obs(scn: Scenario) -> bel.ObservationModel:
    if scn.obs is None:
        raise FileNotFoundError(
            "this command needs an observation model; pass --obs for file models"
        )
    return scn.obs


def _nominal(scn: Scenario, tol: float):
    result = mdp.nominal_value_iteration(scn.model, tol=tol)
    if not result.converged:
        raise CovertMdpError(
            f"nominal value iteration did not converge "
            f"(residual {result.residual!r} after {result.iterations} sweeps)"
        )
    policy = mdp.extract_nominal_policy(scn.model, result.values)
    return result, policy


def _echo(args: argparse.Namespace, keys: list[str]) -> dict:
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


# ---------------------------------------------------------------------------
# subcommands

def cmd_validate(args: argparse.Namespace) -> int:
    try:
        scn = _load_scenario(args.model, args.obs)
    except ModelFormatError as exc:
        for line in exc.diagnostics:
            print(f"invalid: {line}", file=sys.stderr)
        return 1
    problems = mdp.validate_model(scn.model)
    if scn.obs is not None:
        problems += bel.validate_observation_model(scn.obs, scn.model.num_states)
    for line in problems:
        print(f"invalid: {line}", file=sys.stderr)
    if problems:
        return 1
    print(f"{scn.name}: model ok ({scn.model.num_states} states, "
          f"{scn.model.num_actions} actions)")
    return 0


def cmd_solve_nominal(args: argparse.Namespace) -> int:
    scn = _load_scenario(args.model, args.obs)
    result, policy = _nominal(scn, args.tol)
    ties = np.flatnonzero(policy.tie_flags)
    if ties.size:
        print(f"warning: maximizer ties at states {ties.tolist()}", file=sys.stderr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "nominal_values.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "model": scn.name,
                "tol": args.tol,
                "values": result.values.tolist(),
                "residual": result.residual,
                "iterations": result.iterations,
            },
            fh, indent=1,
        )
        fh.write("\n")
    with open(out / "nominal_policy.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "model": scn.name,
                "actions": policy.actions.tolist(),
                "ties": policy.tie_flags.tolist(),
            },
            fh, indent=1,
        )
        fh.write("\n")
    if scn.grid_spec is not None:
        grid = result.values.reshape(scn.grid_spec.height, scn.grid_spec.width)
        lines = [",".join(repr(float(v)) for v in row) for row in grid]
        with open(out / "nominal_value_grid.csv", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines))
            fh.write("\n")
    print(f"{scn.name}: solved in {result.iterations} sweeps, "
          f"residual {result.residual:.3e}, files in {out}")
    return 0


def cmd_solve_augmented(args: argparse.Namespace) -> int:
    scn = _load_scenario(args.model, args.obs)
    obs = _require_obs(scn)
    if scn.model.num_states > AUGMENTED_STATE_CAP:
        print(
            f"refusing: {scn.model.num_states} states exceeds the "
            f"state-belief grid cap ({AUGMENTED_STATE_CAP}); use the "
            f"receding-horizon planner (simulate rho / plan) instead",
            file=sys.stderr,
        )
        return 1
    _, policy = _nominal(scn, mdp.DEFAULT_VI_TOL)
    pa = mdp.induced_chain(scn.model, policy)
    result = aug.solve_augmented_vi(
        scn.model, obs, pa,
        reward_weight=args.wn, exposure_weight=args.wa,
        resolution=args.grid_res, tol=args.tol,
    )
    if not result.converged:
        print(
            f"augmented value iteration did not converge "
            f"(residual {result.residual!r} after {result.iterations} sweeps)",
            file=sys.stderr,
        )
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aug.save_value_file(result.value, out / "augmented_values.json")
    if result.fallback_points and args.verbose:
        print(
            f"note: {len(result.fallback_points)} grid points had no "
            f"admissible action; backup used the full action set there",
            file=sys.stderr,
        )
    print(
        f"{scn.name}: augmented solve converged in {result.iterations} sweeps, "
        f"residual {result.residual:.3e}, grid points "
        f"{result.value.grid.num_points}, files in {out}"
    )
    return 0


def _build_controller(kind: str, scn: Scenario, args: argparse.Namespace):
    obs = _require_obs(scn)
    nominal, policy = _nominal(scn, mdp.DEFAULT_VI_TOL)
    pa = mdp.induced_chain(scn.model, policy)
    if kind == "nominal":
        return sim.NominalController(policy), pa
    if kind == "rho":
        config = rho.PlannerConfig(
            horizon=args.horizon,
            reward_weight=args.wn,
            exposure_weight=args.wa,
            tail_exposure_weight=args.wap,
        )
        return sim.RecedingHorizonController(
            scn.model, obs, pa, nominal.values, config
        ), pa
    if kind == "grid-vi":
        if scn.model.num_states > AUGMENTED_STATE_CAP:
            raise CovertMdpError(
                f"{scn.model.num_states} states exceeds the state-belief grid "
                f"cap ({AUGMENTED_STATE_CAP}); use the rho controller instead"
            )
        result = aug.solve_augmented_vi(
            scn.model, obs, pa,
            reward_weight=args.wn, exposure_weight=args.wa,
            resolution=args.grid_res,
        )
        if not result.converged:
            raise CovertMdpError("augmented value iteration did not converge")
        return sim.AugmentedValueController(scn.model, obs, pa, result.value), pa
    raise ValueError(f"unknown controller kind {kind!r}")


def _simulate_one(payload) -> sim.Trace:
    model, obs, pa, controller, o0, steps, seed_base, index, x0 = payload
    return sim.run_closed_loop(
        model, obs, pa, controller, o0, steps, seed_base, index, x0=x0
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    scn = _load_scenario(args.model, args.obs)
    obs = _require_obs(scn)
    controller, pa = _build_controller(args.controller, scn, args)
    payloads = [
        (scn.model, obs, pa, controller, scn.start_belief,
         args.steps, args.seed_base, i, scn.start_state)
        for i in range(args.seeds)
    ]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            traces = list(pool.map(_simulate_one, payloads))
    else:
        traces = [_simulate_one(p) for p in payloads]
    summary = sim.aggregate_runs(traces)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for trace in traces:
        stem = f"trace_{trace.run_index:03d}"
        sim.write_trace_csv(trace, out / f"{stem}.csv")
        sim.write_trace_metadata(trace, out / f"{stem}.meta.json")
        if args.beliefs:
            sim.write_belief_csv(trace, out / f"{stem}.beliefs.csv")
    doc = {
        "config": {
            "controller": args.controller,
            "model": scn.name,
            **_echo(args, ["wn", "wa", "wap", "horizon", "grid_res",
                           "steps", "seeds", "seed_base"]),
        },
        "summary": sim.summary_to_dict(summary),
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    if args.verbose:
        for trace in traces:
            print(
                f"run {trace.run_index}: reward rate {trace.reward_rate!r}, "
                f"exposure rate {trace.exposure_rate!r}"
            )
    print(
        f"{scn.name} [{controller.controller_id}] over {args.seeds} runs of "
        f"{args.steps} steps: reward rate {summary.reward_rate:.4f} "
        f"(stderr {summary.reward_stderr:.4f}), exposure rate "
        f"{summary.exposure_rate:.4f} (stderr {summary.exposure_stderr:.4f}); "
        f"files in {out}"
    )
    return 0


def cmd_plan(args: argparse.Namespace) -> int:
    scn = _load_scenario(args.model, args.obs)
    obs = _require_obs(scn)
    nominal, policy = _nominal(scn, mdp.DEFAULT_VI_TOL)
    pa = mdp.induced_chain(scn.model, policy)
    config = rho.PlannerConfig(
        horizon=args.horizon,
        reward_weight=args.wn,
        exposure_weight=args.wa,
        tail_exposure_weight=args.wap,
    )
    o0 = scn.start_belief
    log_path = None
    if args.verbose:
        log_dir = Path(args.out) if args.out else Path(".")
        log_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_dir / "plan_log.jsonl"
        log_path.unlink(missing_ok=True)  # rebuilt below, keeping reruns identical
        log_path = str(log_path)
    rows = []
    for x in range(scn.model.num_states):
        result = rho.plan(
            scn.model, obs, pa, nominal.values, x, o0, config, log_path=log_path
        )
        rows.append(
            {
                "state": x,
                "actions": list(result.actions),
                "objective": result.objective,
                "reward_term": result.reward_term,
                "tail_term": result.tail_term,
                "detection_term": result.detection_term,
                "sequences_scored": result.sequences_scored,
                "tied": result.tied,
            }
        )
        tie_note = ", tied" if result.tied else ""
        print(
            f"state {x}: actions {list(result.actions)}, "
            f"objective {result.objective:.6f} "
            f"(reward {result.reward_term:.6f}, tail {result.tail_term:.6f}, "
            f"exposure {result.detection_term:.6f}, "
            f"{result.sequences_scored} sequences{tie_note})"
        )
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            "config": {
                "model": scn.name,
                **_echo(args, ["wn", "wa", "wap", "horizon"]),
            },
            "plans": rows,
        }
        with open(out / "plan.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
            fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covertmdp",
        description="Detection-averse control for finite MDPs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser):
        p.add_argument("--model", required=True,
                       help="builtin name (example1, gridworld) or model file")
        p.add_argument("--obs", default=None,
                       help="observation model file (file models only)")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("validate", help="check model invariants")
    add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve-nominal", help="value iteration without observer")
    add_common(p)
    p.add_argument("--tol", type=float, default=mdp.DEFAULT_VI_TOL)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_solve_nominal)

    p = sub.add_parser("solve-augmented", help="value iteration on the state-belief grid")
    add_common(p)
    p.add_argument("--wn", type=float, default=1.0, help="reward weight")
    p.add_argument("--wa", type=float, default=0.0, help="exposure weight")
    p.add_argument("--grid-res", type=int, default=aug.DEFAULT_RESOLUTION)
    p.add_argument("--tol", type=float, default=aug.DEFAULT_AVI_TOL)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_solve_augmented)

    p = sub.add_parser("simulate", help="closed-loop runs against the observer")
    p.add_argument("controller", choices=["nominal", "rho", "grid-vi"])
    add_common(p)
    p.add_argument("--wn", type=float, default=1.0, help="reward weight")
    p.add_argument("--wa", type=float, default=0.0, help="exposure weight")
    p.add_argument("--wap", type=float, default=0.0, help="tail exposure weight")
    p.add_argument("--horizon", type=int, default=rho.DEFAULT_HORIZON)
    p.add_argument("--grid-res", type=int, default=aug.DEFAULT_RESOLUTION)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--beliefs", action="store_true",
                   help="also write per-run belief CSVs (wide)")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="one planner solve per state, with diagnostics")
    add_common(p)
    p.add_argument("--wn", type=float, default=1.0, help="reward weight")
    p.add_argument("--wa", type=float, default=0.0, help="exposure weight")
    p.add_argument("--wap", type=float, default=0.0, help="tail exposure weight")
    p.add_argument("--horizon", type=int, default=rho.DEFAULT_HORIZON)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_plan)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelFormatError as exc:
        for line in exc.diagnostics:
            print(f"error: {line}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        # before ValueError, which JSONDecodeError subclasses
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return 2
    except (CovertMdpError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
