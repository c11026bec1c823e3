"""Command-line front end.

Exit codes: 0 success, 2 malformed or missing input, 3 an output failed its
own invariants, 4 the solver could not certify the threshold (report still
written), 5 a verification check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .bounds import bellman_residual, suboptimality_bound, surrogate_gap
from .dp import BellmanConfig
from .estimation import ErrorBound, estimate_model, l1_error_bound, true_mismeasure
from .fileio import (
    MalformedInput,
    error_to_json,
    load_error,
    load_mdp,
    load_policy,
    load_trajectories,
    mdp_to_json,
    write_json,
)
from .mdp_core import PLAIN, TabularMdp, policy_return, validate_mdp
from .oracle import (
    EnumerationTooLarge,
    InfeasibleConstraint,
    dual_curve,
    exact_constrained_optimum,
    lambda_grid,
    strong_duality_gap,
)
from .saddle import SaddleConfig, SaddleSolution, solve_saddle

log = logging.getLogger("safemdp")

EXIT_OK = 0
EXIT_MALFORMED = 2
EXIT_INVARIANT = 3
EXIT_INFEASIBLE = 4
EXIT_CHECK_FAILED = 5

DEFAULT_CONFIDENCE_DELTA = 0.05
NOT_APPLICABLE_INVALID = "not applicable: bound invalid"
NOT_APPLICABLE_UNCERTIFIED = "not applicable: not certified"


class InputError(Exception):
    """Raised for anything that maps to exit code 2."""


class OutputInvariantError(Exception):
    """Raised when a produced artifact fails its own invariants (exit 3)."""


@dataclass
class RunManifest:
    """Resolved inputs and outputs of one command invocation."""

    command: str
    input_paths: dict = field(default_factory=dict)
    output_path: Optional[str] = None
    seed: Optional[int] = None
    extra_outputs: dict = field(default_factory=dict)

    REQUIRED = {
        "estimate": ("trajectories", "template"),
        "solve": (),
        "verify": ("mdp", "sim_mdp", "error"),
        "evaluate": ("mdp", "policy"),
    }

    def require(self, *roles: str) -> None:
        for role in roles:
            if not self.input_paths.get(role):
                raise InputError(f"missing required input: {role}")

    def check(self) -> None:
        self.require(*self.REQUIRED[self.command])
        if self.command == "solve":
            has_sim = self.input_paths.get("sim_mdp") and self.input_paths.get("error")
            has_data = self.input_paths.get("trajectories") and self.input_paths.get("template")
            if not (has_sim or has_data):
                missing = "sim_mdp" if not self.input_paths.get("sim_mdp") else "error"
                raise InputError(f"missing required input: {missing} (or trajectories + template)")


# ------------------------------------------------------------------ helpers


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"config: {exc}") from exc
    if not isinstance(payload, dict):
        raise InputError("config: expected a JSON object")
    return payload


def _saddle_config(args, overrides: dict) -> SaddleConfig:
    names = {f.name for f in fields(SaddleConfig)} - {"bellman"}
    values = {k: v for k, v in overrides.items() if k in names}
    for name in ("lambda_max", "step_alpha0", "outer_tol", "max_outer_iters"):
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = flag
    bellman = {k: v for k, v in overrides.get("bellman", {}).items()}
    try:
        return SaddleConfig(bellman=BellmanConfig(**bellman), **values)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config: {exc}") from exc


def _with_gamma(mdp: TabularMdp, gamma: Optional[float]) -> TabularMdp:
    return mdp if gamma is None else mdp.replace(gamma=gamma)


def _load_valid_mdp(path: str, role: str, gamma: Optional[float]) -> TabularMdp:
    mdp = _with_gamma(load_mdp(path), gamma)
    problems = validate_mdp(mdp)
    if problems:
        raise InputError(f"{role}: " + "; ".join(problems))
    return mdp


def _estimate(manifest: RunManifest, args, template: TabularMdp) -> tuple[TabularMdp, ErrorBound]:
    batch = load_trajectories(manifest.input_paths["trajectories"], template.n_states, template.n_actions)
    delta = args.confidence_delta if args.confidence_delta is not None else DEFAULT_CONFIDENCE_DELTA
    if not 0.0 < delta < 1.0:
        raise InputError("confidence delta must lie in (0, 1)")
    if args.smoothing is not None and args.smoothing < 0:
        raise InputError("smoothing must be non-negative")
    sim = estimate_model(batch, template, args.smoothing)
    return sim, l1_error_bound(batch, template.n_states, delta)


def _resolve_m_b(manifest: RunManifest, args) -> float:
    if args.m_b is not None:
        return float(args.m_b)
    paths = manifest.input_paths
    if paths.get("m_b_file"):
        try:
            with open(paths["m_b_file"], encoding="utf-8") as fh:
                return float(json.load(fh)["return"])
        except (OSError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"m_b_file: {exc}") from exc
    if paths.get("baseline") and paths.get("mdp"):
        true = _load_valid_mdp(paths["mdp"], "mdp", args.gamma_override)
        return policy_return(true, load_policy(paths["baseline"]))
    raise InputError("missing required input: m_b (use --m-b, --m-b-file, or --baseline with --true-mdp)")


def _check_solution(solution: SaddleSolution) -> None:
    trace = np.asarray(solution.f_min_trace)
    if np.any(np.diff(trace) > 0):
        raise OutputInvariantError("f_min trace increased")
    lam = np.asarray(solution.lambda_trace)
    if np.any(lam < 0) or np.any(lam > solution.lambda_max):
        raise OutputInvariantError("multiplier left [0, lambda_max]")


# ----------------------------------------------------------------- commands


def cmd_estimate(manifest: RunManifest, args) -> int:
    template = _load_valid_mdp(manifest.input_paths["template"], "template", args.gamma_override)
    sim, error = _estimate(manifest, args, template)
    problems = validate_mdp(sim)
    if problems:
        raise OutputInvariantError("estimated model: " + "; ".join(problems))
    write_json(manifest.output_path, mdp_to_json(sim))
    write_json(manifest.extra_outputs["error"], error_to_json(error))
    return EXIT_OK


def solve_report(sim: TabularMdp, error: ErrorBound, m_b: float, cfg: SaddleConfig) -> tuple[dict, SaddleSolution]:
    """Run the solver and the bound computation; return the JSON report and the solution."""
    solution = solve_saddle(sim, error, m_b, cfg)
    _check_solution(solution)
    report = solution.to_json()
    report["deployed_policy"] = solution.deployed_policy.to_json()
    report["bounds"] = suboptimality_bound(sim, error, solution).to_json()
    return report, solution


def cmd_solve(manifest: RunManifest, args) -> int:
    paths = manifest.input_paths
    cfg = _saddle_config(args, _load_config(paths.get("config")))
    if paths.get("sim_mdp") and paths.get("error"):
        sim = _load_valid_mdp(paths["sim_mdp"], "sim_mdp", args.gamma_override)
        error = load_error(paths["error"])
    else:
        template = _load_valid_mdp(paths["template"], "template", args.gamma_override)
        sim, error = _estimate(manifest, args, template)
    if error.e.shape != sim.rewards.shape:
        raise InputError(f"error: shape {error.e.shape} does not match sim_mdp {sim.rewards.shape}")
    m_b = _resolve_m_b(manifest, args)
    report, solution = solve_report(sim, error, m_b, cfg)
    write_json(manifest.output_path, report)
    return EXIT_OK if solution.feasible else EXIT_INFEASIBLE


def _check(name: str, value, tolerance, passed, detail: str = "") -> dict:
    status = passed if isinstance(passed, str) else ("pass" if passed else "fail")
    out = {"name": name, "value": value, "tolerance": tolerance, "status": status}
    if detail:
        out["detail"] = detail
    return out


def verification_checks(
    true: TabularMdp,
    sim: TabularMdp,
    error: ErrorBound,
    m_b: float,
    cfg: SaddleConfig,
    grid_step: float = 1e-3,
) -> tuple[list, dict]:
    """Run the oracle checks on one instance; returns the check list and a summary."""
    resolved = cfg.resolve(sim)
    solution = solve_saddle(sim, error, m_b, resolved)
    perf = suboptimality_bound(sim, error, solution, true_mdp=true)
    valid = error.covers(true_mismeasure(true, sim), tol=1e-12)
    grid = lambda_grid(resolved.lambda_max, grid_step)
    checks = []

    try:
        gap = strong_duality_gap(true, sim, m_b, grid)
        checks.append(_check("strong_duality_gap", gap, 1e-4, gap <= 1e-4))
    except InfeasibleConstraint as exc:
        checks.append(_check("strong_duality_gap", None, 1e-4, "not applicable: constraint infeasible", str(exc)))

    f_star = float(dual_curve(sim, error, m_b, grid).min())
    diff = abs(solution.dual_value - f_star)
    checks.append(_check("dual_vs_grid", diff, 1e-4, diff <= 1e-4))

    deployed = solution.deployed_policy
    if valid:
        gap = surrogate_gap(true, sim, error, solution.policy_hat, solution.lambda_hat, m_b)
        checks.append(_check("surrogate_domination", gap, -1e-9, gap >= -1e-9))
        checks.append(_check("br_domination", perf.br_exact - perf.br_upper, 1e-9, perf.br_exact <= perf.br_upper + 1e-9))
    else:
        checks.append(_check("surrogate_domination", None, -1e-9, NOT_APPLICABLE_INVALID))
        checks.append(_check("br_domination", None, 1e-9, NOT_APPLICABLE_INVALID))

    true_return = policy_return(true, deployed)
    if not valid:
        checks.append(_check("safety", None, 1e-7, NOT_APPLICABLE_INVALID))
        checks.append(_check("bound_sandwich", None, 1e-9, NOT_APPLICABLE_INVALID))
    elif not perf.feasible_certified:
        checks.append(_check("safety", None, 1e-7, NOT_APPLICABLE_UNCERTIFIED))
        checks.append(_check("bound_sandwich", None, 1e-9, NOT_APPLICABLE_UNCERTIFIED))
    else:
        checks.append(_check("safety", true_return - m_b, -1e-7, true_return >= m_b - 1e-7))
        optimum = exact_constrained_optimum(true, sim, m_b)
        shortfall = policy_return(true, optimum.best_policy) - true_return
        ok = -1e-9 <= shortfall <= perf.suboptimality_bound + 1e-9
        checks.append(_check("bound_sandwich", shortfall, perf.suboptimality_bound, ok))

    summary = {
        "error_bound_valid": bool(valid),
        "m_b": m_b,
        "lambda_hat": solution.lambda_hat,
        "dual_value": solution.dual_value,
        "feasible_certified": perf.feasible_certified,
        "true_return": true_return,
        "bounds": perf.to_json(),
    }
    return checks, summary


def cmd_verify(manifest: RunManifest, args) -> int:
    paths = manifest.input_paths
    cfg = _saddle_config(args, _load_config(paths.get("config")))
    true = _load_valid_mdp(paths["mdp"], "mdp", args.gamma_override)
    sim = _load_valid_mdp(paths["sim_mdp"], "sim_mdp", args.gamma_override)
    error = load_error(paths["error"])
    if error.e.shape != sim.rewards.shape or true.transitions.shape != sim.transitions.shape:
        raise InputError("mdp, sim_mdp and error dimensions disagree")
    m_b = _resolve_m_b(manifest, args)
    try:
        checks, summary = verification_checks(true, sim, error, m_b, cfg, args.grid_step)
    except EnumerationTooLarge as exc:
        raise InputError(f"instance too large for verification: {exc}") from exc
    failed = [c["name"] for c in checks if c["status"] == "fail"]
    write_json(manifest.output_path, {"checks": checks, "all_passed": not failed, **summary})
    for c in checks:
        print(f"{c['name']}: {c['status']}")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_evaluate(manifest: RunManifest, args) -> int:
    paths = manifest.input_paths
    mdp = _load_valid_mdp(paths["mdp"], "mdp", args.gamma_override)
    policy = load_policy(paths["policy"])
    if policy.state_space != PLAIN:
        raise InputError("policy: evaluation needs a plain-state policy")
    try:
        value = policy_return(mdp, policy)
    except ValueError as exc:
        raise InputError(f"policy: {exc}") from exc
    if not math.isfinite(value):
        raise OutputInvariantError("return is not finite")
    if manifest.output_path:
        write_json(manifest.output_path, {"return": value})
    print(repr(value))
    return EXIT_OK


COMMANDS = {"estimate": cmd_estimate, "solve": cmd_solve, "verify": cmd_verify, "evaluate": cmd_evaluate}


# ------------------------------------------------------------------ parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="safemdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--gamma-override", type=float, help="replace the discount factor of every loaded model")
    common.add_argument("--config", help="JSON file of solver settings (flags take precedence)")

    est_flags = argparse.ArgumentParser(add_help=False)
    est_flags.add_argument("--trajectories", help="JSON-lines file of observed transitions")
    est_flags.add_argument("--template", help="MDP supplying rewards, discount and initial state")
    est_flags.add_argument("--confidence-delta", type=float, help=f"failure probability (default {DEFAULT_CONFIDENCE_DELTA})")
    est_flags.add_argument("--smoothing", type=float, help="additive smoothing (default 1/n_states)")

    solver = argparse.ArgumentParser(add_help=False)
    solver.add_argument("--lambda-max", type=float)
    solver.add_argument("--step-alpha0", type=float)
    solver.add_argument("--outer-tol", type=float)
    solver.add_argument("--max-outer-iters", type=int)
    solver.add_argument("--m-b", type=float, help="safety threshold")
    solver.add_argument("--m-b-file", help="evaluate output whose return is the threshold")
    solver.add_argument("--baseline", help="baseline policy; with --true-mdp its return is the threshold")

    p = sub.add_parser("estimate", parents=[common, est_flags], help="build the simulated model and error bound")
    p.add_argument("--out", required=True, help="simulated MDP output")
    p.add_argument("--error-out", required=True, help="error bound output")

    p = sub.add_parser("solve", parents=[common, est_flags, solver], help="compute a certified policy")
    p.add_argument("--sim-mdp")
    p.add_argument("--error")
    p.add_argument("--true-mdp", help="true model, used only to compute the threshold from --baseline")
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", parents=[common, solver], help="oracle checks against a known true model")
    p.add_argument("--true-mdp")
    p.add_argument("--sim-mdp")
    p.add_argument("--error")
    p.add_argument("--grid-step", type=float, default=1e-3)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="exact discounted return of a policy")
    p.add_argument("--mdp")
    p.add_argument("--policy")
    p.add_argument("--out")
    return parser


def manifest_from_args(args) -> RunManifest:
    roles = {
        "mdp": getattr(args, "true_mdp", None) or getattr(args, "mdp", None),
        "sim_mdp": getattr(args, "sim_mdp", None),
        "trajectories": getattr(args, "trajectories", None),
        "template": getattr(args, "template", None),
        "error": getattr(args, "error", None),
        "policy": getattr(args, "policy", None),
        "baseline": getattr(args, "baseline", None),
        "m_b_file": getattr(args, "m_b_file", None),
        "config": getattr(args, "config", None),
    }
    extra = {"error": args.error_out} if args.command == "estimate" else {}
    return RunManifest(
        command=args.command,
        input_paths={k: v for k, v in roles.items() if v},
        output_path=getattr(args, "out", None),
        extra_outputs=extra,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    for name in ("m_b", "confidence_delta", "smoothing"):
        if getattr(args, name, None) is not None and not math.isfinite(getattr(args, name)):
            print(f"error: --{name.replace('_', '-')} must be finite", file=sys.stderr)
            return EXIT_MALFORMED
    manifest = manifest_from_args(args)
    try:
        manifest.check()
        return COMMANDS[args.command](manifest, args)
    except (InputError, MalformedInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except OutputInvariantError as exc:
        print(f"error: output invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
