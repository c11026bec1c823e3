"""JSON readers and writers for models, policies, error bounds and trajectories."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .estimation import ErrorBound, TrajectoryBatch
from .mdp_core import PolicyTable, TabularMdp


class MalformedInput(ValueError):
    pass


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise MalformedInput(f"{path}: file not found") from exc
    except json.JSONDecodeError as exc:
        raise MalformedInput(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, payload) -> None:
    """Write ``payload`` with sorted keys so identical inputs give identical bytes."""
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def mdp_to_json(mdp: TabularMdp) -> dict:
    out = {
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "r_max": mdp.r_max,
        "initial_state": mdp.initial_state,
        "rewards": mdp.rewards.tolist(),
        "transitions": mdp.transitions.tolist(),
    }
    if mdp.initial_distribution is not None:
        out["initial_distribution"] = mdp.initial_distribution.tolist()
    return out


def mdp_from_json(payload: dict, source: str = "mdp") -> TabularMdp:
    try:
        mdp = TabularMdp(
            rewards=payload["rewards"],
            transitions=payload["transitions"],
            gamma=payload["gamma"],
            r_max=payload["r_max"],
            initial_state=payload.get("initial_state", 0),
            initial_distribution=payload.get("initial_distribution"),
        )
    except KeyError as exc:
        raise MalformedInput(f"{source}: missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise MalformedInput(f"{source}: {exc}") from exc
    for key, actual in (("n_states", mdp.n_states), ("n_actions", mdp.n_actions)):
        if key in payload and payload[key] != actual:
            raise MalformedInput(f"{source}: {key}={payload[key]} but arrays imply {actual}")
    return mdp


def load_mdp(path) -> TabularMdp:
    return mdp_from_json(_read_json(path), str(path))


def load_policy(path) -> PolicyTable:
    payload = _read_json(path)
    try:
        return PolicyTable.from_json(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc


def error_to_json(error: ErrorBound) -> dict:
    return {"e": error.e.tolist()}


def load_error(path) -> ErrorBound:
    payload = _read_json(path)
    try:
        return ErrorBound(np.asarray(payload["e"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedInput(f"{path}: {exc}") from exc


def write_trajectories(path, batch: TrajectoryBatch) -> None:
    lines = [json.dumps({"x": int(x), "a": int(a), "y": int(y)}) for x, a, y in batch.transitions_observed]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_trajectories(path, n_states: int, n_actions: int) -> TrajectoryBatch:
    triples = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    triples.append((int(rec["x"]), int(rec["a"]), int(rec["y"])))
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise MalformedInput(f"{path}:{lineno}: bad trajectory record ({exc})") from exc
    except FileNotFoundError as exc:
        raise MalformedInput(f"{path}: file not found") from exc
    try:
        return TrajectoryBatch.from_triples(triples, n_states, n_actions)
    except ValueError as exc:
        raise MalformedInput(f"{path}: {exc}") from exc
