"""Experiment configuration: a versioned JSON document.

Example::

    {
      "schema": "covert-qcd/1",
      "scenario": {
        "channel": {"type": "product", "alice": [[...], [...]], "eve": [[...], [...]]},
        "rho": 0.05,
        "delta": 0.0416666666667
      },
      "grid": [1, 2, 3],
      "n_runs": 10000,
      "seed": 2024,
      "policies": ["innocent", "constant_beta", "dp"],
      "dp": {"grid_size": 1024, "actions": "default"},
      "output_dir": "out"
    }

``channel.type`` is ``product`` (``alice[x][theta]`` and ``eve[x][theta]``
probability vectors) or ``joint`` (``tables[x][theta][y][z]``). ``dp.actions``
is ``default``, ``ladder`` or an explicit list of rates.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .model import ChannelAssumptionError, ChannelSpec, Prior, Scenario, build_channel, product_channel

SCHEMA = "covert-qcd/1"
POLICY_NAMES = ("innocent", "constant_beta", "dp")
MIN_RUNS = 100
BUNDLED = {"@reference": "reference_scenario.json"}


class ConfigError(ValueError):
    """Invalid configuration; the message carries a line number when one is known."""

    def __init__(self, message: str, line: int | None = None, source: str = "<config>") -> None:
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class DpOptions:
    grid_size: int = 1024
    actions: str | tuple[float, ...] = "default"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    channel: ChannelSpec
    rho: float
    delta: float
    grid: tuple[float, ...]
    n_runs: int
    seed: int
    policies: tuple[str, ...]
    dp: DpOptions = field(default_factory=DpOptions)
    output_dir: str = "out"

    def scenario(self, abs_ln_alpha: float) -> Scenario:
        return Scenario(self.channel, Prior(self.rho), self.delta, float(abs_ln_alpha))


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, exc.lineno, source) from None
    if not isinstance(doc, dict):
        raise ConfigError("top level must be a JSON object", 1, source)

    def fail(key: str, message: str):
        raise ConfigError(message, _line_of(text, key), source)

    if doc.get("schema") != SCHEMA:
        fail("schema", f"expected \"schema\": \"{SCHEMA}\", got {doc.get('schema')!r}")

    sc = doc.get("scenario")
    if not isinstance(sc, dict):
        fail("scenario", "missing \"scenario\" object")
    ch = sc.get("channel")
    if not isinstance(ch, dict):
        fail("channel", "missing \"channel\" object")
    try:
        kind = ch.get("type")
        if kind == "product":
            channel = product_channel(ch["alice"], ch["eve"])
        elif kind == "joint":
            channel = build_channel(ch["tables"])
        else:
            fail("type", f"channel type must be 'product' or 'joint', got {kind!r}")
    except ChannelAssumptionError as exc:
        fail("channel", f"channel violates the '{exc.assumption}' assumption: {exc}")
    except (KeyError, ValueError, TypeError) as exc:
        fail("channel", f"invalid channel: {exc}")

    rho, delta = sc.get("rho"), sc.get("delta")
    if not isinstance(rho, (int, float)) or not 0.0 < rho < 1.0:
        fail("rho", f"rho must be a number in ]0, 1[, got {rho!r}")
    if not isinstance(delta, (int, float)) or delta < 0.0:
        fail("delta", f"delta must be a non-negative number, got {delta!r}")

    grid = doc.get("grid")
    if not isinstance(grid, list) or not grid:
        fail("grid", "grid must be a non-empty list of |ln alpha| values")
    if not all(isinstance(g, (int, float)) and not isinstance(g, bool) for g in grid):
        fail("grid", "grid entries must be numbers")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        fail("grid", "grid must be strictly increasing")
    if grid[0] <= 0.6931471805599453:
        fail("grid", f"every |ln alpha| must exceed ln 2 so that alpha < 1/2, got {grid[0]}")

    n_runs = doc.get("n_runs")
    if not isinstance(n_runs, int) or isinstance(n_runs, bool) or n_runs < MIN_RUNS:
        fail("n_runs", f"n_runs must be an integer >= {MIN_RUNS}, got {n_runs!r}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        fail("seed", f"seed must be an integer in [0, 2^64), got {seed!r}")

    policies = doc.get("policies", list(POLICY_NAMES))
    if not isinstance(policies, list) or not policies or any(p not in POLICY_NAMES for p in policies):
        fail("policies", f"policies must be a non-empty subset of {list(POLICY_NAMES)}, got {policies!r}")

    dp_doc = doc.get("dp", {})
    if not isinstance(dp_doc, dict):
        fail("dp", "dp must be an object")
    grid_size = dp_doc.get("grid_size", 1024)
    if not isinstance(grid_size, int) or grid_size < 64:
        fail("grid_size", f"dp.grid_size must be an integer >= 64, got {grid_size!r}")
    actions = dp_doc.get("actions", "default")
    if isinstance(actions, list):
        if not actions or any(not isinstance(a, (int, float)) or not 0.0 <= a <= 1.0 for a in actions):
            fail("actions", "explicit dp.actions must be rates in [0, 1]")
        if 0 not in actions:
            fail("actions", "dp.actions must contain 0")
        actions = tuple(float(a) for a in actions)
    elif actions not in ("default", "ladder"):
        fail("actions", f"dp.actions must be 'default', 'ladder' or a list, got {actions!r}")

    output_dir = doc.get("output_dir", "out")
    if not isinstance(output_dir, str):
        fail("output_dir", "output_dir must be a string")

    return ExperimentConfig(
        channel=channel,
        rho=float(rho),
        delta=float(delta),
        grid=tuple(float(g) for g in grid),
        n_runs=n_runs,
        seed=seed,
        policies=tuple(policies),
        dp=DpOptions(grid_size=grid_size, actions=actions),
        output_dir=output_dir,
    )


def read_config_text(path: str) -> tuple[str, str]:
    """Return ``(text, source_name)``; ``@reference`` names the bundled example."""
    if path in BUNDLED:
        ref = resources.files("covert_qcd").joinpath("data").joinpath(BUNDLED[path])
        return ref.read_text(encoding="utf-8"), BUNDLED[path]
    p = Path(path)
    try:
        return p.read_text(encoding="utf-8"), str(p)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(p)) from None


def load_config(path: str) -> ExperimentConfig:
    text, source = read_config_text(path)
    return parse_config(text, source)
