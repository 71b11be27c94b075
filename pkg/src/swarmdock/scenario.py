"""Scenario files: strict JSON schema, defaults, and round-trip writing.

Unknown keys are rejected by name so typos in experiment configs fail
loudly instead of silently running with defaults.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

from .planning import ApfParams
from .sim import FaultEvent, FaultKind, ScenarioConfig, ScenarioError, TrajectoryKind
from .swarm import FormationSpec

_TOP_KEYS = {
    "trajectory",
    "platform_speed",
    "rectangle_extents",
    "dt",
    "duration_max",
    "seed",
    "pixel_noise_sigma",
    "faults",
    "formation",
    "apf",
    "drone_time_constant",
    "landing_threshold",
}
_APF_KEYS = {"xi", "eta", "d0", "k", "vmax"}
_FAULT_KEYS = {"t", "drone", "kind"}


def _reject_unknown(data: dict, allowed: set[str], where: str) -> None:
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ScenarioError(f"unknown key {unknown[0]!r} in {where}")


def _number(data: dict, key: str, where: str) -> float:
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"key {key!r} in {where} must be a number, got {value!r}")
    return float(value)


def parse_scenario(data: dict, name: str = "scenario") -> ScenarioConfig:
    """Build a config from a parsed scenario dict, applying defaults."""
    if not isinstance(data, dict):
        raise ScenarioError(f"scenario {name!r} must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, f"scenario {name!r}")
    kwargs: dict = {"name": name}

    if "trajectory" in data:
        raw = data["trajectory"]
        try:
            kwargs["trajectory"] = TrajectoryKind(raw)
        except ValueError:
            choices = ", ".join(k.value for k in TrajectoryKind)
            raise ScenarioError(f"trajectory must be one of: {choices}; got {raw!r}") from None
    for key in ("platform_speed", "dt", "duration_max", "pixel_noise_sigma",
                "drone_time_constant", "landing_threshold"):
        if key in data:
            kwargs[key] = _number(data, key, "scenario")
    if "seed" in data:
        seed = data["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ScenarioError(f"seed must be an integer, got {seed!r}")
        kwargs["seed"] = seed
    if "rectangle_extents" in data:
        ext = data["rectangle_extents"]
        if not (isinstance(ext, list) and len(ext) == 2):
            raise ScenarioError("rectangle_extents must be a [width, height] pair")
        kwargs["rectangle_extents"] = (float(ext[0]), float(ext[1]))
    if "faults" in data:
        faults = []
        for i, entry in enumerate(data["faults"]):
            if not isinstance(entry, dict):
                raise ScenarioError(f"faults[{i}] must be an object")
            _reject_unknown(entry, _FAULT_KEYS, f"faults[{i}]")
            for req in _FAULT_KEYS:
                if req not in entry:
                    raise ScenarioError(f"faults[{i}] is missing key {req!r}")
            try:
                kind = FaultKind(entry["kind"])
            except ValueError:
                choices = ", ".join(k.value for k in FaultKind)
                raise ScenarioError(
                    f"faults[{i}].kind must be one of: {choices}; got {entry['kind']!r}"
                ) from None
            faults.append(
                FaultEvent(t=_number(entry, "t", f"faults[{i}]"), drone_id=int(entry["drone"]), kind=kind)
            )
        kwargs["faults"] = tuple(faults)
    if "formation" in data:
        offsets = data["formation"]
        if not isinstance(offsets, list) or not offsets:
            raise ScenarioError("formation must be a non-empty list of [dx, dy] pairs")
        parsed = []
        for i, pair in enumerate(offsets):
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ScenarioError(f"formation[{i}] must be a [dx, dy] pair")
            parsed.append((float(pair[0]), float(pair[1])))
        try:
            kwargs["formation"] = FormationSpec(offsets=tuple(parsed))
        except ValueError as exc:
            raise ScenarioError(f"bad formation: {exc}") from None
    if "apf" in data:
        apf = data["apf"]
        if not isinstance(apf, dict):
            raise ScenarioError("apf must be an object")
        _reject_unknown(apf, _APF_KEYS, "apf")
        try:
            kwargs["apf"] = ApfParams(
                **{key: _number(apf, key, "apf") for key in _APF_KEYS if key in apf}
            )
        except ValueError as exc:
            raise ScenarioError(f"bad apf parameters: {exc}") from None

    try:
        return ScenarioConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return parse_scenario(data, name=path.stem)


def scenario_to_dict(config: ScenarioConfig) -> dict:
    """Schema-shaped dict for a config; inverse of parse_scenario."""
    return {
        "trajectory": config.trajectory.value,
        "platform_speed": config.platform_speed,
        "rectangle_extents": list(config.rectangle_extents),
        "dt": config.dt,
        "duration_max": config.duration_max,
        "seed": config.seed,
        "pixel_noise_sigma": config.pixel_noise_sigma,
        "faults": [
            {"t": ev.t, "drone": ev.drone_id, "kind": ev.kind.value} for ev in config.faults
        ],
        "formation": [list(pair) for pair in config.formation.offsets],
        "apf": {
            "xi": config.apf.xi,
            "eta": config.apf.eta,
            "d0": config.apf.d0,
            "k": config.apf.k,
            "vmax": config.apf.vmax,
        },
        "drone_time_constant": config.drone_time_constant,
        "landing_threshold": config.landing_threshold,
    }


def save_scenario(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(config), indent=2) + "\n", encoding="utf-8")


def bundled_scenarios() -> dict[str, Path]:
    """Name -> path for the scenario files shipped with the package."""
    base = resources.files("swarmdock") / "scenarios"
    return {p.name[: -len(".json")]: Path(str(p)) for p in sorted(base.iterdir(), key=lambda p: p.name) if p.name.endswith(".json")}
