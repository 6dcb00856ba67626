"""Scenario configuration: JSON files validated against a strict schema.

Grammar: a JSON object (RFC 8259). Every block below is optional and
defaulted; unknown keys anywhere are rejected. A written ``manifest.json``
is itself a valid configuration (its ``provenance`` block is accepted and
ignored on input).
"""

import copy
import json
import re
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, InvalidSpecError
from .noise import DiffusionConstant, ParticleSpec
from .wavefield.catalog import CATALOG
from .wavefield.fields import TOPOLOGIES, GridSpec


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AlphaConfig(_Strict):
    magnitude: float = 1.0
    phase: float = 0.0
    gamma: float = 0.0

    @model_validator(mode="after")
    def _physical(self):
        self.build()
        return self

    def build(self):
        return DiffusionConstant(self.magnitude, self.phase, self.gamma)


class ParticleConfig(_Strict):
    mass: float = 1.0
    charge: float = 0.0
    dimension: int = 1

    @model_validator(mode="after")
    def _physical(self):
        self.build()
        return self

    def build(self):
        return ParticleSpec(self.mass, self.charge, self.dimension)


class GridConfig(_Strict):
    topology: str = "line"
    bounds: list[list[float]] = Field(default_factory=lambda: [[-5.0, 5.0]])
    cells: list[int] = Field(default_factory=lambda: [50])
    dt: float = 0.01

    @field_validator("topology")
    @classmethod
    def _topology(cls, v):
        if v not in TOPOLOGIES:
            raise ValueError(f"topology must be one of {TOPOLOGIES}")
        return v

    @model_validator(mode="after")
    def _physical(self):
        self.build()
        return self

    def build(self):
        return GridSpec(self.topology, tuple(tuple(b) for b in self.bounds), tuple(self.cells), self.dt)


class PotentialConfig(_Strict):
    kind: Literal["none", "harmonic"] = "none"
    omega: float = 1.0
    flipped: bool = False


class StateConfig(_Strict):
    name: str | None = None
    params: dict[str, Any] = Field(default_factory=dict)

    @field_validator("name")
    @classmethod
    def _known(cls, v):
        if v is not None and v not in CATALOG:
            raise ValueError(f"unknown catalog state; known: {', '.join(CATALOG)}")
        return v


class InitialConfig(_Strict):
    kind: Literal["state", "gaussian", "point"] = "state"
    mean: float = 0.0
    std: float = 1.0


class EnsembleConfig(_Strict):
    count: int = 100000
    steps: int = 500
    dt: float = 0.01
    seed: int = 42
    drift_mode: Literal["density-consistent", "literal"] = "density-consistent"
    direction: Literal["forward", "backward"] = "forward"
    initial: InitialConfig = Field(default_factory=InitialConfig)

    @model_validator(mode="after")
    def _positive(self):
        if self.count < 1 or self.steps < 1 or not self.dt > 0:
            raise ValueError("count and steps must be >= 1 and dt > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self


class RelativisticConfig(_Strict):
    mass_squared_sign: Literal["+", "0", "-"] = "+"
    affine_step: float = 0.02
    windows: list[float] = Field(default_factory=lambda: [0.1, 0.5, 1.5, 3.0])
    k0: list[float] = Field(default_factory=lambda: [1.0, 0.0, 0.0])
    sigma_k: float = 0.05
    nodes: int = 6
    count: int = 3000


class OutputsConfig(_Strict):
    directory: str = "out"


class ScenarioConfig(_Strict):
    scenario: str
    description: str = ""
    alpha: AlphaConfig = Field(default_factory=AlphaConfig)
    particle: ParticleConfig = Field(default_factory=ParticleConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    potential: PotentialConfig = Field(default_factory=PotentialConfig)
    state: StateConfig = Field(default_factory=StateConfig)
    ensemble: EnsembleConfig = Field(default_factory=EnsembleConfig)
    relativistic: RelativisticConfig | None = None
    outputs: OutputsConfig = Field(default_factory=OutputsConfig)
    criteria: dict[str, float] = Field(default_factory=dict)
    provenance: dict[str, Any] | None = None

    @field_validator("scenario")
    @classmethod
    def _known_scenario(cls, v):
        from .scenarios import PIPELINES

        if v not in PIPELINES:
            raise ValueError(f"unknown scenario; known: {', '.join(sorted(PIPELINES))}")
        return v

    @model_validator(mode="after")
    def _known_criteria(self):
        from .scenarios import PIPELINES

        allowed = PIPELINES[self.scenario].defaults
        unknown = sorted(set(self.criteria) - set(allowed))
        if unknown:
            raise ValueError(f"unknown criteria {unknown}; known: {sorted(allowed)}")
        return self

    def thresholds(self):
        from .scenarios import PIPELINES

        return {**PIPELINES[self.scenario].defaults, **self.criteria}


# --- parsing ---------------------------------------------------------------------


def _locate(text, path):
    """Best-effort 1-based line of the last key in ``path`` within JSON ``text``."""
    pos = 0
    line = None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(key))).search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


def _key_path(loc):
    return ".".join(str(p) for p in loc if not str(p).startswith("function-")) or "<root>"


def apply_overrides(data, overrides):
    """Set ``a.b.c=value`` entries; values are parsed as JSON when possible."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value", key_path=item)
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.strip().split(".")
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {} if node.get(p) is None else node[p]
                if not isinstance(node[p], dict):
                    raise ConfigError(f"override {key!r} descends into a non-object", key_path=key)
            node = node[p]
        node[parts[-1]] = value
    return data


def validate_config(data, text=""):
    """Validate a parsed configuration dictionary into a :class:`ScenarioConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", key_path="<root>", line=1)
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(p for p in err["loc"] if not (isinstance(p, str) and p.startswith("function-")))
        path = _key_path(loc)
        line = _locate(text, loc) if text else None
        kind = "unknown key" if err["type"] == "extra_forbidden" else "invalid value"
        msg = err.get("msg", "")
        ctx = err.get("ctx") or {}
        if isinstance(ctx.get("error"), Exception):
            msg = str(ctx["error"])
        where = f" (line {line})" if line else ""
        raise ConfigError(f"{kind} at '{path}'{where}: {msg}", key_path=path, line=line) from None
    except InvalidSpecError as exc:
        raise ConfigError(str(exc)) from None


def load_config(source, overrides=None):
    """Read a JSON file (or a built-in preset name), apply overrides, validate."""
    from pathlib import Path

    from .scenarios import PRESETS

    path = Path(source)
    if path.exists():
        text = path.read_text()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc.msg} (line {exc.lineno})", line=exc.lineno) from None
    elif source in PRESETS:
        data = copy.deepcopy(PRESETS[source])
        text = json.dumps(data, indent=2)
    else:
        raise ConfigError(f"no such config file or preset: {source}")
    data = apply_overrides(data, overrides)
    return validate_config(data, text)
