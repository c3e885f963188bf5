"""Experiment configuration: TOML files checked against a strict schema."""

from __future__ import annotations

import sys
from importlib import resources
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

KINDS = ("matrix_cs", "image_cs", "convex_cs", "separable_cs", "symmetric_synthetic", "lamp_diagnostic")
CS_KINDS = ("matrix_cs", "image_cs", "convex_cs", "separable_cs")

# fields each kind needs in [problem]
REQUIRED = {
    "matrix_cs": ("n1", "n2", "r", "m"),
    "image_cs": ("m",),
    "convex_cs": ("n", "constrained", "rho"),
    "separable_cs": ("n", "m"),
    "symmetric_synthetic": ("n",),
    "lamp_diagnostic": ("n",),
}
DEFAULT_DENOISER = {
    "matrix_cs": "svt",
    "image_cs": "nlm",
    "convex_cs": "projection",
    "separable_cs": "soft_threshold",
    "symmetric_synthetic": "shifted_soft_threshold",
    "lamp_diagnostic": "shifted_soft_threshold",
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class Experiment(_Section):
    kind: Literal["matrix_cs", "image_cs", "convex_cs", "separable_cs", "symmetric_synthetic", "lamp_diagnostic"]
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    max_iters: int = Field(8, ge=0)
    onsager: Literal["empirical_divergence", "inner_product"] = "empirical_divergence"
    onsager_check: bool = False

    @model_validator(mode="after")
    def _seeds_nonnegative(self):
        if any(s < 0 or s >= 2**64 for s in self.seeds):
            raise ValueError("seeds must be unsigned 64-bit integers")
        return self


class Problem(_Section):
    n: Optional[int] = Field(None, gt=0)
    m: Optional[int] = Field(None, gt=0)
    n1: Optional[int] = Field(None, gt=0)
    n2: Optional[int] = Field(None, gt=0)
    r: Optional[int] = Field(None, ge=0)
    sigma_w: float = Field(0.0, ge=0)
    sparsity: float = Field(0.1, ge=0, le=1)
    constrained: Optional[int] = Field(None, ge=0)
    rho: Optional[float] = Field(None, gt=0, lt=1)
    image: str = "synthetic"  # PGM path or "synthetic"
    image_size: int = Field(64, gt=1)
    image_seed: int = Field(0, ge=0)
    noise_coef: float = Field(0.034, ge=0)
    threshold: float = Field(1.0, ge=0)
    offset_scale: float = Field(1.0, ge=0)


class DenoiserSpec(_Section):
    kind: Optional[Literal["svt", "soft_threshold", "nlm", "projection", "shifted_soft_threshold",
                           "identity", "zero"]] = None
    lambda_coef: Optional[float] = Field(None, gt=0)
    h_coef: float = Field(0.9, gt=0)
    h_floor: float = Field(1e-6, gt=0)
    patch: int = Field(5, gt=0)
    search: float = Field(5.0, gt=0)
    mc_samples: int = Field(1, ge=1)


class SeSpec(_Section):
    enabled: bool = True
    mc_samples: int = Field(10, ge=1)
    n: Optional[int] = Field(None, gt=0)


class Output(_Section):
    dir: str = "out"


class ExperimentConfig(_Section):
    experiment: Experiment
    problem: Problem = Field(default_factory=Problem)
    denoiser: DenoiserSpec = Field(default_factory=DenoiserSpec)
    se: SeSpec = Field(default_factory=SeSpec)
    output: Output = Field(default_factory=Output)

    @model_validator(mode="after")
    def _kind_fields(self):
        kind = self.experiment.kind
        missing = [k for k in REQUIRED[kind] if getattr(self.problem, k) is None]
        if missing:
            raise ValueError(f"problem.{missing[0]} is required for kind {kind!r}")
        p = self.problem
        if kind == "matrix_cs" and p.r > min(p.n1, p.n2):
            raise ValueError("problem.r must not exceed min(n1, n2)")
        if kind == "convex_cs" and p.constrained > p.n:
            raise ValueError("problem.constrained must not exceed problem.n")
        if self.denoiser.kind is not None and kind not in CS_KINDS and self.denoiser.kind != DEFAULT_DENOISER[kind]:
            raise ValueError(f"denoiser.kind {self.denoiser.kind!r} is not available for kind {kind!r}")
        if self.experiment.onsager_check and kind != "separable_cs":
            raise ValueError("experiment.onsager_check is only supported for kind 'separable_cs'")
        if self.se.n is not None and kind != "separable_cs":
            raise ValueError("se.n is only supported for kind 'separable_cs'")
        if kind in ("symmetric_synthetic", "lamp_diagnostic") and self.experiment.max_iters < 1:
            raise ValueError("experiment.max_iters must be >= 1 for kind " + repr(kind))
        if self.denoiser_kind in ("svt", "nlm") and kind not in ("matrix_cs", "image_cs"):
            raise ValueError(f"denoiser.kind {self.denoiser_kind!r} needs a matrix-shaped signal")
        if self.denoiser.kind == "nlm" and self.denoiser.patch % 2 == 0:
            raise ValueError("denoiser.patch must be odd")
        return self

    @property
    def denoiser_kind(self) -> str:
        return self.denoiser.kind or DEFAULT_DENOISER[self.experiment.kind]

    @property
    def lambda_coef(self) -> float:
        if self.denoiser.lambda_coef is not None:
            return self.denoiser.lambda_coef
        return 2.0 if self.denoiser_kind == "svt" else 1.5


def _error_text(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"])
        msg = err["msg"]
        lines.append(f"{path}: {msg}" if path else msg)
    return "; ".join(lines)


def _coerce(text: str):
    """Parse an override value as a TOML scalar or array, else keep it as a string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides to raw config data."""
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) != 2 or not all(parts):
            raise ConfigError(f"override key {key!r} is not of the form section.key")
        data.setdefault(parts[0], {})
        if not isinstance(data[parts[0]], dict):
            raise ConfigError(f"{parts[0]}: not a section")
        data[parts[0]][parts[1]] = _coerce(value.strip())
    return data


def validate(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_error_text(exc)) from None


def preset_names() -> list:
    return sorted(p.name[:-4] for p in resources.files("nsamp.presets").iterdir() if p.name.endswith(".cfg"))


def resolve(path_or_preset) -> Path:
    """A config path, or the name of a bundled preset (with or without ``.cfg``)."""
    p = Path(path_or_preset)
    if p.exists():
        return p
    name = p.name[:-4] if p.name.endswith(".cfg") else p.name
    if p.parent == Path(".") and name in preset_names():
        return Path(str(resources.files("nsamp.presets") / f"{name}.cfg"))
    raise ConfigError(f"config {path_or_preset!s} not found (bundled presets: {', '.join(preset_names())})")


def load(path_or_preset, overrides=()) -> ExperimentConfig:
    path = resolve(path_or_preset)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return validate(apply_overrides(data, overrides))
