import logging
import os
from typing import Dict, Iterable, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from glc_lab.control import observability_time_steps
from glc_lab.dynamics import SystemParams
from glc_lab.grid import SpaceMesh, TimeMesh, build_meshes
from glc_lab.weights import RegimeReport, WeightParams, validate_regime


logger = logging.getLogger(__name__)

DEFAULT_WORKERS = int(os.getenv("GLC_LAB_WORKERS", "4"))
DEFAULT_OUT_DIR = os.getenv("GLC_LAB_OUT_DIR", "glc_lab_out")
DEFAULT_LOG_LEVEL = os.getenv("GLC_LAB_LOG_LEVEL", "INFO")
DEFAULT_SEED = int(os.getenv("GLC_LAB_SEED", "20240611"))

LIST_KEYS = (
    "omega",
    "omega0",
    "mesh_family",
    "family_steps",
    "tau_ladder",
    "epsilons",
    "identity_space_sizes",
    "identity_time_steps",
    "carleman_space_sizes",
    "carleman_betas",
)


class ConfigError(ValueError):
    pass


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(default=1.0, description="Real diffusion coefficient, > 0")
    beta: float = Field(default=0.5, description="Dispersive (imaginary) diffusion coefficient")
    c: float = Field(default=0.5, description="Real reaction coefficient")
    gamma: float = Field(default=1.0, description="Imaginary reaction coefficient")
    T: float = Field(default=1.0, description="Final time, > 0")
    omega: Tuple[float, float] = Field(default=(0.3, 0.6), description="Control region [a, b) in (0, 1)")
    omega0: Tuple[float, float] = Field(default=(0.35, 0.55), description="Region whose closure lies inside omega")

    M: int = Field(default=31, description="Interior space nodes of the main mesh")
    N: int = Field(default=64, description="Time steps of the main mesh")
    mesh_family: List[int] = Field(default=[7, 15], description="Interior node counts of the observability and control family")
    family_steps: List[int] = Field(
        default=[], description="Time steps paired with mesh_family; empty picks the smallest N inside the observability step regime"
    )

    lam: float = Field(default=2.0, description="Weight parameter lambda, >= 1")
    tau: Optional[float] = Field(default=None, description="Weight parameter tau; defaults to tau0 (T + T^2)")
    tau_ladder: List[float] = Field(default=[], description="Extra tau values for the Carleman sweep")
    delta: float = Field(default=0.25, description="Time-weight cutoff, in (0, 1/2]")
    k_margin: float = Field(default=0.1, description="Gap between max psi and K")
    c0: float = Field(default=0.1, description="Lower bound of |psi_x| outside omega0")
    epsilon0: float = Field(default=0.9, description="Smallness constant of the weight regime, in (0, 1)")
    tau0: float = Field(default=1.0, description="Scale of the tau lower bound, >= 1")

    vartheta: float = Field(default=4.0, description="Exponent of the observability step regime, >= 1")
    C_pen: float = Field(default=0.05, description="Penalty constant in exp(-C_pen / dx^min(vartheta/4, 1))")
    dx_hat: float = Field(default=1.0, description="Upper bound on dx for the observability regime")
    dx_tilde_const: float = Field(default=1.0, description="Constant of the dx_tilde regime bound")
    cg_tol: float = Field(default=1e-10, description="Relative residual tolerance of the HUM conjugate gradient")
    cg_maxiter: int = Field(default=500, description="Iteration cap of the HUM conjugate gradient")
    epsilons: List[float] = Field(default=[1e-4, 1e-6, 1e-8], description="Penalty ladder for the control subcommand")
    initial_preset: str = Field(default="gaussian-bump", description="Initial state g: constant, gaussian-bump or random")

    samples: int = Field(default=5, description="Samples per sweep cell")
    identity_samples: int = Field(default=100, description="Random field draws per identity mesh")
    energy_samples: int = Field(default=20, description="Random terminal data per energy case")
    identity_space_sizes: List[int] = Field(default=[4, 17, 64], description="M values for the identity check")
    identity_time_steps: List[int] = Field(default=[5, 32], description="N values for the identity check")
    carleman_space_sizes: List[int] = Field(default=[15, 31, 63], description="M values for the Carleman sweep")
    carleman_betas: List[float] = Field(default=[0.0], description="Extra beta values for the Carleman sweep")
    C_lambda_local: float = Field(default=1.0, description="Constant multiplying the local observation term")

    seed: int = Field(default=DEFAULT_SEED, description="Top-level seed")
    out_dir: str = Field(default=DEFAULT_OUT_DIR, description="Output directory")

    @field_validator(*LIST_KEYS, mode="before")
    @classmethod
    def _split_lists(cls, value):
        if isinstance(value, str):
            return [part.strip() for part in value.split(",") if part.strip()]
        return value

    @field_validator("delta")
    @classmethod
    def _check_delta(cls, value: float) -> float:
        if not 0 < value <= 0.5:
            raise ValueError("delta must lie in (0, 1/2]")
        return value

    @field_validator("alpha", "T", "c0", "k_margin", "cg_tol", "C_pen", "dx_hat", "dx_tilde_const", "C_lambda_local")
    @classmethod
    def _check_positive(cls, value: float, info) -> float:
        if not value > 0:
            raise ValueError(f"{info.field_name} must be positive")
        return value

    @field_validator("epsilon0")
    @classmethod
    def _check_epsilon0(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("epsilon0 must lie in (0, 1)")
        return value

    @field_validator("lam", "tau0", "vartheta")
    @classmethod
    def _check_at_least_one(cls, value: float, info) -> float:
        if value < 1:
            raise ValueError(f"{info.field_name} must be >= 1")
        return value

    @field_validator("M", "N", "cg_maxiter", "samples", "identity_samples", "energy_samples")
    @classmethod
    def _check_count(cls, value: int, info) -> int:
        lower = 1 if info.field_name in ("cg_maxiter", "samples", "identity_samples", "energy_samples") else 2
        if value < lower:
            raise ValueError(f"{info.field_name} must be >= {lower}")
        return value

    @field_validator("mesh_family", "identity_space_sizes", "identity_time_steps", "carleman_space_sizes")
    @classmethod
    def _check_sizes(cls, value: List[int], info) -> List[int]:
        if not value or min(value) < 2:
            raise ValueError(f"{info.field_name} needs at least one entry, each >= 2")
        return value

    @field_validator("family_steps")
    @classmethod
    def _check_steps(cls, value: List[int]) -> List[int]:
        if value and min(value) < 1:
            raise ValueError("family_steps entries must be >= 1")
        return value

    @field_validator("epsilons")
    @classmethod
    def _check_epsilons(cls, value: List[float]) -> List[float]:
        if not value or min(value) <= 0:
            raise ValueError("epsilons must be a non-empty list of positive values")
        return value

    @field_validator("initial_preset")
    @classmethod
    def _check_preset(cls, value: str) -> str:
        if value not in ("constant", "gaussian-bump", "random"):
            raise ValueError("initial_preset must be one of constant, gaussian-bump, random")
        return value

    @model_validator(mode="after")
    def _check_consistency(self) -> "ExperimentConfig":
        a, b = self.omega
        a0, b0 = self.omega0
        if not 0 <= a < a0 < b0 < b <= 1:
            raise ValueError("omega0 closure must lie inside omega inside (0, 1)")
        if self.family_steps and len(self.mesh_family) != len(self.family_steps):
            raise ValueError("mesh_family and family_steps must have the same length")
        if self.tau is not None and self.tau <= 0:
            raise ValueError("tau must be positive")
        return self

    @property
    def tau_value(self) -> float:
        return self.tau if self.tau is not None else self.tau0 * (self.T + self.T**2)

    def system(self) -> SystemParams:
        return SystemParams(self.alpha, self.beta, self.c, self.gamma, self.T, self.omega, self.omega0)

    def weight_params(self, tau: Optional[float] = None) -> WeightParams:
        return WeightParams(
            lam=self.lam,
            tau=self.tau_value if tau is None else tau,
            delta=self.delta,
            c0=self.c0,
            epsilon0=self.epsilon0,
            tau0=self.tau0,
            k_margin=self.k_margin,
        )

    def meshes(self) -> Tuple[SpaceMesh, TimeMesh]:
        return build_meshes(self.M, self.N, self.T)

    def family(self) -> List[Tuple[int, int]]:
        if self.family_steps:
            return list(zip(self.mesh_family, self.family_steps))
        sys = self.system()
        return [(M, observability_time_steps(sys, M, self.vartheta)) for M in self.mesh_family]

    def regime(self) -> RegimeReport:
        return validate_regime(self.weight_params(), self.meshes())


def _error_text(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err.get("loc", ())) or "config"
        msg = err.get("msg", "").removeprefix("Value error, ")
        if err.get("type") == "extra_forbidden":
            msg = "unknown key"
        parts.append(f"{key}: {msg}")
    return "; ".join(parts)


def build_config(values: Dict[str, object]) -> ExperimentConfig:
    """Validate ``values`` and return the config; problems surface as ConfigError naming the key."""
    unknown = sorted(set(values) - set(ExperimentConfig.model_fields))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(unknown)}")
    try:
        config = ExperimentConfig(**values)
    except ValidationError as exc:
        raise ConfigError(_error_text(exc)) from None
    for failed in config.regime().failures():
        logger.warning("regime flag %s value=%.4g bound=%.4g", failed.name, failed.value, failed.bound)
    return config


def _parse_line(line: str, origin: str) -> Optional[Tuple[str, str]]:
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    if "=" not in text:
        raise ConfigError(f"{origin}: expected 'key = value', got {text!r}")
    key, value = text.split("=", 1)
    key, value = key.strip(), value.strip()
    if not key:
        raise ConfigError(f"{origin}: missing key")
    return key, value


def parse_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    """Read a ``key = value`` file, apply ``key=value`` overrides, validate."""
    values: Dict[str, object] = {}
    if path:
        try:
            with open(path, encoding="utf-8") as handle:
                lines = handle.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for number, line in enumerate(lines, start=1):
            parsed = _parse_line(line, f"{path}:{number}")
            if parsed:
                values[parsed[0]] = parsed[1]
    for item in overrides:
        parsed = _parse_line(item, "--set")
        if parsed:
            values[parsed[0]] = parsed[1]
    # "none" leaves tau at its derived default
    if isinstance(values.get("tau"), str) and values["tau"].lower() in ("", "none"):
        values.pop("tau")
    return build_config(values)
