# src/config/settings.py
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class ConfigError(Exception):
    """Error de configuración con rutas de clave legibles."""


class _Section(BaseModel):
    # Todas las secciones rechazan claves desconocidas
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelParams(_Section):
    """Parámetros del péndulo invertido lineal aumentado."""

    z0: float = Field(0.8, gt=0.0)
    g: float = Field(9.81, gt=0.0)
    mass: float = Field(31.0, gt=0.0)
    u_max: Tuple[float, float, float] = (2.5, 2.5, 1.5)
    terrain_height: float = 0.0

    @property
    def omega(self) -> float:
        # Se recalcula siempre a partir de z0
        return math.sqrt(self.g / self.z0)


class GaitSettings(_Section):
    """Marcha nominal: duración de paso, velocidad en el ápice, offset lateral."""

    step_duration: float = Field(0.4, gt=0.0)
    apex_velocity: float = Field(0.6, gt=0.0)
    lateral_apex_offset: float = Field(0.11, gt=0.0)
    swing_height: float = Field(0.08, ge=0.0)


class RegionSettings(_Section):
    """Bandas que definen la región de seguridad riemanniana."""

    apex_velocity_band: Tuple[float, float] = (0.1, 0.9)
    lateral_apex_band: Tuple[float, float] = (0.01, 0.2)
    apex_phase_band: Tuple[float, float] = (0.25, 0.75)
    zeta0: float = Field(1.0, gt=0.0)
    margin_unit: float = Field(0.1, gt=0.0)
    off_chart_penalty: float = -0.5
    # Semianchos explícitos (simétricos); si se dan, reemplazan los derivados de las bandas
    sagittal_delta_sigma: Optional[float] = Field(None, gt=0.0)
    sagittal_delta_zeta: Optional[float] = Field(None, gt=0.0)
    lateral_delta_sigma: Optional[float] = Field(None, gt=0.0)
    lateral_delta_zeta: Optional[float] = Field(None, gt=0.0)

    @model_validator(mode="after")
    def _check_bands(self) -> "RegionSettings":
        for name in ("apex_velocity_band", "lateral_apex_band", "apex_phase_band"):
            low, high = getattr(self, name)
            if not low < high:
                raise ValueError(f"{name} debe cumplir low < high")
        low, high = self.apex_phase_band
        if not (0.0 <= low < 0.5 < high <= 1.0):
            raise ValueError("apex_phase_band debe contener la mitad del paso")
        if self.off_chart_penalty >= 0.0:
            raise ValueError("off_chart_penalty debe ser negativo")
        return self


class StoneSettings(_Section):
    center: Tuple[float, float]
    yaw: float = 0.0
    half_extents: Tuple[float, float]

    @model_validator(mode="after")
    def _check_extents(self) -> "StoneSettings":
        if min(self.half_extents) <= 0.0:
            raise ValueError("half_extents deben ser positivos")
        return self


class SpecSettings(_Section):
    """Valores con los que se construye SpecConfig."""

    steps: int = Field(2, ge=0)
    knots_per_step: int = Field(7, ge=2)
    e_left: float = 0.5
    e_right: float = -0.5
    keyframe_tolerance: float = Field(0.1, ge=0.0)
    stones: List[StoneSettings] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_edges(self) -> "SpecSettings":
        if not self.e_left > self.e_right:
            raise ValueError("e_left debe ser mayor que e_right")
        return self


class MpcSettings(_Section):
    """Pesos, límites y presupuesto del solver."""

    mode: str = "full"
    w: float = Field(0.01, ge=0.0)
    epsilon: float = Field(0.03, ge=0.0)
    t_min: float = Field(0.3, gt=0.0)
    t_max: float = Field(0.5, gt=0.0)
    min_remaining: float = Field(0.02, gt=0.0)
    freeze_threshold: float = Field(0.1, ge=0.0)
    k1: float = Field(100.0, gt=0.0)
    k2: float = Field(100.0, gt=0.0)
    max_iter: int = Field(100, ge=1)
    ftol: float = Field(1e-8, gt=0.0)
    feasibility_tol: float = Field(1e-6, gt=0.0)
    stationarity_tol: float = Field(1e-4, gt=0.0)
    replan_period: float = Field(0.02, gt=0.0)
    max_step_length: float = Field(0.6, gt=0.0)
    max_swing_height: float = Field(0.3, gt=0.0)
    failure_limit: int = Field(5, ge=1)
    warm_start: bool = True

    @model_validator(mode="after")
    def _check_durations(self) -> "MpcSettings":
        if not self.t_min <= self.t_max:
            raise ValueError("se requiere 0 < t_min <= t_max")
        if self.mode not in ("full", "no-stl-apex", "no-stl-contact", "no-collision"):
            raise ValueError(f"modo desconocido: {self.mode}")
        return self


class LegGeometrySettings(_Section):
    """Modelo paramétrico de pierna (dos eslabones más barra de Aquiles)."""

    hip_half_width: float = Field(0.135, gt=0.0)
    thigh_length: float = Field(0.45, gt=0.0)
    lower_leg_length: float = Field(0.5, gt=0.0)
    shin_fraction: float = Field(0.55, gt=0.0, lt=1.0)
    achilles_offset: float = Field(0.05, gt=0.0)
    achilles_start: float = Field(0.3, ge=0.0, lt=1.0)
    shin_radius: float = Field(0.04, gt=0.0)
    tarsus_radius: float = Field(0.035, gt=0.0)
    achilles_radius: float = Field(0.015, gt=0.0)


class SurrogateSettings(_Section):
    """Datos y entrenamiento de las seis redes de distancia."""

    weights_path: str = "artifacts/collision_mlp.bin"
    dataset_size: int = Field(1_000_000, ge=1)
    hidden_units: int = Field(24, ge=1)
    hidden_layers: int = Field(2, ge=1)
    epochs: int = Field(40, ge=1)
    batch_size: int = Field(1024, ge=1)
    learning_rate: float = Field(3e-3, gt=0.0)
    lr_decay: float = Field(0.93, gt=0.0, le=1.0)
    test_fraction: float = Field(0.1, gt=0.0, lt=1.0)
    com_x_range: Tuple[float, float] = (-0.3, 0.3)
    com_y_range: Tuple[float, float] = (-0.3, 0.1)
    swing_x_range: Tuple[float, float] = (-0.5, 0.5)
    swing_y_range: Tuple[float, float] = (-0.6, 0.2)
    swing_z_range: Tuple[float, float] = (0.0, 0.2)
    geometry: LegGeometrySettings = Field(default_factory=LegGeometrySettings)


class SimulationSettings(_Section):
    sim_dt: float = Field(0.005, gt=0.0)
    total_steps: int = Field(6, ge=1)
    push_step: int = Field(1, ge=0)
    fall_velocity: float = Field(2.5, gt=0.0)
    drift_bound: float = Field(1.0, gt=0.0)
    keyframe_absent_limit: int = Field(3, ge=1)
    recovery_window_steps: int = Field(2, ge=1)
    audit_samples: int = Field(21, ge=2)


class SweepSettings(_Section):
    magnitudes: List[float] = Field(default_factory=lambda: [80.0 + 40.0 * i for i in range(9)])
    directions: List[float] = Field(default_factory=lambda: [30.0 * i for i in range(12)])
    phases: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75])
    duration: float = Field(0.1, gt=0.0)

    @model_validator(mode="after")
    def _check_grids(self) -> "SweepSettings":
        if not (self.magnitudes and self.directions and self.phases):
            raise ValueError("las rejillas de barrido no pueden estar vacías")
        return self


class ExperimentConfig(BaseSettings):
    """Configuración completa de un experimento (archivo YAML + entorno LOCOSTL_*)."""

    model_config = SettingsConfigDict(
        env_prefix="LOCOSTL_",
        env_nested_delimiter="__",
        extra="forbid",
        frozen=True,
    )

    model: ModelParams = Field(default_factory=ModelParams)
    gait: GaitSettings = Field(default_factory=GaitSettings)
    region: RegionSettings = Field(default_factory=RegionSettings)
    spec: SpecSettings = Field(default_factory=SpecSettings)
    mpc: MpcSettings = Field(default_factory=MpcSettings)
    surrogate: SurrogateSettings = Field(default_factory=SurrogateSettings)
    simulation: SimulationSettings = Field(default_factory=SimulationSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    output_dir: str = "outputs"
    seed: int = 0
    workers: int = Field(1, ge=1)

    @classmethod
    def settings_customise_sources(
        cls, settings_cls, init_settings, env_settings, dotenv_settings, file_secret_settings
    ):
        # El entorno tiene prioridad sobre los valores del archivo
        return env_settings, init_settings, file_secret_settings

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def format_validation_error(error: ValidationError) -> str:
    """Convierte un ValidationError de pydantic en líneas 'ruta.de.clave: mensaje'."""
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<raíz>"
        lines.append(f"{path}: {item['msg']}")
    return "\n".join(lines)


def load_config(path: Optional[Union[str, Path]] = None, **overrides: Any) -> ExperimentConfig:
    """Carga un ExperimentConfig desde YAML; sin ruta devuelve los valores por defecto."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                data = yaml.safe_load(handle) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"No se pudo leer {path}: {e}")
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: se esperaba un mapeo en la raíz")
    data.update(overrides)
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigError(format_validation_error(e))


def dump_config(cfg: ExperimentConfig) -> str:
    """Serializa a YAML; load(dump(cfg)) reproduce cfg."""
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False, allow_unicode=True)


settings = ExperimentConfig()
