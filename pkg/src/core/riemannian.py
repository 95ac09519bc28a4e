# src/core/riemannian.py
"""
Variedades tangentes (σ) y cotangentes (ζ) del LIPM y región de seguridad.

σ es el residuo de energía orbital respecto a la órbita nominal por (p0, v0):

    σ = p0²(2v0² − v² + ω²(p² − p0²)) − v0²p² + v0²(v² − v0²)/ω²
      = A·(E − E0),   A = v0²/ω² − p0²,   E = v² − ω²p²

ζ = ζ0 (v/v0)^{ω²} p/p0 avanza monótonamente a lo largo del flujo y sus curvas
de nivel son ortogonales a las de σ.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Tuple

import numpy as np

from ..config.settings import GaitSettings, ModelParams, RegionSettings
from .dynamics import StanceParity, flow_analytic, nominal_contact_state


class OutOfChartError(ValueError):
    """Estado fuera del dominio de la carta (p, v) → (σ, ζ)."""


@dataclass(frozen=True)
class ManifoldParams:
    p0: float
    v0: float
    omega: float
    zeta0: float = 1.0

    def __post_init__(self):
        if np.isclose((self.omega * self.p0) ** 2, self.v0 ** 2, rtol=0.0, atol=1e-12):
            raise ValueError("carta degenerada: (ω p0)² = v0²")

    @property
    def amplitude(self) -> float:
        return self.v0 ** 2 / self.omega ** 2 - self.p0 ** 2

    @property
    def energy0(self) -> float:
        return self.v0 ** 2 - (self.omega * self.p0) ** 2


def sigma(p: float, v: float, mp: ManifoldParams) -> float:
    p0, v0, w = mp.p0, mp.v0, mp.omega
    return float(
        p0 ** 2 * (2.0 * v0 ** 2 - v ** 2 + w ** 2 * (p ** 2 - p0 ** 2))
        - v0 ** 2 * p ** 2
        + v0 ** 2 * (v ** 2 - v0 ** 2) / w ** 2
    )


def sigma_grad(p: float, v: float, mp: ManifoldParams) -> np.ndarray:
    """(∂σ/∂p, ∂σ/∂v)."""
    a = mp.amplitude
    return np.array([-2.0 * a * mp.omega ** 2 * p, 2.0 * a * v])


def _check_zeta_chart(v: float, mp: ManifoldParams) -> None:
    if mp.v0 == 0.0:
        raise OutOfChartError("v0 = 0: la carta cotangente no está definida")
    if v == 0.0 or np.sign(v) != np.sign(mp.v0):
        raise OutOfChartError(f"v = {v:.4f} fuera de la carta (signo de v0 = {np.sign(mp.v0):+.0f})")


def zeta(p: float, v: float, mp: ManifoldParams) -> float:
    """ζ = ζ0·(v/v0)^(ω²)·p/p0. Sólo exige el signo de v; p puede ser 0 o negativo (el ápice sagital está en p = 0)."""
    _check_zeta_chart(v, mp)
    return float(mp.zeta0 * (v / mp.v0) ** (mp.omega ** 2) * p / mp.p0)


def zeta_grad(p: float, v: float, mp: ManifoldParams) -> np.ndarray:
    """(∂ζ/∂p, ∂ζ/∂v)."""
    _check_zeta_chart(v, mp)
    w2 = mp.omega ** 2
    ratio = (v / mp.v0) ** w2
    return np.array([mp.zeta0 * ratio / mp.p0, mp.zeta0 * w2 * ratio * p / (mp.p0 * v)])


def chart_inverse(p: float, v: float, mp: ManifoldParams) -> Tuple[float, float]:
    """(cosh ωt, sinh ωt) del instante t en que el flujo desde (p0, v0) alcanza (p, v)."""
    p0, v0, w = mp.p0, mp.v0, mp.omega
    det = (w * p0) ** 2 - v0 ** 2
    cosh = (w * p0 * w * p - v0 * v) / det
    sinh = (w * p0 * v - v0 * w * p) / det
    return float(cosh), float(sinh)


def lateral_phase(p: float, v: float, p_apex: float, omega: float, zeta0: float = 1.0) -> float:
    """Fase lateral ζ0·v/(ω p_apex): vale ζ0·sinh(ωτ) sobre la órbita nominal."""
    if p * p_apex <= 0.0:
        raise OutOfChartError("CoM del lado equivocado del pie de apoyo")
    return float(zeta0 * v / (omega * p_apex))


BOUND_NAMES = (
    "sag_sigma_lo",
    "sag_sigma_hi",
    "sag_zeta_lo",
    "sag_zeta_hi",
    "lat_sigma_lo",
    "lat_sigma_hi",
    "lat_zeta_lo",
    "lat_zeta_hi",
)


@dataclass(frozen=True)
class AxisRegion:
    """Caja en (σ, ζ) de un eje; cada cota tiene su factor de escala."""

    manifold: ManifoldParams
    sigma_nom: float
    sigma_low: float
    sigma_high: float
    zeta_nom: float
    zeta_low: float
    zeta_high: float
    lateral_apex: float = 0.0
    margin_unit: float = 0.1

    def __post_init__(self):
        if not (self.sigma_low < self.sigma_nom < self.sigma_high):
            raise ValueError("σ_nom debe quedar estrictamente dentro de [σ_low, σ_high]")
        if not (self.zeta_low < self.zeta_nom < self.zeta_high):
            raise ValueError("ζ_nom debe quedar estrictamente dentro de [ζ_low, ζ_high]")

    @property
    def is_lateral(self) -> bool:
        return self.lateral_apex != 0.0

    @property
    def delta_sigma(self) -> Tuple[float, float]:
        return self.sigma_nom - self.sigma_low, self.sigma_high - self.sigma_nom

    @property
    def delta_zeta(self) -> Tuple[float, float]:
        return self.zeta_nom - self.zeta_low, self.zeta_high - self.zeta_nom

    @property
    def scales(self) -> Tuple[float, float, float, float]:
        ds, dz = self.delta_sigma, self.delta_zeta
        u = self.margin_unit
        return u / ds[0], u / ds[1], u / dz[0], u / dz[1]

    def sigma(self, p: float, v: float) -> float:
        return sigma(p, v, self.manifold)

    def zeta(self, p: float, v: float) -> float:
        if self.is_lateral:
            return lateral_phase(p, v, self.lateral_apex, self.manifold.omega, self.manifold.zeta0)
        return zeta(p, v, self.manifold)

    def zeta_grad(self, p: float, v: float) -> np.ndarray:
        if self.is_lateral:
            self.zeta(p, v)
            return np.array([0.0, self.manifold.zeta0 / (self.manifold.omega * self.lateral_apex)])
        return zeta_grad(p, v, self.manifold)

    def distances(self, p: float, v: float, penalty: float) -> Tuple[np.ndarray, np.ndarray]:
        """Cuatro distancias escaladas y su jacobiano 4×2 respecto a (p, v)."""
        c = self.scales
        s = self.sigma(p, v)
        gs = sigma_grad(p, v, self.manifold)
        r = np.empty(4)
        J = np.zeros((4, 2))
        r[0], J[0] = c[0] * (s - self.sigma_low), c[0] * gs
        r[1], J[1] = c[1] * (self.sigma_high - s), -c[1] * gs
        try:
            z = self.zeta(p, v)
            gz = self.zeta_grad(p, v)
            r[2], J[2] = c[2] * (z - self.zeta_low), c[2] * gz
            r[3], J[3] = c[3] * (self.zeta_high - z), -c[3] * gz
        except OutOfChartError:
            r[2] = r[3] = penalty
        return r, J


@dataclass(frozen=True)
class RiemannianRegion:
    sagittal: AxisRegion
    lateral_left: AxisRegion
    lateral_right: AxisRegion
    off_chart_penalty: float = -0.5

    def lateral(self, parity: StanceParity) -> AxisRegion:
        return self.lateral_left if parity is StanceParity.LEFT else self.lateral_right

    @classmethod
    def from_settings(cls, model: ModelParams, gait: GaitSettings, region: RegionSettings) -> "RiemannianRegion":
        """
        Deriva la región a partir de la marcha nominal.

        (p0, v0) es el estado nominal en el cambio de contacto. Las cotas de σ son
        los valores de σ en el ápice con las velocidades (sagital) o posiciones
        laterales (lateral) extremas de las bandas; las de ζ, la fase nominal en
        los extremos de la banda de fase del ápice.
        """
        w = model.omega
        T = gait.step_duration
        sag = cls._sagittal(model, gait, region, w, T)
        left = cls._lateral(model, gait, region, w, T, StanceParity.LEFT)
        right = cls._lateral(model, gait, region, w, T, StanceParity.RIGHT)
        return cls(sag, left, right, region.off_chart_penalty)

    @staticmethod
    def _sagittal(model: ModelParams, gait: GaitSettings, region: RegionSettings, w: float, T: float) -> AxisRegion:
        p_c, v_c = nominal_contact_state(model, gait, StanceParity.LEFT)
        mp = ManifoldParams(float(p_c[0]), float(v_c[0]), w, region.zeta0)
        if region.sagittal_delta_sigma is not None:
            s_lo, s_hi = -region.sagittal_delta_sigma, region.sagittal_delta_sigma
        else:
            s_lo, s_hi = sorted(sigma(0.0, v, mp) for v in region.apex_velocity_band)
        if region.sagittal_delta_zeta is not None:
            z_lo, z_hi = -region.sagittal_delta_zeta, region.sagittal_delta_zeta
        else:
            zs = []
            for fraction in region.apex_phase_band:
                tau = (fraction - 0.5) * T
                p, v = flow_analytic(0.0, gait.apex_velocity, abs(tau), w)
                p = float(np.sign(tau) * p)
                zs.append(zeta(p, float(v), mp))
            z_lo, z_hi = sorted(zs)
        return AxisRegion(mp, 0.0, s_lo, s_hi, 0.0, z_lo, z_hi, 0.0, region.margin_unit)

    @staticmethod
    def _lateral(
        model: ModelParams, gait: GaitSettings, region: RegionSettings, w: float, T: float, parity: StanceParity
    ) -> AxisRegion:
        p_c, v_c = nominal_contact_state(model, gait, parity)
        mp = ManifoldParams(float(p_c[1]), float(v_c[1]), w, region.zeta0)
        apex = parity.side * gait.lateral_apex_offset
        if region.lateral_delta_sigma is not None:
            s_lo, s_hi = -region.lateral_delta_sigma, region.lateral_delta_sigma
        else:
            s_lo, s_hi = sorted(sigma(parity.side * a, 0.0, mp) for a in region.lateral_apex_band)
        if region.lateral_delta_zeta is not None:
            z_lo, z_hi = -region.lateral_delta_zeta, region.lateral_delta_zeta
        else:
            zs = [region.zeta0 * np.sinh(w * (fraction - 0.5) * T) for fraction in region.apex_phase_band]
            z_lo, z_hi = sorted(float(z) for z in zs)
        return AxisRegion(mp, 0.0, s_lo, s_hi, 0.0, z_lo, z_hi, apex, region.margin_unit)


def _keyframe(k) -> Tuple[float, float, float, float]:
    x, y, vx, vy = (float(value) for value in k)
    return x, y, vx, vy


def bound_distances(k, region: RiemannianRegion, parity: StanceParity) -> np.ndarray:
    """Ocho distancias escaladas para el estado de ápice k = (x, y, vx, vy)."""
    return bound_distance_jacobian(k, region, parity)[0]


def bound_distance_jacobian(k, region: RiemannianRegion, parity: StanceParity) -> Tuple[np.ndarray, np.ndarray]:
    """Distancias (8) y jacobiano 8×4 respecto a (x, y, vx, vy)."""
    x, y, vx, vy = _keyframe(k)
    r_sag, J_sag = region.sagittal.distances(x, vx, region.off_chart_penalty)
    r_lat, J_lat = region.lateral(parity).distances(y, vy, region.off_chart_penalty)
    J = np.zeros((8, 4))
    J[:4, 0], J[:4, 2] = J_sag[:, 0], J_sag[:, 1]
    J[4:, 1], J[4:, 3] = J_lat[:, 0], J_lat[:, 1]
    return np.concatenate([r_sag, r_lat]), J


def riem_margin(k, region: RiemannianRegion, parity: StanceParity) -> float:
    return float(np.min(bound_distances(k, region, parity)))


def region_center(region: RiemannianRegion, gait: GaitSettings, parity: StanceParity) -> np.ndarray:
    """Estado de ápice nominal (x, y, vx, vy) en el centro de la región."""
    return np.array([0.0, parity.side * gait.lateral_apex_offset, gait.apex_velocity, 0.0])


@lru_cache(maxsize=32)
def phase_box(
    region: RiemannianRegion,
    parity: StanceParity,
    omega: float,
    flow_time: float = 0.0,
    center: Tuple[float, float, float, float] = (0.0, 0.0, 0.6, 0.0),
    resolution: int = 121,
) -> Dict[str, Tuple[float, float]]:
    """
    Caja alineada con los ejes (p, v) que contiene la región, opcionalmente
    transportada por el flujo del LIPM durante `flow_time`.

    Se obtiene muestreando una rejilla alrededor del centro y quedándose con los
    puntos de margen no negativo.
    """
    boxes = {}
    for axis, sub, (pc, vc) in (
        ("x", region.sagittal, (center[0], center[2])),
        ("y", region.lateral(parity), (center[1], center[3])),
    ):
        span_p = max(0.5, 4.0 * abs(pc) + 0.3)
        span_v = max(1.5, 2.0 * abs(vc) + 1.0)
        P, V = np.meshgrid(
            np.linspace(pc - span_p, pc + span_p, resolution), np.linspace(vc - span_v, vc + span_v, resolution)
        )
        inside_p, inside_v = [], []
        for p, v in zip(P.ravel(), V.ravel()):
            r, _ = sub.distances(float(p), float(v), region.off_chart_penalty)
            if np.min(r) >= 0.0:
                inside_p.append(p)
                inside_v.append(v)
        if not inside_p:
            raise ValueError(f"la región del eje {axis} no contiene puntos de la rejilla")
        pts_p, pts_v = flow_analytic(np.array(inside_p), np.array(inside_v), flow_time, omega)
        boxes[f"p_{axis}"] = (float(np.min(pts_p)), float(np.max(pts_p)))
        boxes[f"v_{axis}"] = (float(np.min(pts_v)), float(np.max(pts_v)))
    return boxes


def bound_polylines(
    region: RiemannianRegion, parity: StanceParity, samples: int = 200
) -> List[Tuple[str, np.ndarray]]:
    """Curvas de nivel de las ocho cotas en el plano (p, v) para graficar."""
    lines: List[Tuple[str, np.ndarray]] = []
    for prefix, sub in (("sag", region.sagittal), ("lat", region.lateral(parity))):
        mp = sub.manifold
        w = mp.omega
        a = mp.amplitude
        p_grid = np.linspace(-0.6, 0.6, samples)
        for tag, level in (("sigma_lo", sub.sigma_low), ("sigma_hi", sub.sigma_high)):
            # σ = A(v² − ω²p²) − A·E0 = level  →  v² = level/A + E0 + ω²p²
            v2 = level / a + mp.energy0 + (w * p_grid) ** 2
            ok = v2 >= 0.0
            # El eje lateral recorre ambas ramas de velocidad
            signs = (1.0, -1.0) if sub.is_lateral else (float(np.sign(mp.v0)),)
            for sign in signs:
                suffix = "" if len(signs) == 1 else ("_pos" if sign > 0 else "_neg")
                v = sign * np.sqrt(v2[ok])
                lines.append((f"{prefix}_{tag}{suffix}", np.column_stack([p_grid[ok], v])))
        v_grid = np.linspace(-1.5, 1.5, samples)
        for tag, level in (("zeta_lo", sub.zeta_low), ("zeta_hi", sub.zeta_high)):
            if sub.is_lateral:
                v_level = level * w * sub.lateral_apex / mp.zeta0
                p_side = np.linspace(0.0, 0.6, samples) * np.sign(sub.lateral_apex)
                pts = np.column_stack([p_side, np.full(samples, v_level)])
            else:
                vv = v_grid[(v_grid != 0.0) & (np.sign(v_grid) == np.sign(mp.v0))]
                p = level * mp.p0 / (mp.zeta0 * (vv / mp.v0) ** (w ** 2))
                keep = np.abs(p) <= 0.6
                pts = np.column_stack([p[keep], vv[keep]])
            lines.append((f"{prefix}_{tag}", pts))
    return lines


def self_check(
    model: ModelParams, gait: GaitSettings, region_settings: RegionSettings, seed: int = 0, starts: int = 100, points: int = 1000
) -> Dict[str, float]:
    """Residuos de las identidades de la carta: conservación de σ, ortogonalidad y margen en el centro."""
    rng = np.random.default_rng(seed)
    region = RiemannianRegion.from_settings(model, gait, region_settings)
    mp = region.sagittal.manifold
    w = mp.omega
    conservation = 0.0
    for _ in range(starts):
        p, v = rng.uniform(-0.3, 0.3), rng.uniform(0.2, 1.2)
        s0 = sigma(p, v, mp)
        for t in np.linspace(0.0, 0.5, 11):
            pt, vt = flow_analytic(p, v, float(t), w)
            conservation = max(conservation, abs(sigma(float(pt), float(vt), mp) - s0))
    orthogonality = 0.0
    for _ in range(points):
        p, v = rng.uniform(-0.3, 0.3), np.sign(mp.v0) * rng.uniform(0.05, 1.2)
        gs, gz = sigma_grad(p, v, mp), zeta_grad(p, v, mp)
        norm = np.linalg.norm(gs) * np.linalg.norm(gz)
        if norm > 0.0:
            orthogonality = max(orthogonality, abs(float(gs @ gz)) / norm)
    center = min(riem_margin(region_center(region, gait, parity), region, parity) for parity in StanceParity)
    return {"sigma_conservation": conservation, "gradient_orthogonality": orthogonality, "center_margin": center}
