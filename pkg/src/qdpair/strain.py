"""Affine model of the six-legged piezo actuator acting on the exciton
fine structure and emission energy.

Two leg pairs steer the two-component splitting vector d = d0 + e14*u14 +
e25*u25 (magnitude = splitting, half-angle = polarization direction); the
third pair only tunes the emission energy.  Nulling the splitting is a 2x2
linear solve.  Polarization-resolved scans and their sinusoidal fits mirror
the way the splitting is measured on the spectrometer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateDeviceError(ValueError):
    """The two leg-pair response vectors do not span the splitting plane."""


class ScanError(ValueError):
    """Polarization scan cannot constrain a sinusoid."""


@dataclass(frozen=True)
class FieldSetting:
    """Electric fields on the three leg pairs, kV/cm."""

    e14: float = 0.0
    e25: float = 0.0
    e36: float = 0.0


@dataclass(frozen=True)
class StrainModel:
    """Affine response of one device.

    d0: zero-field splitting vector, ueV
    u14, u25: splitting response to the leg-pair fields, ueV per (kV/cm)
    e0: unperturbed exciton emission energy, eV
    kappa: energy tuning slopes per leg pair (1-4, 2-5, 3-6), neV/V
    plate_thickness: piezo plate thickness, um (field -> voltage conversion)
    """

    d0: tuple[float, float]
    u14: tuple[float, float]
    u25: tuple[float, float]
    e0: float = 1.5898
    kappa: tuple[float, float, float] = (90.0, 90.0, 90.0)
    plate_thickness: float = 300.0

    def response_matrix(self) -> np.ndarray:
        return np.column_stack([self.u14, self.u25])

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.response_matrix()))

    def as_dict(self) -> dict:
        return {
            "d0_ueV": list(self.d0),
            "u14_ueV_per_kV_cm": list(self.u14),
            "u25_ueV_per_kV_cm": list(self.u25),
            "e0_eV": self.e0,
            "kappa_neV_per_V": list(self.kappa),
            "plate_thickness_um": self.plate_thickness,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "StrainModel":
        return cls(
            d0=tuple(payload["d0_ueV"]),
            u14=tuple(payload["u14_ueV_per_kV_cm"]),
            u25=tuple(payload["u25_ueV_per_kV_cm"]),
            e0=float(payload.get("e0_eV", 1.5898)),
            kappa=tuple(payload.get("kappa_neV_per_V", (90.0, 90.0, 90.0))),
            plate_thickness=float(payload.get("plate_thickness_um", 300.0)),
        )


def fss_vector(model: StrainModel, f: FieldSetting) -> np.ndarray:
    """Splitting vector at a field setting; e36 does not couple to it."""
    return (
        np.asarray(model.d0, dtype=float)
        + f.e14 * np.asarray(model.u14, dtype=float)
        + f.e25 * np.asarray(model.u25, dtype=float)
    )


def fss_magnitude(model: StrainModel, f: FieldSetting) -> float:
    return float(np.linalg.norm(fss_vector(model, f)))


def polarization_angle(model: StrainModel, f: FieldSetting) -> float:
    """Exciton polarization axis, 0.5 * atan2(d2, d1), radians in (-pi/2, pi/2]."""
    d = fss_vector(model, f)
    return 0.5 * float(np.arctan2(d[1], d[0]))


def find_null(model: StrainModel, cond_limit: float = 1e10) -> FieldSetting:
    """Leg-pair fields that cancel the splitting: solve d0 + A e = 0."""
    a = model.response_matrix()
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_limit:
        raise DegenerateDeviceError(
            f"leg-pair responses are (nearly) collinear: condition number {cond:.3g}"
        )
    e = np.linalg.solve(a, -np.asarray(model.d0, dtype=float))
    return FieldSetting(e14=float(e[0]), e25=float(e[1]), e36=0.0)


def sweep_fss(model: StrainModel, e14_values, e25_values) -> list[dict]:
    """Evaluate splitting magnitude and angle on the cross grid of fields."""
    e14_values = list(e14_values)
    e25_values = list(e25_values)
    if not e14_values or not e25_values:
        raise ValueError("sweep grids must be nonempty")
    rows = []
    for e14 in e14_values:
        for e25 in e25_values:
            f = FieldSetting(e14=float(e14), e25=float(e25))
            d = fss_vector(model, f)
            rows.append(
                {
                    "e14_kV_cm": float(e14),
                    "e25_kV_cm": float(e25),
                    "s_ueV": float(np.linalg.norm(d)),
                    "phi_rad": 0.5 * float(np.arctan2(d[1], d[0])),
                }
            )
    return rows


def sweep_to_csv(rows) -> str:
    lines = ["e14_kV_cm,e25_kV_cm,s_ueV,phi_rad"]
    for r in rows:
        lines.append(f"{r['e14_kV_cm']!r},{r['e25_kV_cm']!r},{r['s_ueV']!r},{r['phi_rad']!r}")
    return "\n".join(lines) + "\n"


def field_to_voltage(field_kv_cm: float, thickness_um: float) -> float:
    """Voltage across a plate of the given thickness: 1 kV/cm * 1 um = 0.1 V."""
    return field_kv_cm * thickness_um * 0.1


def energy_at(model: StrainModel, f: FieldSetting, voltages: bool = False) -> float:
    """Emission energy (eV) at a field (kV/cm) or voltage (V) setting."""
    if voltages:
        v = np.array([f.e14, f.e25, f.e36])
    else:
        v = np.array(
            [
                field_to_voltage(f.e14, model.plate_thickness),
                field_to_voltage(f.e25, model.plate_thickness),
                field_to_voltage(f.e36, model.plate_thickness),
            ]
        )
    shift_ev = float(np.dot(np.asarray(model.kappa, dtype=float), v)) * 1e-9
    return model.e0 + shift_ev


def synthesize_polarization_scan(
    s: float,
    phi: float,
    noise_sigma: float,
    n_angles: int = 36,
    seed: int = 0,
    mean_offset: float = 0.0,
) -> np.ndarray:
    """Simulated half-wave-plate scan of the X-XX energy difference.

    Returns rows (hwp_angle_rad, energy_difference_ueV) following
    D(theta) = mean + s * cos(4 theta - 2 phi) + Gaussian noise; the factor
    four comes from the polarization rotating at twice the plate angle.
    """
    if n_angles < 8:
        raise ScanError(f"need >= 8 scan angles, got {n_angles}")
    rng = np.random.default_rng(seed)
    theta = np.linspace(0.0, np.pi / 2.0, n_angles, endpoint=False)
    d = mean_offset + s * np.cos(4.0 * theta - 2.0 * phi)
    if noise_sigma > 0:
        d = d + rng.normal(0.0, noise_sigma, n_angles)
    return np.column_stack([theta, d])


@dataclass(frozen=True)
class FssFit:
    """Sinusoid fit of a polarization scan."""

    s: float
    s_err: float
    phi: float
    phi_err: float
    mean_offset: float
    bias_limited: bool  # |amplitude| estimator is biased when s ~ noise


def extract_fss(scan) -> FssFit:
    """Fixed-period sinusoid fit returning the splitting magnitude and axis.

    Linear least squares on D = c + a cos(4 theta) + b sin(4 theta); the
    amplitude hypot(a, b) is the splitting, half the phase its direction.
    When the fitted amplitude is below twice its own error the magnitude
    estimate is flagged as bias-limited (|amplitude| of noise is positive).
    """
    scan = np.asarray(scan, dtype=float)
    if scan.ndim != 2 or scan.shape[1] != 2:
        raise ScanError("scan must be rows of (hwp_angle_rad, energy_difference)")
    theta, d = scan[:, 0], scan[:, 1]
    if len(theta) < 8:
        raise ScanError(f"need >= 8 scan points, got {len(theta)}")
    if np.ptp(theta) < np.pi / 2.0 * 0.95:
        raise ScanError("scan must span at least 90 degrees of HWP rotation")
    design = np.column_stack([np.ones_like(theta), np.cos(4 * theta), np.sin(4 * theta)])
    coef, residuals, rank, _ = np.linalg.lstsq(design, d, rcond=None)
    if rank < 3:
        raise ScanError("scan angles do not constrain the sinusoid")
    c, a, b = coef
    resid = d - design @ coef
    dof = max(len(theta) - 3, 1)
    sigma2 = float(resid @ resid) / dof
    cov = sigma2 * np.linalg.inv(design.T @ design)
    s_hat = float(np.hypot(a, b))
    if s_hat > 0:
        grad = np.array([0.0, a / s_hat, b / s_hat])
        s_err = float(np.sqrt(grad @ cov @ grad))
        phi_grad = np.array([0.0, -b, a]) / (2.0 * s_hat**2)
        phi_err = float(np.sqrt(phi_grad @ cov @ phi_grad))
    else:
        s_err = float(np.sqrt(max(cov[1, 1], cov[2, 2])))
        phi_err = float(np.pi / 2)
    phi = 0.5 * float(np.arctan2(b, a))
    return FssFit(
        s=s_hat,
        s_err=s_err,
        phi=phi,
        phi_err=phi_err,
        mean_offset=float(c),
        bias_limited=bool(s_hat < 2.0 * s_err),
    )


def fit_strain_model(settings, observations, e0: float = 1.5898) -> StrainModel:
    """Calibrate (d0, u14, u25) from measured (s, phi) at field settings.

    An observation (s, phi) fixes the splitting vector as
    s * (cos 2 phi, sin 2 phi): the sign of the energy difference in the
    polarization scan distinguishes d from -d, which shows up as a
    quarter-turn in phi.  The affine model is then a linear least-squares
    solve; needs >= 3 settings in general position.
    """
    settings = list(settings)
    observations = list(observations)
    if len(settings) != len(observations):
        raise ValueError("settings and observations must have equal length")
    if len(settings) < 3:
        raise ValueError("need at least 3 calibration points")
    vecs = [s * np.array([np.cos(2 * phi), np.sin(2 * phi)]) for s, phi in observations]
    rows = []
    rhs = []
    for (e14, e25), d in zip(settings, vecs):
        for comp in range(2):
            row = np.zeros(6)
            row[comp] = 1.0
            row[2 + comp] = e14
            row[4 + comp] = e25
            rows.append(row)
            rhs.append(d[comp])
    sol, _, rank, _ = np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)
    if rank < 6:
        raise DegenerateDeviceError("calibration settings do not span the model")
    return StrainModel(
        d0=(float(sol[0]), float(sol[1])),
        u14=(float(sol[2]), float(sol[3])),
        u25=(float(sol[4]), float(sol[5])),
        e0=e0,
    )
