"""Physical model of the XX-X radiative cascade two-photon state.

The intermediate exciton splitting ``s`` makes the emitted pair precess
between Bell states; averaging over the exponentially distributed emission
time and mixing with isotropic noise (weight ``1 - k``) gives the family of
states whose maximal Bell overlap follows the closed-form law implemented in
:func:`fef_analytic`.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import curve_fit

from .quantum import fully_entangled_fraction, validate_density_matrix

# reduced Planck constant in ueV * ns
HBAR_UEV_NS = 0.6582119569

IDENTITY4 = np.eye(4, dtype=complex)


class DegenerateDataError(ValueError):
    """Fit input does not constrain the model parameters."""


@dataclass(frozen=True)
class CascadeParams:
    """Physics of one quantum dot: splitting, lifetimes, coherence weight.

    s: fine structure splitting magnitude, ueV
    tau_x / tau_xx: exciton and biexciton lifetimes, ns
    k: coherent fraction in [0, 1]; the remainder is isotropic noise
    """

    s: float
    tau_x: float
    tau_xx: float
    k: float

    def __post_init__(self):
        if self.s < 0:
            raise ValueError(f"s must be >= 0, got {self.s}")
        if self.tau_x <= 0 or self.tau_xx <= 0:
            raise ValueError("lifetimes must be positive")
        if not 0.0 <= self.k <= 1.0:
            raise ValueError(f"k must lie in [0, 1], got {self.k}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FefFitResult:
    """Weighted least-squares fit of the FEF(s) law to measured points."""

    tau_x: float
    k: float
    tau_x_err: float
    k_err: float
    covariance: tuple[tuple[float, float], tuple[float, float]]
    chi2: float
    n_evaluations: int

    def as_dict(self) -> dict:
        return asdict(self)


def cascade_state_at(t: float, params: CascadeParams) -> np.ndarray:
    """Two-photon state a time ``t`` (ns) after the exciton was populated.

    Returns (|HH> + exp(i s t / hbar)|VV>) / sqrt(2).
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    phase = np.exp(1j * params.s * t / HBAR_UEV_NS)
    return np.array([1.0, 0.0, 0.0, phase], dtype=complex) / np.sqrt(2.0)


def time_averaged_density_matrix(params: CascadeParams) -> np.ndarray:
    """Emission-time average of the precessing pair state, mixed with noise.

    The average over the exponential lifetime distribution has the closed
    form of a Lorentzian coherence: the HH/VV off-diagonal element has
    magnitude 1 / (2 sqrt(1 + x^2)) and phase -/+ atan(x) with
    x = s tau_x / hbar.  The result is k * rho_avg + (1 - k) * I/4.
    """
    x = params.s * params.tau_x / HBAR_UEV_NS
    coherence = 0.5 * (1.0 - 1j * x) / (1.0 + x * x)
    rho_avg = np.zeros((4, 4), dtype=complex)
    rho_avg[0, 0] = rho_avg[3, 3] = 0.5
    rho_avg[0, 3] = coherence
    rho_avg[3, 0] = np.conj(coherence)
    rho = params.k * rho_avg + (1.0 - params.k) * IDENTITY4 / 4.0
    return validate_density_matrix(rho)


def fef_analytic(params: CascadeParams) -> float:
    """Closed-form maximal Bell overlap of the time-averaged cascade state.

    FEF = (1 + k + 2k / sqrt(1 + (s tau_x / hbar)^2)) / 4.
    """
    x = params.s * params.tau_x / HBAR_UEV_NS
    return 0.25 * (1.0 + params.k + 2.0 * params.k / np.sqrt(1.0 + x * x))


def _fef_model(s, tau_x, k):
    x = np.asarray(s) * tau_x / HBAR_UEV_NS
    return 0.25 * (1.0 + k + 2.0 * k / np.sqrt(1.0 + x * x))


def fit_fef_curve(points, p0=(0.1, 0.9), max_evaluations: int = 20000) -> FefFitResult:
    """Fit (tau_x, k) of the FEF law to (s, fef, fef_err) samples.

    Weighted nonlinear least squares; 1-sigma uncertainties come from the
    curvature of the chi^2 surface (covariance of the fit).
    """
    pts = [(float(s), float(f), float(e)) for s, f, e in points]
    if len(pts) < 3:
        raise DegenerateDataError(f"need >= 3 points, got {len(pts)}")
    s_vals = np.array([p[0] for p in pts])
    f_vals = np.array([p[1] for p in pts])
    errs = np.array([p[2] for p in pts])
    if np.unique(s_vals).size < 2:
        raise DegenerateDataError("all points share the same s value")
    sigma = np.where(errs > 0, errs, 1.0)
    try:
        popt, pcov, infodict, _, _ = curve_fit(
            _fef_model,
            s_vals,
            f_vals,
            p0=p0,
            sigma=sigma,
            absolute_sigma=np.any(errs > 0),
            bounds=([1e-6, 0.0], [100.0, 1.0]),
            maxfev=max_evaluations,
            full_output=True,
        )
    except RuntimeError as exc:
        raise RuntimeError(f"FEF curve fit did not converge: {exc}") from exc
    resid = (_fef_model(s_vals, *popt) - f_vals) / sigma
    perr = np.sqrt(np.diag(pcov))
    return FefFitResult(
        tau_x=float(popt[0]),
        k=float(popt[1]),
        tau_x_err=float(perr[0]),
        k_err=float(perr[1]),
        covariance=tuple(tuple(float(v) for v in row) for row in pcov),
        chi2=float(np.sum(resid**2)),
        n_evaluations=int(infodict["nfev"]),
    )


def g2_correct_density_matrix(rho, g2_x: float, g2_xx: float) -> np.ndarray:
    """Remove the isotropic multiphoton background from a measured state.

    Subtracts a fully mixed component of weight eps = g2_x + g2_xx and
    renormalizes: (rho - eps I/4) / (1 - eps).  If rounding pushes an
    eigenvalue below zero the result is projected back onto the PSD cone.
    This is a model-based correction (isotropic background).
    """
    for name, g2 in (("g2_x", g2_x), ("g2_xx", g2_xx)):
        if not 0.0 <= g2 < 0.5:
            raise ValueError(f"{name} must lie in [0, 0.5), got {g2}")
    rho = validate_density_matrix(rho)
    eps = g2_x + g2_xx
    if eps >= 1.0:
        raise ValueError(f"total multiphoton fraction {eps} >= 1")
    corrected = (rho - eps * IDENTITY4 / 4.0) / (1.0 - eps)
    eigs, vecs = np.linalg.eigh(corrected)
    if eigs[0] < -1e-10:
        clipped = np.clip(eigs, 0.0, None)
        total = clipped.sum()
        if total <= 0:
            raise ValueError("correction produced a trace-zero matrix")
        corrected = (vecs * (clipped / total)) @ vecs.conj().T
    return corrected


def g2_corrected_fef(fef: float, g2_x: float, g2_xx: float) -> float:
    """Scalar form of the correction: (F - eps/4) / (1 - eps)."""
    eps = g2_x + g2_xx
    return (fef - eps / 4.0) / (1.0 - eps)


def natural_linewidth(tau: float) -> float:
    """Lifetime-limited linewidth hbar / tau in ueV for tau in ns."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return HBAR_UEV_NS / tau


def purcell_factor(tau_measured: float, tau_bulk: float) -> float:
    """Spontaneous-emission speedup: bulk lifetime over measured lifetime."""
    if tau_measured <= 0 or tau_bulk <= 0:
        raise ValueError("lifetimes must be positive")
    return tau_bulk / tau_measured


def fef_of_params(params: CascadeParams) -> float:
    """FEF evaluated on the constructed density matrix (cross-check path)."""
    return fully_entangled_fraction(time_averaged_density_matrix(params))
