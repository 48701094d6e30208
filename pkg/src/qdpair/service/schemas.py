"""Request/response models for the analysis service.

Field names carry their units as suffixes; densities and matrices use the
JSON layout documented in :mod:`qdpair.quantum` (4x4 array of [re, im]
pairs over the HH/HV/VH/VV basis).
"""

from __future__ import annotations

from pydantic import BaseModel, Field

import numpy as np

from ..quantum import density_matrix_from_dict, density_matrix_to_dict


class Metadata(BaseModel):
    source: str = ""
    timestamp: str | None = None
    provenance: list[str] = Field(default_factory=list)


class DensityMatrixPayload(BaseModel):
    basis: list[str] | None = None
    matrix: list[list[tuple[float, float]]]
    metadata: Metadata | None = None

    def to_array(self) -> np.ndarray:
        return density_matrix_from_dict(self.model_dump())

    @classmethod
    def from_array(cls, rho, source: str = "") -> "DensityMatrixPayload":
        return cls(**density_matrix_to_dict(rho, source=source))


class MetricsResponse(BaseModel):
    fef: float
    concurrence: float
    purity: float
    fidelity_to_target: float


class CascadeParamsPayload(BaseModel):
    s_ueV: float = Field(ge=0.0)
    tau_x_ns: float = Field(gt=0.0)
    tau_xx_ns: float = Field(gt=0.0, default=0.018)
    k: float = Field(ge=0.0, le=1.0)


class CascadeStateRequest(BaseModel):
    t_ns: float = Field(ge=0.0)
    params: CascadeParamsPayload


class CascadeStateResponse(BaseModel):
    amplitudes: list[tuple[float, float]]


class FefResponse(BaseModel):
    fef_analytic: float
    fef_from_matrix: float


class FefCurvePoint(BaseModel):
    s_ueV: float
    fef: float
    fef_err: float = Field(gt=0.0)


class FefFitRequest(BaseModel):
    points: list[FefCurvePoint]


class FefFitResponse(BaseModel):
    tau_x_ns: float
    k: float
    tau_x_err_ns: float
    k_err: float
    covariance: list[list[float]]
    chi2: float
    n_evaluations: int


class G2CorrectRequest(BaseModel):
    rho: DensityMatrixPayload
    g2_x: float = Field(ge=0.0, lt=0.5)
    g2_xx: float = Field(ge=0.0, lt=0.5)


class G2CorrectResponse(BaseModel):
    rho: DensityMatrixPayload
    metrics: MetricsResponse


class LinewidthResponse(BaseModel):
    linewidth_ueV: float


class PurcellResponse(BaseModel):
    purcell_factor: float


class FefCurveRequest(BaseModel):
    params: CascadeParamsPayload
    s_grid_ueV: list[float]
    g2_x: float = Field(ge=0.0, lt=0.5, default=0.0)
    g2_xx: float = Field(ge=0.0, lt=0.5, default=0.0)
    pairs_per_group: float = Field(gt=0.0, default=2000.0)
    seed: int = 0
    include_tomography: bool = True


class FefCurveRow(BaseModel):
    s_ueV: float
    fef_analytic: float
    fef_analytic_corrected: float
    fef_tomography: float | None = None
    fef_tomography_corrected: float | None = None


class FefCurveResponse(BaseModel):
    rows: list[FefCurveRow]


class CountEntry(BaseModel):
    arm_x: str
    arm_xx: str
    counts: float = Field(ge=0.0)
    acquisition_time_s: float = Field(gt=0.0, default=1.0)


class TomographyRequest(BaseModel):
    counts: list[CountEntry]
    runs: int = Field(ge=0, default=2000)
    seed: int = 0
    workers: int = Field(ge=1, default=1)
    max_iter: int = Field(ge=1, default=20000)
    tol: float = Field(gt=0.0, default=1e-10)


class TomographyResponse(BaseModel):
    rho: DensityMatrixPayload
    metrics: MetricsResponse
    metric_errors: dict[str, float] | None = None
    loglik: float
    iterations: int
    converged: bool
    mc_runs: int
    mc_failed_runs: int


class ExpectedCountsRequest(BaseModel):
    rho: DensityMatrixPayload
    total_pairs: float = Field(gt=0.0)


class SimulateCountsRequest(BaseModel):
    params: CascadeParamsPayload
    pairs_per_group: float = Field(gt=0.0)
    seed: int = 0


class CountsResponse(BaseModel):
    counts: list[CountEntry]


class SourceConfigPayload(BaseModel):
    rep_rate_hz: float = Field(gt=0.0, default=80e6)
    tau_x_ns: float = Field(gt=0.0, default=0.044)
    tau_xx_ns: float = Field(gt=0.0, default=0.018)
    prep_fidelity: float = Field(ge=0.0, le=1.0, default=1.0)
    multiphoton_prob: float = Field(ge=0.0, le=1.0, default=0.0)
    blink_on_rate_hz: float = Field(ge=0.0, default=0.0)
    blink_off_rate_hz: float = Field(ge=0.0, default=0.0)
    extraction_eff: float = Field(ge=0.0, le=1.0, default=1.0)


class DetectorConfigPayload(BaseModel):
    jitter_fwhm_ns: float = Field(ge=0.0, default=0.35)
    efficiency: float = Field(ge=0.0, le=1.0, default=1.0)
    deadtime_ns: float = Field(ge=0.0, default=0.0)


class StreamRequest(BaseModel):
    source: SourceConfigPayload = SourceConfigPayload()
    detectors: list[DetectorConfigPayload]
    duration_s: float = Field(gt=0.0)
    seed: int = 0
    monitor: str = "x"


class PoissonStreamRequest(BaseModel):
    rate_hz: float = Field(gt=0.0)
    detectors: list[DetectorConfigPayload]
    duration_s: float = Field(gt=0.0)
    seed: int = 0


class HistogramPayload(BaseModel):
    bin_width_ns: float = Field(gt=0.0)
    counts: list[float]
    zero_delay_bin: int


class G2Request(BaseModel):
    histogram: HistogramPayload
    rep_period_ns: float = Field(gt=0.0)


class G2Response(BaseModel):
    g2: float
    g2_err: float


class HomVisibilityRequest(BaseModel):
    co: HistogramPayload
    cross: HistogramPayload
    delay_ns: float = Field(gt=0.0, default=1.8)


class PeakFitPayload(BaseModel):
    areas: list[float]
    area_errors: list[float]
    center_ns: float
    tau_ns: float
    sigma_ns: float
    chi2: float


class HomVisibilityResponse(BaseModel):
    visibility: float
    visibility_err: float
    co_fit: PeakFitPayload
    cross_fit: PeakFitPayload


class IndistinguishabilityRequest(BaseModel):
    visibility: float
    g2: float = Field(ge=0.0)
    bs_reflectivity: float = Field(gt=0.0, lt=1.0)
    interferometer_visibility: float = Field(gt=0.0, le=1.0)


class IndistinguishabilityResponse(BaseModel):
    indistinguishability: float


class HomBoundRequest(BaseModel):
    tau_x_ns: float = Field(gt=0.0)
    tau_xx_ns: float = Field(gt=0.0)


class HomBoundResponse(BaseModel):
    upper_bound: float


class ArrivingRateRequest(BaseModel):
    measured_rate_hz: float = Field(ge=0.0)
    detector_efficiency: float = Field(gt=0.0, le=1.0)
    deadtime_ns: float = Field(ge=0.0)


class ArrivingRateResponse(BaseModel):
    arriving_rate_hz: float


class ExtractionRequest(BaseModel):
    arriving_rate_hz: float = Field(gt=0.0)
    rep_rate_hz: float = Field(gt=0.0)
    setup_transmission: float = Field(gt=0.0, le=1.0)
    prep_fidelity: float = Field(gt=0.0, le=1.0)


class ExtractionResponse(BaseModel):
    extraction_efficiency: float


class TracePayload(BaseModel):
    bin_centers_ns: list[float]
    counts: list[float]
    irf: list[float]


class SynthesizeTraceRequest(BaseModel):
    model: str = "single_exp"
    tau_ns: float = Field(gt=0.0)
    rise_tau_ns: float | None = None
    irf_fwhm_ns: float = Field(ge=0.0, default=0.070)
    total_counts: float = Field(ge=0.0, default=1e5)
    seed: int = 0
    bin_width_ns: float = Field(gt=0.0, default=0.004)
    t_min_ns: float = -0.3
    t_max_ns: float = 0.5


class FitDecayRequest(BaseModel):
    trace: TracePayload
    model: str = "single_exp"
    fixed_rise_tau_ns: float | None = None
    compute_ci: bool = True


class DecayFitResponse(BaseModel):
    tau_ns: float
    tau_ci_ns: tuple[float, float]
    tau_ci_delta_chi2_1_ns: tuple[float, float]
    amplitude: float
    background: float
    t_offset_ns: float
    chi2: float
    model: str
    ci_at_bound: bool
    n_evaluations: int


class StrainModelPayload(BaseModel):
    d0_ueV: tuple[float, float]
    u14_ueV_per_kV_cm: tuple[float, float]
    u25_ueV_per_kV_cm: tuple[float, float]
    e0_eV: float = 1.5898
    kappa_neV_per_V: tuple[float, float, float] = (90.0, 90.0, 90.0)
    plate_thickness_um: float = Field(gt=0.0, default=300.0)


class FieldSettingPayload(BaseModel):
    e14: float = 0.0
    e25: float = 0.0
    e36: float = 0.0


class StrainFssRequest(BaseModel):
    model: StrainModelPayload
    field_setting: FieldSettingPayload = FieldSettingPayload()


class StrainFssResponse(BaseModel):
    d_ueV: tuple[float, float]
    s_ueV: float
    phi_rad: float


class StrainNullRequest(BaseModel):
    model: StrainModelPayload


class StrainNullResponse(BaseModel):
    e14_kV_cm: float
    e25_kV_cm: float
    condition_number: float


class StrainSweepRequest(BaseModel):
    model: StrainModelPayload
    e14_values: list[float]
    e25_values: list[float]


class StrainSweepRow(BaseModel):
    e14_kV_cm: float
    e25_kV_cm: float
    s_ueV: float
    phi_rad: float


class StrainSweepResponse(BaseModel):
    rows: list[StrainSweepRow]


class StrainEnergyRequest(BaseModel):
    model: StrainModelPayload
    field_setting: FieldSettingPayload
    voltages: bool = False


class StrainEnergyResponse(BaseModel):
    energy_eV: float


class PolarizationScanRequest(BaseModel):
    s_ueV: float = Field(ge=0.0)
    phi_rad: float = 0.0
    noise_sigma_ueV: float = Field(ge=0.0, default=0.0)
    n_angles: int = Field(ge=8, default=36)
    seed: int = 0
    mean_offset_ueV: float = 0.0


class ScanRow(BaseModel):
    hwp_angle_rad: float
    energy_difference_ueV: float


class PolarizationScanResponse(BaseModel):
    rows: list[ScanRow]


class ExtractFssRequest(BaseModel):
    rows: list[ScanRow]


class ExtractFssResponse(BaseModel):
    s_ueV: float
    s_err_ueV: float
    phi_rad: float
    phi_err_rad: float
    mean_offset_ueV: float
    bias_limited: bool


class SpotPayload(BaseModel):
    x_nm: float
    y_nm: float
    sigma_nm: float = Field(gt=0.0)
    amplitude: float = Field(ge=0.0)


class RenderImageRequest(BaseModel):
    spots: list[SpotPayload]
    grid_pitch_nm: float = Field(gt=0.0, default=10000.0)
    shape: tuple[int, int] = (256, 256)
    pixel_pitch_nm: float = Field(gt=0.0, default=100.0)
    marker_width_nm: float = Field(gt=0.0, default=200.0)
    marker_amplitude: float = Field(ge=0.0, default=30.0)
    background: float = Field(ge=0.0, default=20.0)
    photon_scale: float = Field(ge=0.0, default=1.0)
    seed: int = 0


class ImagePayload(BaseModel):
    pgm_base64: str
    pixel_pitch_nm: float
    truth: dict


class LocateRequest(BaseModel):
    image: ImagePayload
    nominal_sigma_nm: float = Field(gt=0.0, default=150.0)
    detection_threshold: float = Field(gt=0.0, default=5.0)


class LocatedSpotPayload(BaseModel):
    x_nm: float
    y_nm: float
    sigma_nm: float
    x_err_nm: float
    y_err_nm: float
    amplitude: float
    contaminated: bool
    overlapping: bool


class LocateResponse(BaseModel):
    spots: list[LocatedSpotPayload]


class RepeatabilityRequest(BaseModel):
    frames: list[ImagePayload]
    match_radius_nm: float = Field(gt=0.0, default=300.0)


class RepeatabilityResponse(BaseModel):
    per_spot_std_nm: list[float]
    mode_nm: float
    median_nm: float
    n_frames: int
    warnings: list[str]


class HealthResponse(BaseModel):
    status: str
    version: str
