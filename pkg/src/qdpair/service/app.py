"""FastAPI application wrapping the toolkit.

Every endpoint is a stateless computation: requests carry all physical
parameters and seeds, responses carry the derived quantities.  Event
streams travel as the framed binary format (application/octet-stream);
everything else is JSON.
"""

from __future__ import annotations

import base64
import functools

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response

from .. import __version__
from .. import cascade, correlations, lifetime, positioning, quantum, strain, stream, tomography
from . import schemas as sc

DOMAIN_ERRORS = (
    ValueError,
    quantum.InvalidStateError,
    cascade.DegenerateDataError,
    tomography.TomographyError,
    stream.SaturationError,
    stream.CalibrationError,
    correlations.HistogramError,
    correlations.PeakFitError,
    lifetime.DecayFitError,
    strain.DegenerateDeviceError,
    strain.ScanError,
    positioning.NoMarkersError,
    positioning.LayoutMismatchError,
)


def _domain_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except DOMAIN_ERRORS as exc:
            raise HTTPException(status_code=422, detail=f"{type(exc).__name__}: {exc}")

    return wrapper


def _source_from_payload(p: sc.SourceConfigPayload) -> stream.SourceConfig:
    return stream.SourceConfig(
        rep_rate=p.rep_rate_hz,
        tau_x=p.tau_x_ns,
        tau_xx=p.tau_xx_ns,
        prep_fidelity=p.prep_fidelity,
        multiphoton_prob=p.multiphoton_prob,
        blink_on_rate=p.blink_on_rate_hz,
        blink_off_rate=p.blink_off_rate_hz,
        extraction_eff=p.extraction_eff,
    )


def _detectors_from_payload(items) -> list[stream.DetectorConfig]:
    return [
        stream.DetectorConfig(
            jitter_fwhm=d.jitter_fwhm_ns, efficiency=d.efficiency, deadtime=d.deadtime_ns
        )
        for d in items
    ]


def _params_from_payload(p: sc.CascadeParamsPayload) -> cascade.CascadeParams:
    return cascade.CascadeParams(s=p.s_ueV, tau_x=p.tau_x_ns, tau_xx=p.tau_xx_ns, k=p.k)


def _strain_from_payload(p: sc.StrainModelPayload) -> strain.StrainModel:
    return strain.StrainModel(
        d0=p.d0_ueV,
        u14=p.u14_ueV_per_kV_cm,
        u25=p.u25_ueV_per_kV_cm,
        e0=p.e0_eV,
        kappa=p.kappa_neV_per_V,
        plate_thickness=p.plate_thickness_um,
    )


def _field_from_payload(p: sc.FieldSettingPayload) -> strain.FieldSetting:
    return strain.FieldSetting(e14=p.e14, e25=p.e25, e36=p.e36)


def _hist_from_payload(p: sc.HistogramPayload) -> correlations.CorrelationHistogram:
    return correlations.CorrelationHistogram(
        bin_width=p.bin_width_ns, counts=np.asarray(p.counts, dtype=float), zero_delay_bin=p.zero_delay_bin
    )


def _hist_to_payload(h: correlations.CorrelationHistogram) -> sc.HistogramPayload:
    return sc.HistogramPayload(
        bin_width_ns=h.bin_width, counts=[float(v) for v in h.counts], zero_delay_bin=h.zero_delay_bin
    )


def _metrics_payload(m: quantum.MetricReport) -> sc.MetricsResponse:
    return sc.MetricsResponse(**m.as_dict())


def _counts_to_table(entries) -> tomography.CountTable:
    table = tomography.CountTable()
    for e in entries:
        table.set(e.arm_x, e.arm_xx, e.counts, e.acquisition_time_s)
    return table


def _image_from_payload(p: sc.ImagePayload) -> positioning.SyntheticImage:
    return positioning.SyntheticImage.from_pgm(
        base64.b64decode(p.pgm_base64), pixel_pitch=p.pixel_pitch_nm, truth=p.truth
    )


def create_app() -> FastAPI:
    app = FastAPI(
        title="qdpair",
        version=__version__,
        description="Simulation and characterization service for quantum-dot photon-pair sources.",
    )

    @app.get("/health", response_model=sc.HealthResponse)
    def health():
        return sc.HealthResponse(status="ok", version=__version__)

    # ----- quantum state metrics ------------------------------------------

    @app.post("/quantum/metrics", response_model=sc.MetricsResponse)
    @_domain_errors
    def quantum_metrics(rho: sc.DensityMatrixPayload):
        return _metrics_payload(quantum.metric_report(rho.to_array()))

    @app.post("/quantum/fef-bruteforce")
    @_domain_errors
    def quantum_fef_bruteforce(rho: sc.DensityMatrixPayload, grid_resolution: int = Query(8, ge=8)):
        return {"fef": quantum.fef_bruteforce_oracle(rho.to_array(), grid_resolution)}

    # ----- cascade model ---------------------------------------------------

    @app.post("/cascade/state", response_model=sc.CascadeStateResponse)
    @_domain_errors
    def cascade_state(req: sc.CascadeStateRequest):
        psi = cascade.cascade_state_at(req.t_ns, _params_from_payload(req.params))
        return sc.CascadeStateResponse(amplitudes=[(float(a.real), float(a.imag)) for a in psi])

    @app.post("/cascade/density-matrix", response_model=sc.DensityMatrixPayload)
    @_domain_errors
    def cascade_dm(params: sc.CascadeParamsPayload):
        rho = cascade.time_averaged_density_matrix(_params_from_payload(params))
        return sc.DensityMatrixPayload.from_array(rho, source="cascade-model")

    @app.post("/cascade/fef", response_model=sc.FefResponse)
    @_domain_errors
    def cascade_fef(params: sc.CascadeParamsPayload):
        p = _params_from_payload(params)
        return sc.FefResponse(
            fef_analytic=cascade.fef_analytic(p),
            fef_from_matrix=cascade.fef_of_params(p),
        )

    @app.post("/cascade/fit-fef", response_model=sc.FefFitResponse)
    @_domain_errors
    def cascade_fit_fef(req: sc.FefFitRequest):
        result = cascade.fit_fef_curve(
            [(p.s_ueV, p.fef, p.fef_err) for p in req.points]
        )
        return sc.FefFitResponse(
            tau_x_ns=result.tau_x,
            k=result.k,
            tau_x_err_ns=result.tau_x_err,
            k_err=result.k_err,
            covariance=[list(row) for row in result.covariance],
            chi2=result.chi2,
            n_evaluations=result.n_evaluations,
        )

    @app.post("/cascade/g2-correct", response_model=sc.G2CorrectResponse)
    @_domain_errors
    def cascade_g2_correct(req: sc.G2CorrectRequest):
        corrected = cascade.g2_correct_density_matrix(req.rho.to_array(), req.g2_x, req.g2_xx)
        return sc.G2CorrectResponse(
            rho=sc.DensityMatrixPayload.from_array(corrected, source="g2-corrected"),
            metrics=_metrics_payload(quantum.metric_report(corrected)),
        )

    @app.post("/cascade/linewidth", response_model=sc.LinewidthResponse)
    @_domain_errors
    def cascade_linewidth(tau_ns: float = Query(gt=0.0)):
        return sc.LinewidthResponse(linewidth_ueV=cascade.natural_linewidth(tau_ns))

    @app.post("/cascade/purcell", response_model=sc.PurcellResponse)
    @_domain_errors
    def cascade_purcell(tau_measured_ns: float = Query(gt=0.0), tau_bulk_ns: float = Query(gt=0.0)):
        return sc.PurcellResponse(purcell_factor=cascade.purcell_factor(tau_measured_ns, tau_bulk_ns))

    @app.post("/cascade/fef-curve", response_model=sc.FefCurveResponse)
    @_domain_errors
    def cascade_fef_curve(req: sc.FefCurveRequest):
        rows = []
        seeds = np.random.SeedSequence(req.seed).spawn(len(req.s_grid_ueV))
        for s, seed in zip(req.s_grid_ueV, seeds):
            p = cascade.CascadeParams(
                s=s, tau_x=req.params.tau_x_ns, tau_xx=req.params.tau_xx_ns, k=req.params.k
            )
            fef_a = cascade.fef_analytic(p)
            fef_ac = cascade.g2_corrected_fef(fef_a, req.g2_x, req.g2_xx)
            row = sc.FefCurveRow(s_ueV=s, fef_analytic=fef_a, fef_analytic_corrected=fef_ac)
            if req.include_tomography:
                rho = cascade.time_averaged_density_matrix(p)
                table = tomography.sample_counts(rho, req.pairs_per_group, seed)
                rec = tomography.reconstruct_mle(table)
                row.fef_tomography = rec.metrics.fef
                corrected = cascade.g2_correct_density_matrix(rec.rho, req.g2_x, req.g2_xx)
                row.fef_tomography_corrected = quantum.fully_entangled_fraction(corrected)
            rows.append(row)
        return sc.FefCurveResponse(rows=rows)

    # ----- tomography ------------------------------------------------------

    @app.post("/tomography/expected-counts", response_model=sc.CountsResponse)
    @_domain_errors
    def tomography_expected(req: sc.ExpectedCountsRequest):
        expected = tomography.expected_counts(req.rho.to_array(), req.total_pairs)
        return sc.CountsResponse(
            counts=[
                sc.CountEntry(arm_x=lbl[0], arm_xx=lbl[1], counts=val)
                for lbl, val in expected.items()
            ]
        )

    @app.post("/tomography/simulate-counts", response_model=sc.CountsResponse)
    @_domain_errors
    def tomography_simulate(req: sc.SimulateCountsRequest):
        rho = cascade.time_averaged_density_matrix(_params_from_payload(req.params))
        table = tomography.sample_counts(rho, req.pairs_per_group, req.seed)
        return sc.CountsResponse(
            counts=[
                sc.CountEntry(
                    arm_x=lbl[0],
                    arm_xx=lbl[1],
                    counts=table.entries[lbl][0],
                    acquisition_time_s=table.entries[lbl][1],
                )
                for lbl in tomography.BASIS_LABELS
            ]
        )

    @app.post("/tomography/reconstruct", response_model=sc.TomographyResponse)
    @_domain_errors
    def tomography_reconstruct(req: sc.TomographyRequest):
        table = _counts_to_table(req.counts)
        result = tomography.analyze_counts(
            table,
            runs=req.runs,
            seed=req.seed,
            workers=req.workers,
            max_iter=req.max_iter,
            tol=req.tol,
        )
        return sc.TomographyResponse(
            rho=sc.DensityMatrixPayload.from_array(result.rho, source="mle-reconstruction"),
            metrics=_metrics_payload(result.metrics),
            metric_errors=result.metric_errors,
            loglik=result.loglik,
            iterations=result.iterations,
            converged=result.converged,
            mc_runs=result.mc_runs,
            mc_failed_runs=result.mc_failed_runs,
        )

    # ----- photon streams and correlations ---------------------------------

    @app.post("/stream/simulate")
    @_domain_errors
    def stream_simulate(req: sc.StreamRequest):
        events = stream.simulate_stream(
            _source_from_payload(req.source),
            _detectors_from_payload(req.detectors),
            duration=req.duration_s,
            seed=req.seed,
            monitor=req.monitor,
        )
        return Response(content=events.to_binary(), media_type="application/octet-stream")

    @app.post("/stream/poisson")
    @_domain_errors
    def stream_poisson(req: sc.PoissonStreamRequest):
        events = stream.simulate_poisson_stream(
            req.rate_hz, _detectors_from_payload(req.detectors), req.duration_s, req.seed
        )
        return Response(content=events.to_binary(), media_type="application/octet-stream")

    @app.post("/correlation/hbt", response_model=sc.HistogramPayload)
    @_domain_errors
    async def correlation_hbt(
        request: Request,
        bin_width_ns: float = Query(gt=0.0),
        window_ns: float = Query(gt=0.0),
        channel_a: int = Query(0, ge=0),
        channel_b: int = Query(1, ge=0),
    ):
        events = stream.EventStream.from_binary(await request.body())
        hist = correlations.hbt_histogram(
            events, bin_width=bin_width_ns, window=window_ns, channels=(channel_a, channel_b)
        )
        return _hist_to_payload(hist)

    @app.post("/correlation/g2", response_model=sc.G2Response)
    @_domain_errors
    def correlation_g2(req: sc.G2Request):
        g2, err = correlations.g2_zero(_hist_from_payload(req.histogram), req.rep_period_ns)
        return sc.G2Response(g2=g2, g2_err=err)

    @app.post("/hom/simulate", response_model=sc.HistogramPayload)
    @_domain_errors
    async def hom_simulate_endpoint(
        request: Request,
        delay_ns: float = Query(1.8, gt=0.0),
        indistinguishability: float = Query(1.0, ge=0.0, le=1.0),
        bs_reflectivity: float = Query(0.5, gt=0.0, lt=1.0),
        interferometer_visibility: float = Query(1.0, gt=0.0, le=1.0),
        copolarized: bool = Query(True),
        seed: int = Query(0),
        bin_width_ns: float = Query(0.05, gt=0.0),
    ):
        events = stream.EventStream.from_binary(await request.body())
        hist = correlations.hom_simulate(
            events,
            delay=delay_ns,
            indistinguishability=indistinguishability,
            bs_reflectivity=bs_reflectivity,
            interferometer_visibility=interferometer_visibility,
            copolarized=copolarized,
            seed=seed,
            bin_width=bin_width_ns,
        )
        return _hist_to_payload(hist)

    @app.post("/hom/visibility", response_model=sc.HomVisibilityResponse)
    @_domain_errors
    def hom_visibility_endpoint(req: sc.HomVisibilityRequest):
        co = _hist_from_payload(req.co)
        cross = _hist_from_payload(req.cross)
        v, err = correlations.hom_visibility(co, cross, delay=req.delay_ns)
        fit_co = correlations.fit_hom_peaks(co, req.delay_ns)
        fit_cross = correlations.fit_hom_peaks(cross, req.delay_ns)

        def peak_payload(f):
            return sc.PeakFitPayload(
                areas=list(f.areas),
                area_errors=list(f.area_errors),
                center_ns=f.center,
                tau_ns=f.tau,
                sigma_ns=f.sigma,
                chi2=f.chi2,
            )

        return sc.HomVisibilityResponse(
            visibility=v,
            visibility_err=err,
            co_fit=peak_payload(fit_co),
            cross_fit=peak_payload(fit_cross),
        )

    @app.post("/hom/indistinguishability", response_model=sc.IndistinguishabilityResponse)
    @_domain_errors
    def hom_indistinguishability(req: sc.IndistinguishabilityRequest):
        return sc.IndistinguishabilityResponse(
            indistinguishability=correlations.indistinguishability_from_hom(
                req.visibility, req.g2, req.bs_reflectivity, req.interferometer_visibility
            )
        )

    @app.post("/hom/upper-bound", response_model=sc.HomBoundResponse)
    @_domain_errors
    def hom_bound(req: sc.HomBoundRequest):
        return sc.HomBoundResponse(upper_bound=correlations.hom_upper_bound(req.tau_x_ns, req.tau_xx_ns))

    @app.post("/rates/arriving", response_model=sc.ArrivingRateResponse)
    @_domain_errors
    def rates_arriving(req: sc.ArrivingRateRequest):
        return sc.ArrivingRateResponse(
            arriving_rate_hz=stream.arriving_rate(
                req.measured_rate_hz, req.detector_efficiency, req.deadtime_ns
            )
        )

    @app.post("/rates/extraction", response_model=sc.ExtractionResponse)
    @_domain_errors
    def rates_extraction(req: sc.ExtractionRequest):
        return sc.ExtractionResponse(
            extraction_efficiency=stream.extraction_efficiency(
                req.arriving_rate_hz, req.rep_rate_hz, req.setup_transmission, req.prep_fidelity
            )
        )

    # ----- lifetime fitting -------------------------------------------------

    @app.post("/lifetime/synthesize", response_model=sc.TracePayload)
    @_domain_errors
    def lifetime_synthesize(req: sc.SynthesizeTraceRequest):
        trace = lifetime.synthesize_trace(
            req.model,
            req.tau_ns,
            req.rise_tau_ns,
            req.irf_fwhm_ns,
            req.total_counts,
            req.seed,
            bin_width=req.bin_width_ns,
            t_min=req.t_min_ns,
            t_max=req.t_max_ns,
        )
        return sc.TracePayload(
            bin_centers_ns=[float(v) for v in trace.bin_centers],
            counts=[float(v) for v in trace.counts],
            irf=[float(v) for v in trace.irf],
        )

    @app.post("/lifetime/fit", response_model=sc.DecayFitResponse)
    @_domain_errors
    def lifetime_fit(req: sc.FitDecayRequest):
        trace = lifetime.DecayTrace(
            bin_centers=np.asarray(req.trace.bin_centers_ns, dtype=float),
            counts=np.asarray(req.trace.counts, dtype=float),
            irf=np.asarray(req.trace.irf, dtype=float),
        )
        result = lifetime.fit_decay(
            trace, model=req.model, fixed_rise_tau=req.fixed_rise_tau_ns, compute_ci=req.compute_ci
        )
        return sc.DecayFitResponse(
            tau_ns=result.tau,
            tau_ci_ns=result.tau_ci,
            tau_ci_delta_chi2_1_ns=result.tau_ci_delta1,
            amplitude=result.amplitude,
            background=result.background,
            t_offset_ns=result.t_offset,
            chi2=result.chi2,
            model=result.model,
            ci_at_bound=result.ci_at_bound,
            n_evaluations=result.n_evaluations,
        )

    # ----- strain tuning ----------------------------------------------------

    @app.post("/strain/fss", response_model=sc.StrainFssResponse)
    @_domain_errors
    def strain_fss(req: sc.StrainFssRequest):
        model = _strain_from_payload(req.model)
        f = _field_from_payload(req.field_setting)
        d = strain.fss_vector(model, f)
        return sc.StrainFssResponse(
            d_ueV=(float(d[0]), float(d[1])),
            s_ueV=float(np.linalg.norm(d)),
            phi_rad=strain.polarization_angle(model, f),
        )

    @app.post("/strain/null", response_model=sc.StrainNullResponse)
    @_domain_errors
    def strain_null(req: sc.StrainNullRequest):
        model = _strain_from_payload(req.model)
        setting = strain.find_null(model)
        return sc.StrainNullResponse(
            e14_kV_cm=setting.e14,
            e25_kV_cm=setting.e25,
            condition_number=model.condition_number(),
        )

    @app.post("/strain/sweep", response_model=sc.StrainSweepResponse)
    @_domain_errors
    def strain_sweep(req: sc.StrainSweepRequest):
        rows = strain.sweep_fss(_strain_from_payload(req.model), req.e14_values, req.e25_values)
        return sc.StrainSweepResponse(rows=[sc.StrainSweepRow(**r) for r in rows])

    @app.post("/strain/energy", response_model=sc.StrainEnergyResponse)
    @_domain_errors
    def strain_energy(req: sc.StrainEnergyRequest):
        return sc.StrainEnergyResponse(
            energy_eV=strain.energy_at(
                _strain_from_payload(req.model), _field_from_payload(req.field_setting), req.voltages
            )
        )

    @app.post("/strain/scan", response_model=sc.PolarizationScanResponse)
    @_domain_errors
    def strain_scan(req: sc.PolarizationScanRequest):
        rows = strain.synthesize_polarization_scan(
            req.s_ueV, req.phi_rad, req.noise_sigma_ueV, req.n_angles, req.seed, req.mean_offset_ueV
        )
        return sc.PolarizationScanResponse(
            rows=[sc.ScanRow(hwp_angle_rad=float(a), energy_difference_ueV=float(d)) for a, d in rows]
        )

    @app.post("/strain/extract-fss", response_model=sc.ExtractFssResponse)
    @_domain_errors
    def strain_extract(req: sc.ExtractFssRequest):
        scan = np.array([[r.hwp_angle_rad, r.energy_difference_ueV] for r in req.rows])
        fit = strain.extract_fss(scan)
        return sc.ExtractFssResponse(
            s_ueV=fit.s,
            s_err_ueV=fit.s_err,
            phi_rad=fit.phi,
            phi_err_rad=fit.phi_err,
            mean_offset_ueV=fit.mean_offset,
            bias_limited=fit.bias_limited,
        )

    # ----- positioning ------------------------------------------------------

    @app.post("/position/render", response_model=sc.ImagePayload)
    @_domain_errors
    def position_render(req: sc.RenderImageRequest):
        image = positioning.render_image(
            [(s.x_nm, s.y_nm, s.sigma_nm, s.amplitude) for s in req.spots],
            grid_pitch=req.grid_pitch_nm,
            shape=req.shape,
            pixel_pitch=req.pixel_pitch_nm,
            marker_width=req.marker_width_nm,
            marker_amplitude=req.marker_amplitude,
            background=req.background,
            photon_scale=req.photon_scale,
            seed=req.seed,
        )
        return sc.ImagePayload(
            pgm_base64=base64.b64encode(image.to_pgm()).decode(),
            pixel_pitch_nm=image.pixel_pitch,
            truth=image.truth,
        )

    @app.post("/position/locate", response_model=sc.LocateResponse)
    @_domain_errors
    def position_locate(req: sc.LocateRequest):
        image = _image_from_payload(req.image)
        spots, _ = positioning.locate_qds(
            image, nominal_sigma=req.nominal_sigma_nm, detection_threshold=req.detection_threshold
        )
        return sc.LocateResponse(
            spots=[
                sc.LocatedSpotPayload(
                    x_nm=s.x,
                    y_nm=s.y,
                    sigma_nm=s.sigma,
                    x_err_nm=s.x_err,
                    y_err_nm=s.y_err,
                    amplitude=s.amplitude,
                    contaminated=s.contaminated,
                    overlapping=s.overlapping,
                )
                for s in spots
            ]
        )

    @app.post("/position/repeatability", response_model=sc.RepeatabilityResponse)
    @_domain_errors
    def position_repeatability(req: sc.RepeatabilityRequest):
        frames = [_image_from_payload(p) for p in req.frames]
        stats = positioning.repeatability(frames, match_radius=req.match_radius_nm)
        return sc.RepeatabilityResponse(**stats)

    return app
