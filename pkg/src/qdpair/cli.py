"""Command-line client for the analysis service.

Every subcommand drives the HTTP API: by default against an in-process
instance of the service, or against a running server via ``--server``.
Each run writes its artifacts plus a ``manifest.json`` recording the
command, configuration digest, master seed, tool version, and the SHA-256
of every input and output; rerunning with the same manifest inputs
reproduces the outputs byte for byte.

Exit codes: 0 success, 2 configuration/usage error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import base64
import hashlib
import importlib.resources
import json
import time
import warnings
from pathlib import Path

import click
import httpx
import numpy as np
import yaml

from . import __version__

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# service-side exception names that indicate a numerical failure rather
# than bad input data
_NUMERIC_ERRORS = {
    "TomographyError",
    "PeakFitError",
    "DecayFitError",
    "DegenerateDataError",
    "RuntimeError",
}


class CliFailure(click.ClickException):
    def __init__(self, message: str, exit_code: int):
        super().__init__(message)
        self.exit_code = exit_code


class ServiceClient:
    """Thin HTTP client; in-process ASGI transport unless --server is given."""

    def __init__(self, server: str | None):
        if server:
            self._client = httpx.Client(base_url=server, timeout=600.0)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient
                from .service import create_app

                self._client = TestClient(create_app())

    def request(self, method: str, path: str, **kwargs) -> httpx.Response:
        resp = self._client.request(method, path, **kwargs)
        if resp.status_code >= 400:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            detail_str = detail if isinstance(detail, str) else json.dumps(detail)
            kind = detail_str.split(":", 1)[0]
            code = EXIT_NUMERIC if kind in _NUMERIC_ERRORS else EXIT_DATA
            raise CliFailure(f"service error ({resp.status_code}): {detail_str}", code)
        return resp

    def post(self, path: str, **kwargs) -> httpx.Response:
        return self.request("POST", path, **kwargs)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_config(name_or_path: str) -> tuple[dict, str, str]:
    """Load a YAML config from a path or a bundled preset name (qd2/qd3/qd4).

    Returns (config, sha256 digest, resolved identifier).
    """
    path = Path(name_or_path)
    if path.exists():
        raw = path.read_bytes()
        ident = str(path)
    else:
        resource = importlib.resources.files("qdpair").joinpath(f"data/{name_or_path}.yaml")
        if not resource.is_file():
            raise CliFailure(
                f"config {name_or_path!r} is neither a file nor a bundled preset", EXIT_CONFIG
            )
        raw = resource.read_bytes()
        ident = f"bundled:{name_or_path}"
    try:
        config = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise CliFailure(f"cannot parse config {ident}: {exc}", EXIT_CONFIG)
    if not isinstance(config, dict):
        raise CliFailure(f"config {ident} must be a mapping", EXIT_CONFIG)
    return config, _sha256(raw), ident


def require_section(config: dict, section: str, ident: str) -> dict:
    if section not in config:
        raise CliFailure(f"config {ident} is missing the {section!r} section", EXIT_CONFIG)
    return config[section]


def parse_grid(spec: str) -> list[float]:
    """start:stop:num linear grid, or a comma-separated list of values."""
    try:
        if ":" in spec:
            start, stop, num = spec.split(":")
            values = np.linspace(float(start), float(stop), int(num))
            if len(values) == 0:
                raise ValueError("empty grid")
            return [float(v) for v in values]
        values = [float(v) for v in spec.split(",") if v.strip()]
        if not values:
            raise ValueError("empty grid")
        return values
    except ValueError as exc:
        raise CliFailure(f"cannot parse grid {spec!r}: {exc}", EXIT_CONFIG)


class RunWriter:
    """Collects outputs for one command and emits the manifest."""

    def __init__(self, out_dir: str, command: str, parameters: dict, seed=None,
                 config_digest=None, config_id=None):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.parameters = parameters
        self.seed = seed
        self.config_digest = config_digest
        self.config_id = config_id
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.t0 = time.monotonic()

    def add_input(self, path: str, data: bytes):
        self.inputs[str(path)] = _sha256(data)

    def write(self, name: str, content) -> Path:
        path = self.dir / name
        data = content if isinstance(content, bytes) else content.encode()
        path.write_bytes(data)
        self.outputs[name] = _sha256(data)
        return path

    def write_json(self, name: str, payload) -> Path:
        return self.write(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def finish(self):
        manifest = {
            "command": self.command,
            "parameters": self.parameters,
            "master_seed": self.seed,
            "config": self.config_id,
            "config_digest": self.config_digest,
            "tool_version": __version__,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time_s": round(time.monotonic() - self.t0, 6),
        }
        (self.dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n"
        )
        click.echo(f"wrote {', '.join(sorted(self.outputs))} to {self.dir}")


@click.group()
@click.version_option(__version__)
@click.option("--server", default=None, envvar="QDPAIR_SERVER",
              help="URL of a running service; default runs it in-process.")
@click.pass_context
def main(ctx, server):
    """Simulation and characterization toolkit for photon-pair sources."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


def client_of(ctx) -> ServiceClient:
    return ServiceClient(ctx.obj.get("server"))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the analysis service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command("fef-curve")
@click.option("--config", "config_name", required=True, help="Config path or preset name.")
@click.option("--grid", default="0:5:26", show_default=True, help="Splitting grid, start:stop:num (ueV).")
@click.option("--seed", default=0, show_default=True)
@click.option("--pairs-per-group", default=2000.0, show_default=True)
@click.option("--tomography/--no-tomography", "with_tomography", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def fef_curve(ctx, config_name, grid, seed, pairs_per_group, with_tomography, out):
    """Entangled fraction versus splitting: analytic and simulated, raw and
    multiphoton-corrected."""
    config, digest, ident = load_config(config_name)
    cas = require_section(config, "cascade", ident)
    g2 = config.get("g2", {"x": 0.0, "xx": 0.0})
    s_grid = parse_grid(grid)
    run = RunWriter(out, "fef-curve", {
        "grid": grid, "pairs_per_group": pairs_per_group, "tomography": with_tomography,
    }, seed=seed, config_digest=digest, config_id=ident)
    resp = client_of(ctx).post("/cascade/fef-curve", json={
        "params": {
            "s_ueV": 0.0,
            "tau_x_ns": cas["tau_x_ns"],
            "tau_xx_ns": cas["tau_xx_ns"],
            "k": cas["k"],
        },
        "s_grid_ueV": s_grid,
        "g2_x": g2.get("x", 0.0),
        "g2_xx": g2.get("xx", 0.0),
        "pairs_per_group": pairs_per_group,
        "seed": seed,
        "include_tomography": with_tomography,
    })
    rows = resp.json()["rows"]
    lines = ["s_ueV,fef_analytic,fef_analytic_corrected,fef_tomography,fef_tomography_corrected"]
    for r in rows:
        tomo = "" if r["fef_tomography"] is None else repr(r["fef_tomography"])
        tomoc = "" if r["fef_tomography_corrected"] is None else repr(r["fef_tomography_corrected"])
        lines.append(f"{r['s_ueV']!r},{r['fef_analytic']!r},{r['fef_analytic_corrected']!r},{tomo},{tomoc}")
    run.write("fef_curve.csv", "\n".join(lines) + "\n")
    run.finish()


@main.command()
@click.option("--counts", "counts_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--runs", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--workers", default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def tomography(ctx, counts_path, runs, seed, workers, out):
    """Reconstruct the two-photon state from a 36-setting count table."""
    from .tomography import CountTable

    raw = Path(counts_path).read_bytes()
    try:
        table = CountTable.from_csv(raw.decode())
        table.require_complete()
    except ValueError as exc:
        raise CliFailure(str(exc), EXIT_DATA)
    run = RunWriter(out, "tomography", {"counts": str(counts_path), "runs": runs, "workers": workers},
                    seed=seed)
    run.add_input(counts_path, raw)
    entries = [
        {"arm_x": lbl[0], "arm_xx": lbl[1], "counts": c, "acquisition_time_s": t}
        for lbl, (c, t) in table.entries.items()
    ]
    resp = client_of(ctx).post("/tomography/reconstruct", json={
        "counts": entries, "runs": runs, "seed": seed, "workers": workers,
    })
    run.write_json("result.json", resp.json())
    run.finish()


def _stream_request_from_config(config: dict, ident: str, duration: float, seed: int, monitor: str) -> dict:
    source = require_section(config, "source", ident)
    detectors = require_section(config, "detectors", ident)
    return {
        "source": source and {
            "rep_rate_hz": source.get("rep_rate_hz", 80e6),
            "tau_x_ns": source["tau_x_ns"],
            "tau_xx_ns": source["tau_xx_ns"],
            "prep_fidelity": source.get("prep_fidelity", 1.0),
            "multiphoton_prob": source.get("multiphoton_prob", 0.0),
            "blink_on_rate_hz": source.get("blink_on_rate_hz", 0.0),
            "blink_off_rate_hz": source.get("blink_off_rate_hz", 0.0),
            "extraction_eff": source.get("extraction_eff", 1.0),
        },
        "detectors": [
            {
                "jitter_fwhm_ns": d.get("jitter_fwhm_ns", 0.35),
                "efficiency": d.get("efficiency", 1.0),
                "deadtime_ns": d.get("deadtime_ns", 0.0),
            }
            for d in detectors
        ],
        "duration_s": duration,
        "seed": seed,
        "monitor": monitor,
    }


@main.command()
@click.option("--config", "config_name", required=True)
@click.option("--duration", default=0.01, show_default=True, help="Simulated time, seconds.")
@click.option("--seed", default=0, show_default=True)
@click.option("--monitor", default="x", show_default=True, type=click.Choice(["x", "xx", "both"]))
@click.option("--csv/--no-csv", "write_csv", default=False, show_default=True,
              help="Also write the stream as CSV.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def stream(ctx, config_name, duration, seed, monitor, write_csv, out):
    """Simulate a time-tagged detector click stream."""
    config, digest, ident = load_config(config_name)
    run = RunWriter(out, "stream", {"duration_s": duration, "monitor": monitor},
                    seed=seed, config_digest=digest, config_id=ident)
    payload = _stream_request_from_config(config, ident, duration, seed, monitor)
    resp = client_of(ctx).post("/stream/simulate", json=payload)
    run.write("events.bin", resp.content)
    if write_csv:
        from .stream import EventStream

        run.write("events.csv", EventStream.from_binary(resp.content).to_csv())
    run.finish()


@main.command()
@click.option("--stream", "stream_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--bin-width", default=0.1, show_default=True, help="Histogram bin, ns.")
@click.option("--window", default=100.0, show_default=True, help="Max |delay|, ns.")
@click.option("--rep-period", default=None, type=float,
              help="Pulse period in ns; defaults to the stream header value.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def hbt(ctx, stream_path, bin_width, window, rep_period, out):
    """Coincidence histogram and side-peak-normalized g2(0) of a stream."""
    from .stream import EventStream

    raw = Path(stream_path).read_bytes()
    try:
        events = EventStream.from_binary(raw)
    except ValueError as exc:
        raise CliFailure(f"cannot read stream: {exc}", EXIT_DATA)
    if rep_period is None:
        rep_period = events.rep_period_ns
    if rep_period is None:
        raise CliFailure("stream has no repetition period; pass --rep-period", EXIT_CONFIG)
    run = RunWriter(out, "hbt", {"bin_width_ns": bin_width, "window_ns": window,
                                 "rep_period_ns": rep_period, "stream": str(stream_path)})
    run.add_input(stream_path, raw)
    client = client_of(ctx)
    hist = client.post(
        f"/correlation/hbt?bin_width_ns={bin_width}&window_ns={window}", content=raw
    ).json()
    g2 = client.post("/correlation/g2", json={"histogram": hist, "rep_period_ns": rep_period}).json()
    lines = ["bin_center_ns,counts"]
    for i, c in enumerate(hist["counts"]):
        center = (i - hist["zero_delay_bin"]) * hist["bin_width_ns"]
        lines.append(f"{center!r},{int(c)}")
    run.write("histogram.csv", "\n".join(lines) + "\n")
    run.write_json("g2.json", {"g2": g2["g2"], "g2_err": g2["g2_err"], "rep_period_ns": rep_period})
    run.finish()


@main.command()
@click.option("--config", "config_name", required=True)
@click.option("--duration", default=0.02, show_default=True, help="Simulated time, seconds.")
@click.option("--seed", default=0, show_default=True)
@click.option("--bin-width", default=0.05, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def hom(ctx, config_name, duration, seed, bin_width, out):
    """Two-photon interference: co/cross histograms, visibility, and the
    setup-corrected indistinguishability."""
    config, digest, ident = load_config(config_name)
    source = require_section(config, "source", ident)
    hom_cfg = require_section(config, "hom", ident)
    run = RunWriter(out, "hom", {"duration_s": duration, "bin_width_ns": bin_width},
                    seed=seed, config_digest=digest, config_id=ident)
    client = client_of(ctx)

    stream_payload = {
        "source": {
            "rep_rate_hz": source.get("rep_rate_hz", 80e6),
            "tau_x_ns": source["tau_x_ns"],
            "tau_xx_ns": source["tau_xx_ns"],
            "prep_fidelity": source.get("prep_fidelity", 1.0),
            "multiphoton_prob": hom_cfg.get("multiphoton_prob", source.get("multiphoton_prob", 0.0)),
            "extraction_eff": source.get("extraction_eff", 1.0),
        },
        "detectors": [{
            "jitter_fwhm_ns": hom_cfg.get("collection_jitter_fwhm_ns", 0.15),
            "efficiency": hom_cfg.get("collection_efficiency", 0.5),
            "deadtime_ns": 0.0,
        }],
        "duration_s": duration,
        "seed": seed,
        "monitor": "x",
    }
    events = client.post("/stream/simulate", json=stream_payload).content

    delay = hom_cfg.get("delay_ns", 1.8)
    common = (
        f"delay_ns={delay}&indistinguishability={hom_cfg['indistinguishability']}"
        f"&bs_reflectivity={hom_cfg['bs_reflectivity']}"
        f"&interferometer_visibility={hom_cfg['interferometer_visibility']}"
        f"&bin_width_ns={bin_width}"
    )
    co = client.post(f"/hom/simulate?{common}&copolarized=true&seed={seed + 1}", content=events).json()
    cross = client.post(f"/hom/simulate?{common}&copolarized=false&seed={seed + 2}", content=events).json()
    vis = client.post("/hom/visibility", json={"co": co, "cross": cross, "delay_ns": delay}).json()
    g2_assumed = hom_cfg.get("g2_assumed", 0.0)
    indist = client.post("/hom/indistinguishability", json={
        "visibility": vis["visibility"],
        "g2": g2_assumed,
        "bs_reflectivity": hom_cfg["bs_reflectivity"],
        "interferometer_visibility": hom_cfg["interferometer_visibility"],
    }).json()
    bound = client.post("/hom/upper-bound", json={
        "tau_x_ns": source["tau_x_ns"], "tau_xx_ns": source["tau_xx_ns"],
    }).json()

    for name, hist in (("hom_co.csv", co), ("hom_cross.csv", cross)):
        lines = ["bin_center_ns,counts"]
        for i, c in enumerate(hist["counts"]):
            center = (i - hist["zero_delay_bin"]) * hist["bin_width_ns"]
            lines.append(f"{center!r},{int(c)}")
        run.write(name, "\n".join(lines) + "\n")
    run.write_json("hom.json", {
        "visibility": vis["visibility"],
        "visibility_err": vis["visibility_err"],
        "g2_assumed": g2_assumed,
        "indistinguishability": indist["indistinguishability"],
        "lifetime_ratio_upper_bound": bound["upper_bound"],
        "input_indistinguishability": hom_cfg["indistinguishability"],
    })
    run.finish()


@main.group()
def lifetime():
    """Decay-trace synthesis and lifetime fitting."""


@lifetime.command("synth")
@click.option("--model", default="single_exp", type=click.Choice(["single_exp", "rise_decay"]), show_default=True)
@click.option("--tau", required=True, type=float, help="Decay time, ns.")
@click.option("--rise-tau", default=None, type=float, help="Rise time for rise_decay, ns.")
@click.option("--irf-fwhm", default=0.070, show_default=True, help="IRF width, ns.")
@click.option("--counts", default=1e5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--bin-width", default=0.004, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def lifetime_synth(ctx, model, tau, rise_tau, irf_fwhm, counts, seed, bin_width, out):
    """Generate a synthetic decay trace."""
    run = RunWriter(out, "lifetime synth", {
        "model": model, "tau_ns": tau, "rise_tau_ns": rise_tau,
        "irf_fwhm_ns": irf_fwhm, "total_counts": counts, "bin_width_ns": bin_width,
    }, seed=seed)
    trace = client_of(ctx).post("/lifetime/synthesize", json={
        "model": model, "tau_ns": tau, "rise_tau_ns": rise_tau, "irf_fwhm_ns": irf_fwhm,
        "total_counts": counts, "seed": seed, "bin_width_ns": bin_width,
    }).json()
    lines = ["bin_center_ns,counts,irf"]
    for c, n, k in zip(trace["bin_centers_ns"], trace["counts"], trace["irf"]):
        lines.append(f"{c!r},{int(n)},{k!r}")
    run.write("trace.csv", "\n".join(lines) + "\n")
    run.finish()


@lifetime.command("fit")
@click.option("--trace", "trace_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", default="single_exp", type=click.Choice(["single_exp", "rise_decay"]), show_default=True)
@click.option("--rise-tau", default=None, type=float)
@click.option("--ci/--no-ci", "with_ci", default=True, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def lifetime_fit(ctx, trace_path, model, rise_tau, with_ci, out):
    """Fit an IRF-convolved decay model to a trace CSV."""
    from .lifetime import DecayTrace

    raw = Path(trace_path).read_bytes()
    try:
        trace = DecayTrace.from_csv(raw.decode())
    except ValueError as exc:
        raise CliFailure(f"cannot read trace: {exc}", EXIT_DATA)
    run = RunWriter(out, "lifetime fit", {"trace": str(trace_path), "model": model,
                                          "rise_tau_ns": rise_tau, "ci": with_ci})
    run.add_input(trace_path, raw)
    resp = client_of(ctx).post("/lifetime/fit", json={
        "trace": {
            "bin_centers_ns": list(map(float, trace.bin_centers)),
            "counts": list(map(float, trace.counts)),
            "irf": list(map(float, trace.irf)),
        },
        "model": model, "fixed_rise_tau_ns": rise_tau, "compute_ci": with_ci,
    })
    run.write_json("fit.json", resp.json())
    run.finish()


def _strain_model_payload(config: dict, ident: str) -> dict:
    sec = require_section(config, "strain", ident)
    return {
        "d0_ueV": sec["d0_ueV"],
        "u14_ueV_per_kV_cm": sec["u14_ueV_per_kV_cm"],
        "u25_ueV_per_kV_cm": sec["u25_ueV_per_kV_cm"],
        "e0_eV": sec.get("e0_eV", 1.5898),
        "kappa_neV_per_V": sec.get("kappa_neV_per_V", [90.0, 90.0, 90.0]),
        "plate_thickness_um": sec.get("plate_thickness_um", 300.0),
    }


@main.group()
def strain():
    """Strain-actuator model: nulling, sweeps, polarization scans."""


@strain.command("find-null")
@click.option("--config", "config_name", required=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def strain_find_null(ctx, config_name, out):
    """Fields on the two leg pairs that cancel the splitting."""
    config, digest, ident = load_config(config_name)
    run = RunWriter(out, "strain find-null", {}, config_digest=digest, config_id=ident)
    resp = client_of(ctx).post("/strain/null", json={"model": _strain_model_payload(config, ident)})
    run.write_json("null.json", resp.json())
    run.finish()


@strain.command("sweep")
@click.option("--config", "config_name", required=True)
@click.option("--e14", default="0:16:9", show_default=True, help="Grid for legs 1-4, kV/cm.")
@click.option("--e25", default="0:12:9", show_default=True, help="Grid for legs 2-5, kV/cm.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def strain_sweep(ctx, config_name, e14, e25, out):
    """Splitting magnitude and angle over a field grid."""
    config, digest, ident = load_config(config_name)
    run = RunWriter(out, "strain sweep", {"e14": e14, "e25": e25},
                    config_digest=digest, config_id=ident)
    resp = client_of(ctx).post("/strain/sweep", json={
        "model": _strain_model_payload(config, ident),
        "e14_values": parse_grid(e14),
        "e25_values": parse_grid(e25),
    })
    lines = ["e14_kV_cm,e25_kV_cm,s_ueV,phi_rad"]
    for r in resp.json()["rows"]:
        lines.append(f"{r['e14_kV_cm']!r},{r['e25_kV_cm']!r},{r['s_ueV']!r},{r['phi_rad']!r}")
    run.write("sweep.csv", "\n".join(lines) + "\n")
    run.finish()


@strain.command("scan")
@click.option("--s", "s_ueV", required=True, type=float, help="Splitting magnitude, ueV.")
@click.option("--phi", default=0.0, show_default=True, help="Polarization angle, rad.")
@click.option("--noise", default=0.5, show_default=True, help="Energy noise sigma, ueV.")
@click.option("--n-angles", default=36, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def strain_scan(ctx, s_ueV, phi, noise, n_angles, seed, out):
    """Synthesize a polarization-resolved energy-difference scan."""
    run = RunWriter(out, "strain scan", {"s_ueV": s_ueV, "phi_rad": phi,
                                         "noise_sigma_ueV": noise, "n_angles": n_angles}, seed=seed)
    resp = client_of(ctx).post("/strain/scan", json={
        "s_ueV": s_ueV, "phi_rad": phi, "noise_sigma_ueV": noise,
        "n_angles": n_angles, "seed": seed,
    })
    lines = ["hwp_angle_rad,energy_difference_ueV"]
    for r in resp.json()["rows"]:
        lines.append(f"{r['hwp_angle_rad']!r},{r['energy_difference_ueV']!r}")
    run.write("scan.csv", "\n".join(lines) + "\n")
    run.finish()


@strain.command("fss")
@click.option("--scan", "scan_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def strain_fss(ctx, scan_path, out):
    """Extract the splitting from a polarization scan CSV."""
    raw = Path(scan_path).read_bytes()
    rows = []
    try:
        lines = raw.decode().splitlines()
        if lines[0].strip() != "hwp_angle_rad,energy_difference_ueV":
            raise ValueError("expected header: hwp_angle_rad,energy_difference_ueV")
        for line in lines[1:]:
            if line.strip():
                a, d = line.split(",")
                rows.append({"hwp_angle_rad": float(a), "energy_difference_ueV": float(d)})
    except (ValueError, IndexError) as exc:
        raise CliFailure(f"cannot read scan: {exc}", EXIT_DATA)
    run = RunWriter(out, "strain fss", {"scan": str(scan_path)})
    run.add_input(scan_path, raw)
    resp = client_of(ctx).post("/strain/extract-fss", json={"rows": rows})
    run.write_json("fss.json", resp.json())
    run.finish()


@strain.command("energy")
@click.option("--config", "config_name", required=True)
@click.option("--e14", default=0.0, show_default=True)
@click.option("--e25", default=0.0, show_default=True)
@click.option("--e36", default=0.0, show_default=True)
@click.option("--voltages", is_flag=True, help="Interpret the settings as volts, not kV/cm.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def strain_energy(ctx, config_name, e14, e25, e36, voltages, out):
    """Emission energy at a field or voltage setting."""
    config, digest, ident = load_config(config_name)
    run = RunWriter(out, "strain energy", {"e14": e14, "e25": e25, "e36": e36, "voltages": voltages},
                    config_digest=digest, config_id=ident)
    resp = client_of(ctx).post("/strain/energy", json={
        "model": _strain_model_payload(config, ident),
        "field_setting": {"e14": e14, "e25": e25, "e36": e36},
        "voltages": voltages,
    })
    run.write_json("energy.json", resp.json())
    run.finish()


def _render_payload(config: dict, ident: str, seed: int) -> dict:
    sec = require_section(config, "positioning", ident)
    return {
        "spots": [
            {"x_nm": s[0], "y_nm": s[1], "sigma_nm": s[2], "amplitude": s[3]}
            for s in sec["spots"]
        ],
        "grid_pitch_nm": sec.get("grid_pitch_nm", 10000.0),
        "shape": tuple(sec.get("shape", (256, 256))),
        "pixel_pitch_nm": sec.get("pixel_pitch_nm", 100.0),
        "marker_width_nm": sec.get("marker_width_nm", 200.0),
        "marker_amplitude": sec.get("marker_amplitude", 30.0),
        "background": sec.get("background", 20.0),
        "photon_scale": sec.get("photon_scale", 1.0),
        "seed": seed,
    }


@main.group()
def locate():
    """Synthetic microscope frames and emitter localization."""


@locate.command("render")
@click.option("--config", "config_name", required=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def locate_render(ctx, config_name, seed, out):
    """Render one synthetic frame (PGM plus truth sidecar)."""
    config, digest, ident = load_config(config_name)
    run = RunWriter(out, "locate render", {}, seed=seed, config_digest=digest, config_id=ident)
    resp = client_of(ctx).post("/position/render", json=_render_payload(config, ident, seed)).json()
    run.write("image.pgm", base64.b64decode(resp["pgm_base64"]))
    run.write_json("truth.json", {"pixel_pitch_nm": resp["pixel_pitch_nm"], **resp["truth"]})
    run.finish()


@locate.command("fit")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--pixel-pitch", default=100.0, show_default=True, help="nm per pixel.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def locate_fit(ctx, image_path, pixel_pitch, out):
    """Locate emitters in a PGM frame; positions are in the marker frame."""
    raw = Path(image_path).read_bytes()
    run = RunWriter(out, "locate fit", {"image": str(image_path), "pixel_pitch_nm": pixel_pitch})
    run.add_input(image_path, raw)
    resp = client_of(ctx).post("/position/locate", json={
        "image": {
            "pgm_base64": base64.b64encode(raw).decode(),
            "pixel_pitch_nm": pixel_pitch,
            "truth": {},
        },
    }).json()
    lines = ["x_nm,y_nm,sigma_nm,x_err_nm,y_err_nm,contaminated,overlapping"]
    for s in resp["spots"]:
        lines.append(
            f"{s['x_nm']!r},{s['y_nm']!r},{s['sigma_nm']!r},{s['x_err_nm']!r},{s['y_err_nm']!r},"
            f"{int(s['contaminated'])},{int(s['overlapping'])}"
        )
    run.write("spots.csv", "\n".join(lines) + "\n")
    run.finish()


@locate.command("repeat")
@click.option("--config", "config_name", required=True)
@click.option("--frames", default=30, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.pass_context
def locate_repeat(ctx, config_name, frames, seed, out):
    """Repeatability of the localization over many frames of one layout."""
    config, digest, ident = load_config(config_name)
    run = RunWriter(out, "locate repeat", {"frames": frames},
                    seed=seed, config_digest=digest, config_id=ident)
    client = client_of(ctx)
    rendered = []
    for i in range(frames):
        payload = _render_payload(config, ident, seed + i)
        rendered.append(client.post("/position/render", json=payload).json())
    resp = client.post("/position/repeatability", json={"frames": rendered}).json()
    run.write_json("repeatability.json", resp)
    run.finish()


if __name__ == "__main__":
    main()
