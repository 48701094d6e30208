"""Two-photon polarization tomography on the 36-setting measurement set.

Coincidences are recorded for every pair of single-photon analyzer settings
drawn from {H, V, D, A, R, L} on each arm.  Reconstruction maximizes the
Poisson likelihood with the iterative R*rho*R fixed-point scheme (diluted
steps as fallback), which keeps every iterate physical.  Error bars come
from Poisson resampling of the recorded counts.
"""

from __future__ import annotations

import csv
import io
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .quantum import (
    InvalidStateError,
    MetricReport,
    PHI_PLUS,
    metric_report,
    validate_density_matrix,
)

ARM_SETTINGS = ("H", "V", "D", "A", "R", "L")

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
ARM_KETS = {
    "H": np.array([1.0, 0.0], dtype=complex),
    "V": np.array([0.0, 1.0], dtype=complex),
    "D": np.array([_INV_SQRT2, _INV_SQRT2], dtype=complex),
    "A": np.array([_INV_SQRT2, -_INV_SQRT2], dtype=complex),
    "R": np.array([_INV_SQRT2, -1j * _INV_SQRT2], dtype=complex),
    "L": np.array([_INV_SQRT2, 1j * _INV_SQRT2], dtype=complex),
}

# canonical ordering of the 36 settings: X-arm setting varies slowest
BASIS_LABELS = tuple(
    (ax, axx) for ax in ARM_SETTINGS for axx in ARM_SETTINGS
)

# the 36 settings split into 9 groups of 4 projectors that each sum to 1
MUB_GROUPS = {"H": "HV", "V": "HV", "D": "DA", "A": "DA", "R": "RL", "L": "RL"}


class TomographyError(RuntimeError):
    """Reconstruction could not be completed; message carries diagnostics."""


def projector(label: tuple[str, str]) -> np.ndarray:
    """Rank-1 projector |a><a| x |b><b| for analyzer settings (a, b)."""
    arm_x, arm_xx = label
    ket = np.kron(ARM_KETS[arm_x], ARM_KETS[arm_xx])
    return np.outer(ket, ket.conj())


_PROJECTOR_STACK = np.array([projector(lbl) for lbl in BASIS_LABELS])


@dataclass
class CountTable:
    """Coincidence counts per analyzer setting.

    entries maps (arm_x, arm_xx) labels to (counts, acquisition_time_s).
    """

    entries: dict[tuple[str, str], tuple[float, float]] = field(default_factory=dict)

    def set(self, arm_x: str, arm_xx: str, counts: float, acquisition_time: float = 1.0):
        if arm_x not in ARM_SETTINGS or arm_xx not in ARM_SETTINGS:
            raise ValueError(f"unknown analyzer setting ({arm_x}, {arm_xx})")
        if counts < 0:
            raise ValueError(f"counts must be >= 0, got {counts}")
        self.entries[(arm_x, arm_xx)] = (float(counts), float(acquisition_time))

    def counts_array(self) -> np.ndarray:
        self.require_complete()
        return np.array([self.entries[lbl][0] for lbl in BASIS_LABELS])

    def exposure_array(self) -> np.ndarray:
        self.require_complete()
        return np.array([self.entries[lbl][1] for lbl in BASIS_LABELS])

    def require_complete(self):
        missing = [lbl for lbl in BASIS_LABELS if lbl not in self.entries]
        if missing:
            raise ValueError(f"count table incomplete, missing {len(missing)} settings: {missing[:4]}...")

    def total(self) -> float:
        return float(sum(v[0] for v in self.entries.values()))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["arm_x", "arm_xx", "counts", "acquisition_time_s"])
        for lbl in BASIS_LABELS:
            if lbl in self.entries:
                counts, t = self.entries[lbl]
                writer.writerow([lbl[0], lbl[1], repr(counts) if counts % 1 else int(counts), repr(float(t))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountTable":
        table = cls()
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["arm_x", "arm_xx", "counts"]:
            raise ValueError("expected header: arm_x,arm_xx,counts[,acquisition_time_s]")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                arm_x, arm_xx = row[0].strip(), row[1].strip()
                counts = float(row[2])
                acq = float(row[3]) if len(row) > 3 and row[3].strip() else 1.0
                table.set(arm_x, arm_xx, counts, acq)
            except (ValueError, IndexError) as exc:
                raise ValueError(f"malformed count row at line {lineno}: {row!r} ({exc})") from exc
        return table


@dataclass(frozen=True)
class TomographyResult:
    """Reconstructed state plus metrics and optional Monte Carlo errors."""

    rho: np.ndarray
    metrics: MetricReport
    loglik: float
    iterations: int
    converged: bool
    metric_errors: dict[str, float] | None = None
    mc_runs: int = 0
    mc_failed_runs: int = 0


def expected_counts(rho, total_pairs: float, labels=BASIS_LABELS) -> dict:
    """Forward model: expected coincidences per setting at ``total_pairs``
    generated pairs per complete measurement group of four outcomes."""
    if total_pairs <= 0:
        raise ValueError("total_pairs must be positive")
    rho = validate_density_matrix(rho)
    out = {}
    for lbl in labels:
        prob = float(np.real(np.trace(projector(lbl) @ rho)))
        out[lbl] = total_pairs * prob
    return out


def _log_likelihood(counts, exposures, probs):
    # Poisson log-likelihood with the overall flux profiled out analytically;
    # constant terms in the data are dropped.
    flux = counts.sum() / np.dot(exposures, probs)
    lam = flux * exposures * probs
    mask = counts > 0
    return float(np.sum(counts[mask] * np.log(lam[mask])) - lam.sum())


def reconstruct_mle(
    counts: CountTable,
    max_iter: int = 20000,
    tol: float = 1e-10,
    target=PHI_PLUS,
) -> TomographyResult:
    """Maximum-likelihood state reconstruction from a complete count table.

    Iterates rho -> N[G^-1 R rho R G^-1] with R = sum (n_j / p_j) P_j and
    G = sum w_j P_j (w_j: relative exposure), which has the Poisson MLE as
    its fixed point; when a full step fails to improve the likelihood the
    update is diluted toward the identity.  Convergence is declared when the
    log-likelihood change drops below ``tol`` (or below the floating-point
    resolution of the log-likelihood itself, whichever is larger).
    """
    n = counts.counts_array().astype(float)
    w = counts.exposure_array().astype(float)
    if np.all(n == 0):
        raise TomographyError("all counts are zero; nothing to reconstruct")
    if np.any(w <= 0):
        raise TomographyError("acquisition times must be positive")
    w = w / w.mean()

    proj = _PROJECTOR_STACK
    g = np.einsum("a,aij->ij", w, proj)
    g_inv = np.linalg.inv(g)

    rho = np.eye(4, dtype=complex) / 4.0
    probs = np.real(np.einsum("aij,ji->a", proj, rho))
    ll = _log_likelihood(n, w, probs)

    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        ratios = np.where(probs > 1e-300, n / np.maximum(probs, 1e-300), 0.0)
        r_op = np.einsum("a,aij->ij", ratios, proj)
        step = g_inv @ r_op
        accepted = False
        dilution = 1.0
        while dilution > 1e-8:
            m = dilution * step + (1.0 - dilution) * np.trace(step) / 4.0 * np.eye(4)
            cand = m @ rho @ m.conj().T
            cand = (cand + cand.conj().T) / 2.0
            tr = np.real(np.trace(cand))
            if tr <= 0:
                dilution /= 2.0
                continue
            cand /= tr
            cand_probs = np.real(np.einsum("aij,ji->a", proj, cand))
            cand_ll = _log_likelihood(n, w, cand_probs)
            if cand_ll >= ll - 1e-13 * abs(ll):
                accepted = True
                break
            dilution /= 2.0
        if not accepted:
            raise TomographyError(
                f"likelihood failed to improve at iteration {iterations} "
                f"(loglik={ll:.6f}, dilution exhausted)"
            )
        delta = abs(cand_ll - ll)
        rho, probs, ll = cand, cand_probs, cand_ll
        if delta < max(tol, 8.0 * np.finfo(float).eps * abs(ll)):
            converged = True
            break

    rho = validate_density_matrix(rho)
    return TomographyResult(
        rho=rho,
        metrics=metric_report(rho, target),
        loglik=ll,
        iterations=iterations,
        converged=converged,
    )


def _mc_single_run(args):
    base_counts, exposures, seed, max_iter, tol, target = args
    rng = np.random.default_rng(seed)
    resampled = CountTable()
    for lbl, n, t in zip(BASIS_LABELS, rng.poisson(base_counts), exposures):
        resampled.set(lbl[0], lbl[1], float(n), float(t))
    result = reconstruct_mle(resampled, max_iter=max_iter, tol=tol, target=target)
    m = result.metrics
    return (m.fef, m.concurrence, m.purity, m.fidelity_to_target)


METRIC_NAMES = ("fef", "concurrence", "purity", "fidelity_to_target")


def monte_carlo_errors(
    counts: CountTable,
    runs: int = 2000,
    seed: int = 0,
    workers: int = 1,
    max_iter: int = 20000,
    tol: float = 1e-8,
    target=PHI_PLUS,
) -> dict:
    """Poisson-resampling error bars for every reconstruction metric.

    Each run redraws all 36 counts as Poisson(observed), reconstructs, and
    records the metrics; returned sigmas are sample standard deviations
    across the successful runs.  Per-run RNG streams are spawned from the
    master seed by run index, so results are identical for any ``workers``.
    """
    if runs < 2:
        raise ValueError("runs must be >= 2")
    base = counts.counts_array()
    exposures = counts.exposure_array()
    child_seeds = np.random.SeedSequence(seed).spawn(runs)
    jobs = [(base, exposures, child_seeds[i], max_iter, tol, target) for i in range(runs)]

    samples: list[tuple | None] = [None] * runs
    failures = 0
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_mc_run_safe, jobs))
    else:
        outcomes = [_mc_run_safe(job) for job in jobs]
    for i, outcome in enumerate(outcomes):
        if outcome is None:
            failures += 1
        else:
            samples[i] = outcome

    good = np.array([s for s in samples if s is not None])
    if len(good) < 2:
        raise TomographyError(
            f"Monte Carlo failed: only {len(good)} of {runs} runs reconstructed"
        )
    sigmas = {name: float(np.std(good[:, i], ddof=1)) for i, name in enumerate(METRIC_NAMES)}
    result = {
        "sigma": sigmas,
        "runs": runs,
        "failed_runs": failures,
        "warnings": [],
    }
    if runs < 100:
        msg = f"only {runs} Monte Carlo runs; error bars are themselves noisy"
        warnings.warn(msg, stacklevel=2)
        result["warnings"].append(msg)
    if failures:
        result["warnings"].append(f"{failures} of {runs} runs failed to reconstruct")
    return result


def _mc_run_safe(job):
    try:
        return _mc_single_run(job)
    except (TomographyError, InvalidStateError):
        return None


def analyze_counts(
    counts: CountTable,
    runs: int = 2000,
    seed: int = 0,
    workers: int = 1,
    max_iter: int = 20000,
    tol: float = 1e-10,
    target=PHI_PLUS,
) -> TomographyResult:
    """Full pipeline: reconstruction plus Monte Carlo error bars."""
    base = reconstruct_mle(counts, max_iter=max_iter, tol=tol, target=target)
    if runs == 0:
        return base
    mc = monte_carlo_errors(
        counts, runs=runs, seed=seed, workers=workers, max_iter=max_iter,
        tol=max(tol, 1e-8), target=target,
    )
    return TomographyResult(
        rho=base.rho,
        metrics=base.metrics,
        loglik=base.loglik,
        iterations=base.iterations,
        converged=base.converged,
        metric_errors=mc["sigma"],
        mc_runs=runs,
        mc_failed_runs=mc["failed_runs"],
    )


def sample_counts(rho, pairs_per_group: float, seed: int, exposures=None) -> CountTable:
    """Draw a Poisson count table from the forward model of ``rho``."""
    rng = np.random.default_rng(seed)
    expected = expected_counts(rho, pairs_per_group)
    table = CountTable()
    for i, lbl in enumerate(BASIS_LABELS):
        t = 1.0 if exposures is None else exposures[i]
        table.set(lbl[0], lbl[1], float(rng.poisson(expected[lbl] * t)), t)
    return table
