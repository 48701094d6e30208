"""Two-qubit polarization-state algebra and entanglement metrics.

States live in the product basis (HH, HV, VH, VV), where the first letter
is the polarization of the exciton (X) photon and the second that of the
biexciton (XX) photon.  All operations are pure functions on numpy arrays;
nothing here mutates shared state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import minimize

BASIS_LABELS = ("HH", "HV", "VH", "VV")

# Bell states as 4-vectors in the (HH, HV, VH, VV) basis.
SQRT2 = np.sqrt(2.0)
PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / SQRT2
PHI_MINUS = np.array([1, 0, 0, -1], dtype=complex) / SQRT2
PSI_PLUS = np.array([0, 1, 1, 0], dtype=complex) / SQRT2
PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) / SQRT2

# Bell basis with fixed phases ("magic basis"): in these coordinates every
# maximally entangled pure state is a real unit vector up to a global phase,
# so the maximal Bell overlap of rho is the top eigenvalue of Re(rho).
MAGIC_BASIS = np.column_stack(
    [PHI_PLUS, 1j * PHI_MINUS, 1j * PSI_PLUS, PSI_MINUS]
)

HERMITICITY_ATOL = 1e-12
TRACE_ATOL = 1e-12
EIGENVALUE_FLOOR = -1e-10


class InvalidStateError(ValueError):
    """A matrix or vector failed a physicality check."""


@dataclass(frozen=True)
class MetricReport:
    """Entanglement figures of merit for one two-photon state."""

    fef: float
    concurrence: float
    purity: float
    fidelity_to_target: float

    def as_dict(self) -> dict:
        return asdict(self)


def validate_pure_state(amplitudes, atol: float = 1e-12) -> np.ndarray:
    """Check normalization of a 4-component state vector and return it."""
    psi = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if psi.shape != (4,):
        raise InvalidStateError(f"expected 4 amplitudes, got shape {psi.shape}")
    norm2 = float(np.sum(np.abs(psi) ** 2))
    if abs(norm2 - 1.0) > atol:
        raise InvalidStateError(
            f"state not normalized: |psi|^2 = {norm2!r}, off by {abs(norm2 - 1.0):.3e}"
        )
    return psi


def validate_density_matrix(
    matrix,
    herm_atol: float = HERMITICITY_ATOL,
    trace_atol: float = TRACE_ATOL,
    eig_floor: float = EIGENVALUE_FLOOR,
) -> np.ndarray:
    """Check that ``matrix`` is a physical two-qubit density matrix.

    Verifies hermiticity, unit trace and positive semidefiniteness within
    the stated tolerances and returns the matrix unchanged (no projection
    is applied).  Raises :class:`InvalidStateError` naming the violated
    invariant and the size of the violation.
    """
    rho = np.asarray(matrix, dtype=complex)
    if rho.shape != (4, 4):
        raise InvalidStateError(f"expected a 4x4 matrix, got shape {rho.shape}")
    herm_err = float(np.max(np.abs(rho - rho.conj().T)))
    if herm_err > herm_atol:
        raise InvalidStateError(f"not Hermitian: max |rho - rho^dag| = {herm_err:.3e}")
    trace_err = abs(complex(np.trace(rho)) - 1.0)
    if trace_err > trace_atol:
        raise InvalidStateError(f"trace != 1: off by {trace_err:.3e}")
    eigs = np.linalg.eigvalsh(rho)
    if eigs[0] < eig_floor:
        raise InvalidStateError(f"not PSD: smallest eigenvalue = {eigs[0]:.3e}")
    return rho


def pure_state_density_matrix(amplitudes) -> np.ndarray:
    """Outer product |psi><psi| of a normalized 4-vector."""
    psi = validate_pure_state(amplitudes)
    return np.outer(psi, psi.conj())


def fidelity_to_state(rho, target) -> float:
    """Overlap <target|rho|target> of a density matrix with a pure state."""
    rho = validate_density_matrix(rho)
    psi = validate_pure_state(target)
    return float(np.real(psi.conj() @ rho @ psi))


def purity(rho) -> float:
    """Tr(rho^2); 1 for pure states, 0.25 for the maximally mixed state."""
    rho = validate_density_matrix(rho)
    return float(np.real(np.trace(rho @ rho)))


def fully_entangled_fraction(rho) -> float:
    """Maximal overlap of ``rho`` with any maximally entangled two-qubit state.

    Computed as the largest eigenvalue of the real part of rho expressed in
    the fixed-phase Bell basis, which maximizes <Phi|rho|Phi> over all
    maximally entangled |Phi>.
    """
    rho = validate_density_matrix(rho)
    rho_mb = MAGIC_BASIS.conj().T @ rho @ MAGIC_BASIS
    real_part = (rho_mb.real + rho_mb.real.T) / 2.0
    return float(np.linalg.eigvalsh(real_part)[-1])


def concurrence(rho) -> float:
    """Wootters concurrence of a two-qubit density matrix.

    The decreasing lambda_i (square roots of the eigenvalues of
    rho * (sy x sy) rho* (sy x sy)) are computed as the singular values of
    sqrt(rho) (sy x sy) conj(sqrt(rho)), which stays accurate when several
    of them vanish.
    """
    rho = validate_density_matrix(rho)
    sy = np.array([[0, -1j], [1j, 0]])
    yy = np.kron(sy, sy)
    eigs, vecs = np.linalg.eigh(rho)
    sqrt_rho = (vecs * np.sqrt(np.clip(eigs, 0.0, None))) @ vecs.conj().T
    lam = np.linalg.svd(sqrt_rho @ yy @ np.conj(sqrt_rho), compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def metric_report(rho, target=PHI_PLUS) -> MetricReport:
    """All standard metrics of one state in a single report."""
    rho = validate_density_matrix(rho)
    return MetricReport(
        fef=fully_entangled_fraction(rho),
        concurrence=concurrence(rho),
        purity=purity(rho),
        fidelity_to_target=fidelity_to_state(rho, target),
    )


def _su2(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Single-qubit rotation Rz(alpha) Ry(beta) Rz(gamma)."""
    ca, sa = np.cos(alpha / 2), np.sin(alpha / 2)
    cb, sb = np.cos(beta / 2), np.sin(beta / 2)
    cg, sg = np.cos(gamma / 2), np.sin(gamma / 2)
    rz_a = np.array([[ca - 1j * sa, 0], [0, ca + 1j * sa]])
    ry_b = np.array([[cb, -sb], [sb, cb]])
    rz_g = np.array([[cg - 1j * sg, 0], [0, cg + 1j * sg]])
    return rz_a @ ry_b @ rz_g


def _entangled_ket_from_angles(angles: np.ndarray) -> np.ndarray:
    """(U_A x U_B)|Phi+> for six Euler angles (three per qubit)."""
    ua = _su2(*angles[:3])
    ub = _su2(*angles[3:])
    # (U_A x U_B)|Phi+> corresponds to the 2x2 matrix U_A U_B^T / sqrt(2)
    return (ua @ ub.T).reshape(-1) / SQRT2


def fef_bruteforce_oracle(rho, grid_resolution: int = 8) -> float:
    """Direct maximization of <Phi|rho|Phi> over maximally entangled states.

    Parametrizes |Phi> = (U_A x U_B)|Phi+> by six single-qubit Euler angles,
    scans a dense grid, then polishes the best grid points with Nelder-Mead.
    Returns a lower bound that converges to the true maximum as the
    resolution grows.  Test dependency, not a runtime path.
    """
    if grid_resolution < 8:
        raise ValueError("grid_resolution must be >= 8")
    rho = validate_density_matrix(rho)

    alphas = np.linspace(0.0, 2 * np.pi, grid_resolution, endpoint=False)
    betas = np.linspace(0.0, np.pi, grid_resolution)
    gammas = np.linspace(0.0, 2 * np.pi, grid_resolution, endpoint=False)
    grid = np.stack(
        np.meshgrid(alphas, betas, gammas, indexing="ij"), axis=-1
    ).reshape(-1, 3)
    mats = np.array([_su2(a, b, g) for a, b, g in grid])  # (n, 2, 2)
    n = len(grid)

    best_val = -np.inf
    best_starts: list[tuple[float, np.ndarray]] = []
    # W = U_A U_B^T enumerated in blocks to bound memory
    block = max(1, int(2**22 // (n * 4)))
    for lo in range(0, n, block):
        w = np.einsum("aij,bkj->abik", mats[lo : lo + block], mats)
        kets = w.reshape(-1, 4) / SQRT2
        vals = np.real(np.einsum("ni,ij,nj->n", kets.conj(), rho, kets))
        order = np.argsort(vals)[-4:]
        for idx in order:
            ai, bi = divmod(int(idx), n)
            angles = np.concatenate([grid[lo + ai], grid[bi]])
            best_starts.append((float(vals[idx]), angles))
        best_val = max(best_val, float(vals[order[-1]]))

    best_starts.sort(key=lambda t: -t[0])
    for _, start in best_starts[:4]:
        res = minimize(
            lambda th: -np.real(
                np.vdot(
                    _entangled_ket_from_angles(th),
                    rho @ _entangled_ket_from_angles(th),
                )
            ),
            start,
            method="Nelder-Mead",
            options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000},
        )
        best_val = max(best_val, float(-res.fun))
    return best_val


def density_matrix_to_dict(rho, source: str = "", timestamp: str | None = None,
                           provenance: tuple[str, ...] = ()) -> dict:
    """JSON-ready representation: 4x4 array of [re, im] pairs plus metadata."""
    rho = np.asarray(rho, dtype=complex)
    return {
        "basis": list(BASIS_LABELS),
        "matrix": [[[float(v.real), float(v.imag)] for v in row] for row in rho],
        "metadata": {
            "source": source,
            "timestamp": timestamp,
            "provenance": list(provenance),
        },
    }


def density_matrix_from_dict(payload: dict) -> np.ndarray:
    """Inverse of :func:`density_matrix_to_dict`; validates the result."""
    basis = payload.get("basis")
    if basis is not None and tuple(basis) != BASIS_LABELS:
        raise InvalidStateError(f"unsupported basis order {basis}")
    raw = payload["matrix"]
    rho = np.array(
        [[complex(entry[0], entry[1]) for entry in row] for row in raw]
    )
    return validate_density_matrix(rho)


def density_matrix_to_json(rho, **metadata) -> str:
    return json.dumps(density_matrix_to_dict(rho, **metadata), indent=2, sort_keys=True)


def density_matrix_from_json(text: str) -> np.ndarray:
    return density_matrix_from_dict(json.loads(text))
