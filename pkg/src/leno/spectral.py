"""Spectral transforms and the semi-implicit time step.

Fields live on domain nodes; their low-dimensional surrogates are
coefficients on the Laplacian eigenbasis. With M-orthonormal modes Phi the
transform pair is

    project      beta = Phi^T M u
    reconstruct  u    = Phi beta

and one step of the semi-implicit scheme (diffusion implicit per mode,
nonlinear drive explicit) is

    beta_i <- (beta_i + dt * g_i) / (1 + dt * alpha * lambda_i)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domains import EigenBasis
from .errors import InputError


@dataclass
class SpectralCoeffs:
    """Coefficients on a specific eigenbasis.

    ``beta`` is (P,) for a single snapshot or (T, P) for a series; basis_id
    ties the coefficients to the basis they were computed on.
    """

    beta: np.ndarray
    basis_id: str


def project(field: np.ndarray, basis: EigenBasis) -> SpectralCoeffs:
    """Project nodal values (V,) or a stack (T, V) onto the basis."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[-1] != basis.n_nodes:
        raise InputError(
            f"field has {field.shape[-1]} nodes, basis has {basis.n_nodes}"
        )
    return SpectralCoeffs(beta=field @ basis.weighted_modes, basis_id=basis.digest)


def reconstruct(coeffs: SpectralCoeffs, basis: EigenBasis) -> np.ndarray:
    """Map coefficients back to nodal values. Basis must match."""
    if coeffs.basis_id != basis.digest:
        raise InputError("coefficients were computed on a different basis")
    return coeffs.beta @ basis.modes.T


def reconstruct_array(beta: np.ndarray, basis: EigenBasis) -> np.ndarray:
    """Like :func:`reconstruct` for raw coefficient arrays (no id check)."""
    return np.asarray(beta) @ basis.modes.T


def rollout_step(
    beta_prev: np.ndarray, dt: float, alpha: float, basis: EigenBasis, drive: np.ndarray
) -> np.ndarray:
    """One semi-implicit step from coefficients ``beta_prev`` with explicit
    drive ``g`` evaluated at the previous state."""
    if dt <= 0:
        raise InputError(f"dt must be positive, got {dt}")
    if alpha < 0:
        raise InputError(f"diffusivity must be nonnegative, got {alpha}")
    beta_prev = np.asarray(beta_prev, dtype=np.float64)
    drive = np.asarray(drive, dtype=np.float64)
    if beta_prev.shape != drive.shape or beta_prev.shape[-1] != basis.n_modes:
        raise InputError(
            f"shape mismatch: beta {beta_prev.shape}, drive {drive.shape}, "
            f"P={basis.n_modes}"
        )
    return (beta_prev + dt * drive) / (1.0 + dt * alpha * basis.eigenvalues)


def residual_series(
    coeff_series: np.ndarray | SpectralCoeffs,
    times: np.ndarray,
    alpha: float,
    basis: EigenBasis,
) -> np.ndarray:
    """Discrete residuals R^n = (beta^n - beta^{n-1}) / dt_n + alpha L beta^n
    for n = 1..N, where L is the diagonal eigenvalue matrix.

    Args:
        coeff_series: (N+1, P) coefficient stack or SpectralCoeffs holding one.
        times: (N+1,) strictly increasing sample times.
        alpha: diffusivity of the species.

    Returns:
        (N, P) residual array.
    """
    if isinstance(coeff_series, SpectralCoeffs):
        if coeff_series.basis_id != basis.digest:
            raise InputError("coefficients were computed on a different basis")
        beta = coeff_series.beta
    else:
        beta = np.asarray(coeff_series, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if beta.ndim != 2 or beta.shape[1] != basis.n_modes:
        raise InputError(f"expected (T, {basis.n_modes}) coefficients, got {beta.shape}")
    if times.ndim != 1 or times.shape[0] != beta.shape[0]:
        raise InputError(
            f"times length {times.shape} does not match series length {beta.shape[0]}"
        )
    if beta.shape[0] < 2:
        raise InputError("need at least two snapshots for residuals")
    dt = np.diff(times)
    if (dt <= 0).any():
        raise InputError("times must be strictly increasing")
    if alpha < 0:
        raise InputError(f"diffusivity must be nonnegative, got {alpha}")
    return (beta[1:] - beta[:-1]) / dt[:, None] + alpha * basis.eigenvalues * beta[1:]
