"""Dense Hermitian spectral calculus: projections, resolvents, contour quadrature."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .lattice import BlockOperator, ModelError, operator_norm

log = logging.getLogger(__name__)

COLLISION_TOL = 1e-12
CONTOUR_PANEL_ORDER = 4
CLOSE_POLE_WARNING = 0.05


class SpectralError(ArithmeticError):
    """Raised when an energy collides with the spectrum."""


@dataclass(frozen=True)
class EnergyWindow:
    a: float
    b: float

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ValueError(f"empty energy window ({self.a}, {self.b})")

    @property
    def width(self) -> float:
        return self.b - self.a

    def contains(self, e: np.ndarray | float) -> np.ndarray:
        return (np.asarray(e) > self.a) & (np.asarray(e) < self.b)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: BlockOperator

    @property
    def box(self):
        return self.source.box

    @property
    def N(self) -> int:
        return self.source.N

    @cached_property
    def site_amplitudes(self) -> np.ndarray:
        """``||psi_n(x)||`` as an ``(n_sites, n_states)`` array."""
        n, N = self.box.n_sites, self.N
        v = self.eigenvectors.reshape(n, N, -1)
        return np.sqrt((np.abs(v) ** 2).sum(axis=1))

    def projector_from_weights(self, weights: np.ndarray) -> np.ndarray:
        """Dense ``sum_n w_n psi_n psi_n^dagger``."""
        v = self.eigenvectors
        return (v * weights[None, :]) @ v.conj().T

    def as_operator(self, weights: np.ndarray, hermitian: bool = False) -> BlockOperator:
        return BlockOperator(self.box, self.N, self.projector_from_weights(weights), hermitian=hermitian)


def diagonalize(H: BlockOperator) -> SpectralDecomposition:
    if not H.is_hermitian():
        raise ModelError("diagonalize requires a hermitian operator")
    w, v = np.linalg.eigh(H.matrix)
    w.flags.writeable = False
    v.flags.writeable = False
    return SpectralDecomposition(w, v, H)


def _check_no_collision(dec: SpectralDecomposition, energy: float) -> None:
    if dec.eigenvalues.size == 0:
        return
    k = int(np.argmin(np.abs(dec.eigenvalues - energy)))
    if abs(dec.eigenvalues[k] - energy) <= COLLISION_TOL:
        raise SpectralError(
            f"energy {energy!r} collides with eigenvalue #{k} = {dec.eigenvalues[k]!r}"
        )


def fermi_projection(dec: SpectralDecomposition, fermi_energy: float) -> BlockOperator:
    """``chi_(-inf, E_F)(H)``; refuses energies within 1e-12 of an eigenvalue."""
    _check_no_collision(dec, fermi_energy)
    occ = (dec.eigenvalues < fermi_energy).astype(float)
    return dec.as_operator(occ.astype(complex), hermitian=True)


def apply_borel(dec: SpectralDecomposition, f: Callable[[np.ndarray], np.ndarray] | np.ndarray,
                bounded: bool = False) -> BlockOperator:
    """``f(H) = sum_n f(lambda_n) psi_n psi_n^dagger``.

    ``f`` is either a vectorised callable or the sampled values at the
    eigenvalues.  With ``bounded=True`` the call fails unless ``|f| <= 1`` on
    the spectrum.
    """
    vals = f(dec.eigenvalues) if callable(f) else f
    vals = np.broadcast_to(np.asarray(vals, dtype=complex), dec.eigenvalues.shape)
    if bounded and np.any(np.abs(vals) > 1.0 + 1e-12):
        k = int(np.argmax(np.abs(vals)))
        raise ValueError(f"|f| = {abs(vals[k])} > 1 at eigenvalue {dec.eigenvalues[k]}")
    herm = bool(np.all(np.abs(vals.imag) == 0.0))
    return dec.as_operator(vals, hermitian=herm)


def _check_off_spectrum(dec: SpectralDecomposition, z: complex) -> None:
    if dec.eigenvalues.size and np.min(np.abs(dec.eigenvalues - z)) <= 1e-13:
        raise SpectralError(f"z = {z!r} lies on the spectrum")


def resolvent_block(dec: SpectralDecomposition, x: int, y: int, z: complex) -> np.ndarray:
    """Green's function block ``G(x, y; z) = ((H - z)^-1)_xy``."""
    _check_off_spectrum(dec, z)
    N = dec.N
    vx = dec.eigenvectors[x * N : (x + 1) * N]
    vy = dec.eigenvectors[y * N : (y + 1) * N]
    return (vx / (dec.eigenvalues - z)) @ vy.conj().T


def resolvent_matrix(dec: SpectralDecomposition, z: complex) -> np.ndarray:
    _check_off_spectrum(dec, z)
    return dec.projector_from_weights(1.0 / (dec.eigenvalues - z))


def resolvent_direct(H: BlockOperator, z: complex) -> np.ndarray:
    """``(H - z)^-1`` by LU solve; keeps tiny off-diagonal entries accurate for banded H."""
    dim = H.matrix.shape[0]
    return np.linalg.solve(H.matrix - z * np.eye(dim), np.eye(dim, dtype=complex))


def contour_nodes(lam: float, left: float, nodes_per_unit: int,
                  order: int = CONTOUR_PANEL_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``z_k`` and weights ``w_k`` (``dz`` included) on the rectangle.

    The rectangle runs counter-clockwise through ``lam - i``, ``lam + i``,
    ``left + i``, ``left - i``.  Each edge is split into equal panels with
    ``order`` Gauss-Legendre points so that the node density is at least
    ``nodes_per_unit`` per unit length.
    """
    if nodes_per_unit < 1:
        raise ValueError("nodes_per_unit must be >= 1")
    corners = [lam - 1j, lam + 1j, left + 1j, left - 1j]
    t, w = np.polynomial.legendre.leggauss(order)
    zs, ws = [], []
    for k in range(4):
        z0, z1 = corners[k], corners[(k + 1) % 4]
        length = abs(z1 - z0)
        panels = max(1, math.ceil(length * nodes_per_unit / order))
        edges = np.linspace(0.0, 1.0, panels + 1)
        for p in range(panels):
            lo, hi = edges[p], edges[p + 1]
            s = lo + (hi - lo) * (t + 1) / 2
            zs.append(z0 + (z1 - z0) * s)
            ws.append((z1 - z0) * (hi - lo) / 2 * w)
    return np.concatenate(zs), np.concatenate(ws)


def contour_weights(eigenvalues: np.ndarray, lam: float, left: float, nodes_per_unit: int) -> np.ndarray:
    """Quadrature of ``(i/2pi) oint dz / (lambda_n - z)`` for every eigenvalue."""
    z, w = contour_nodes(lam, left, nodes_per_unit)
    return (1j / (2 * np.pi)) * (w[None, :] / (eigenvalues[:, None] - z[None, :])).sum(axis=1)


def contour_projection(H: BlockOperator, lam: float, nodes_per_unit: int = 200,
                       method: str = "spectral") -> BlockOperator:
    """Fermi projection from contour quadrature of the resolvent.

    ``method="solve"`` inverts ``H - z`` at every node; ``"spectral"`` applies
    the same quadrature rule to the eigen-expansion of the resolvent, which
    is the identical sum evaluated in another basis and much cheaper.
    """
    dec = diagonalize(H)
    _check_no_collision(dec, lam)
    gap = float(np.min(np.abs(dec.eigenvalues - lam))) if dec.eigenvalues.size else np.inf
    if gap < CLOSE_POLE_WARNING:
        warnings.warn(f"contour passes within {gap:.3g} of the spectrum; quadrature error grows",
                      RuntimeWarning, stacklevel=2)
    left = -operator_norm(H) - 1.0
    if method == "spectral":
        c = contour_weights(dec.eigenvalues, lam, left, nodes_per_unit)
        return dec.as_operator(c)
    if method == "solve":
        z, w = contour_nodes(lam, left, nodes_per_unit)
        dim = H.matrix.shape[0]
        acc = np.zeros((dim, dim), dtype=complex)
        eye = np.eye(dim, dtype=complex)
        for zk, wk in zip(z, w):
            acc += wk * np.linalg.solve(H.matrix - zk * eye, eye)
        return BlockOperator(H.box, H.N, (1j / (2 * np.pi)) * acc)
    raise ValueError(f"unknown method {method!r}")


def max_degeneracy(dec: SpectralDecomposition, window: EnergyWindow, cluster_tol: float = 1e-8) -> int:
    """Largest cluster of eigenvalues in the window (gaps below ``cluster_tol`` chain)."""
    if cluster_tol <= 0:
        raise ValueError("cluster_tol must be positive")
    ev = dec.eigenvalues[window.contains(dec.eigenvalues)]
    if ev.size == 0:
        return 0
    breaks = np.nonzero(np.diff(ev) >= cluster_tol)[0]
    bounds = np.concatenate([[-1], breaks, [ev.size - 1]])
    return int(np.max(np.diff(bounds)))
