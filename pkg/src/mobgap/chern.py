"""Real-space Chern numbers from switch functions, and a Bloch-band oracle.

The finite-box trace of ``P [P_,1, P_,2]`` vanishes identically by
cyclicity: the bulk contribution near the switch crossing is cancelled by
the open boundary.  The trace is therefore restricted to the sites with
``|x|_inf <= trace_radius``, which by default keeps the central half of the
box and drops the boundary layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lattice import BlockOperator, LatticeBox, ModelError, ModelSpec, SwitchFunction, nc_derivative
from .spectral import (EnergyWindow, SpectralDecomposition, SpectralError, diagonalize,
                       fermi_projection)

ACCEPT_RESIDUAL = 0.05
PROJECTOR_TOL = 1e-8
IMAG_TOL = 1e-9


def default_trace_radius(box: LatticeBox) -> int:
    return max(1, box.radius // 2)


@dataclass(frozen=True)
class ChernResult:
    raw: float
    rounded: int
    residual: float
    switch_id: str
    box: LatticeBox
    fermi_energy: float | None = None
    trace_radius: int | None = None
    imag: float = 0.0
    tolerance: float = ACCEPT_RESIDUAL

    @property
    def accepted(self) -> bool:
        return self.residual <= self.tolerance

    @property
    def status(self) -> str:
        return "accepted" if self.accepted else "undecided"


def _trace_mask(box: LatticeBox, N: int, trace_radius: int | None) -> np.ndarray:
    if trace_radius is None:
        trace_radius = default_trace_radius(box)
    inside = np.max(np.abs(box.coords), axis=1) <= trace_radius
    return np.repeat(inside, N)


def chern_density(P: BlockOperator, switch: SwitchFunction) -> np.ndarray:
    """Diagonal of ``2 pi i (P P_,1 P_,2 - P P_,2 P_,1)`` per matrix index."""
    p = P.matrix
    p1 = nc_derivative(P, 1, switch).matrix
    p2 = nc_derivative(P, 2, switch).matrix
    comm = p1 @ p2 - p2 @ p1
    return 2j * np.pi * np.einsum("ij,ji->i", p, comm)


def chern_number(P: BlockOperator, switch: SwitchFunction | None = None,
                 trace_radius: int | None = None, fermi_energy: float | None = None,
                 tolerance: float = ACCEPT_RESIDUAL) -> ChernResult:
    if P.box.d != 2:
        raise ModelError(f"Chern number needs d = 2, got d = {P.box.d}")
    p = P.matrix
    defect = float(np.max(np.abs(p @ p - p), initial=0.0))
    if defect >= PROJECTOR_TOL:
        raise ModelError(f"input is not a projector: max |P^2 - P| = {defect:.3g}")
    switch = switch or SwitchFunction.sharp()
    if trace_radius is None:
        trace_radius = default_trace_radius(P.box)
    mask = _trace_mask(P.box, P.N, trace_radius)
    total = complex(chern_density(P, switch)[mask].sum())
    if abs(total.imag) > IMAG_TOL:
        raise ArithmeticError(f"Chern trace has imaginary part {total.imag:.3g}")
    raw = total.real
    rounded = int(round(raw))
    return ChernResult(raw=raw, rounded=rounded, residual=abs(raw - rounded), switch_id=switch.name,
                       box=P.box, fermi_energy=fermi_energy, trace_radius=trace_radius,
                       imag=total.imag, tolerance=tolerance)


def chern_of_hamiltonian(H: BlockOperator, fermi_energy: float, switch: SwitchFunction | None = None,
                         trace_radius: int | None = None,
                         dec: SpectralDecomposition | None = None) -> ChernResult:
    dec = dec or diagonalize(H)
    P = fermi_projection(dec, fermi_energy)
    return chern_number(P, switch, trace_radius, fermi_energy=fermi_energy)


@dataclass
class ScanResult:
    results: list[ChernResult]
    skipped: list[tuple[float, str]] = field(default_factory=list)

    @property
    def spread(self) -> float:
        raws = [r.raw for r in self.results]
        return float(max(raws) - min(raws)) if raws else 0.0

    @property
    def rounded_values(self) -> set[int]:
        return {r.rounded for r in self.results}


def fermi_energy_scan(H: BlockOperator, window: EnergyWindow, n_grid: int,
                      switch: SwitchFunction | None = None, trace_radius: int | None = None,
                      dec: SpectralDecomposition | None = None) -> ScanResult:
    """Chern number of ``H - E_F`` on ``n_grid`` equispaced energies in the window.

    Grid points that collide with an eigenvalue are skipped and reported.
    """
    dec = dec or diagonalize(H)
    grid = np.linspace(window.a, window.b, n_grid) if n_grid > 1 else np.array([0.5 * (window.a + window.b)])
    out = ScanResult([])
    for e in grid[:n_grid]:
        try:
            out.results.append(chern_of_hamiltonian(H, float(e), switch, trace_radius, dec=dec))
        except SpectralError as exc:
            out.skipped.append((float(e), str(exc)))
    return out


# --- momentum-space oracle --------------------------------------------------

def bloch_hamiltonian(spec: ModelSpec, theta1: float, theta2: float) -> np.ndarray:
    """Bloch matrix on the magnetic cell of ``q`` sites along axis 1.

    ``theta_a`` is the quasi-momentum conjugate to translations by one
    magnetic cell (``q`` sites on axis 1, one site on axis 2), so it is
    ``2 pi``-periodic in both entries.
    """
    if spec.d != 2:
        raise ModelError("Bloch oracle needs d = 2")
    q, N = spec.flux_q, spec.N
    phi = float(spec.flux)
    terms: list[tuple[tuple[int, int], complex, int, int, int]] = []  # shift, value, to, from, phase power
    if spec.kind in ("hofstadter", "anderson"):
        for a in range(N):
            terms.append(((1, 0), 1.0, a, a, 0))
            terms.append(((0, 1), 1.0, a, a, 1 if spec.kind == "hofstadter" else 0))
    else:
        for h in spec.hoppings:
            terms.append((tuple(h.shift), complex(h.value), h.orbital_to, h.orbital_from,
                          h.shift[1] if any(h.shift) else 0))
    dim = q * N
    hk = np.zeros((dim, dim), dtype=complex)
    theta = np.array([theta1, theta2])
    for m in range(q):
        for shift, value, a, b, power in terms:
            amp = value * np.exp(2j * np.pi * phi * power * m)
            target = m + shift[0]
            m2, dr1 = target % q, target // q
            bloch = np.exp(-1j * (theta @ np.array([dr1, shift[1]])))
            i, j = m2 * N + a, m * N + b
            if any(shift):
                hk[i, j] += amp * bloch
                hk[j, i] += np.conj(amp * bloch)
            elif a != b:
                hk[i, j] += amp
                hk[j, i] += np.conj(amp)
            else:
                hk[i, j] += amp.real
    if spec.energy_shift:
        hk -= spec.energy_shift * np.eye(dim)
    return hk


def bloch_chern_oracle(spec: ModelSpec, n_bands_filled: int, k_grid: int = 24) -> int:
    """Chern number of the lowest ``n_bands_filled`` bands by plaquette link products.

    Link variables ``U = det(V_k^dagger V_k')/|det|`` are multiplied around
    each plaquette of a ``k_grid x k_grid`` torus; the sum of plaquette
    phases is an exact multiple of ``2 pi``.  The returned integer uses the
    sign convention of the real-space trace formula, which equals minus the
    usual Berry-flux count for the orientation ``(theta1, theta2)``.
    """
    if spec.disorder_w != 0:
        raise ModelError("Bloch oracle requires a clean (W = 0) model")
    if k_grid < 12:
        raise ModelError("k_grid must be >= 12")
    dim = spec.flux_q * spec.N
    if not 0 <= n_bands_filled <= dim:
        raise ModelError(f"n_bands_filled must be in [0, {dim}]")
    if n_bands_filled in (0, dim):
        return 0
    ts = 2 * np.pi * np.arange(k_grid) / k_grid
    frames = np.empty((k_grid, k_grid, dim, n_bands_filled), dtype=complex)
    for i, t1 in enumerate(ts):
        for j, t2 in enumerate(ts):
            w, v = np.linalg.eigh(bloch_hamiltonian(spec, t1, t2))
            if w[n_bands_filled] - w[n_bands_filled - 1] < 1e-9:
                raise ModelError("filled bands touch the next band; Chern number undefined")
            frames[i, j] = v[:, :n_bands_filled]

    def link(a: np.ndarray, b: np.ndarray) -> complex:
        det = np.linalg.det(a.conj().T @ b)
        return det / abs(det)

    flux = 0.0
    for i in range(k_grid):
        for j in range(k_grid):
            ip, jp = (i + 1) % k_grid, (j + 1) % k_grid
            u = (link(frames[i, j], frames[ip, j]) * link(frames[ip, j], frames[ip, jp])
                 * link(frames[ip, jp], frames[i, jp]) * link(frames[i, jp], frames[i, j]))
            flux += np.angle(u)
    berry = flux / (2 * np.pi)
    return -int(round(berry))


def count_bands_below(spec: ModelSpec, energy: float, k_grid: int = 24) -> int:
    """Number of Bloch bands lying entirely below ``energy`` (checks it sits in a gap)."""
    ts = 2 * np.pi * np.arange(k_grid) / k_grid
    counts = set()
    for t1 in ts:
        for t2 in ts:
            counts.add(int(np.sum(np.linalg.eigvalsh(bloch_hamiltonian(spec, t1, t2)) < energy)))
    if len(counts) != 1:
        raise ModelError(f"energy {energy} is not in a spectral gap of the Bloch bands")
    return counts.pop()


def band_edges(spec: ModelSpec, k_grid: int = 48) -> np.ndarray:
    """``(n_bands, 2)`` array of sampled band minima and maxima."""
    ts = 2 * np.pi * np.arange(k_grid) / k_grid
    ev = np.array([np.linalg.eigvalsh(bloch_hamiltonian(spec, t1, t2)) for t1 in ts for t2 in ts])
    return np.stack([ev.min(axis=0), ev.max(axis=0)], axis=1)


def weak_locality_profile(P: BlockOperator, switch: SwitchFunction | None = None,
                          reference: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Block norms of ``P_,1 P_,2`` as samples ``(y, z, value)``.

    With ``reference`` given only rows ``y`` in it are returned.
    """
    switch = switch or SwitchFunction.sharp()
    prod = nc_derivative(P, 1, switch) @ nc_derivative(P, 2, switch)
    norms = prod.block_norms
    n = P.box.n_sites
    rows = np.arange(n) if reference is None else np.asarray(reference)
    ys = np.repeat(rows, n)
    zs = np.tile(np.arange(n), len(rows))
    return ys, zs, norms[rows].ravel()

