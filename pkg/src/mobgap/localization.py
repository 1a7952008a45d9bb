"""Localization diagnostics for mobility-gapped Hamiltonians.

Everything here works on finite boxes: functional-calculus bounds from the
eigen-expansion, log-domain decay fits, fractional moments of the Green's
function (single realisation and disorder ensembles), SULE eigenbasis
profiles, Fermi-energy averaged projector differences and the threshold
based insulator certificate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import BlockOperator, LatticeBox, ModelError, ModelSpec, build_hamiltonian
from .metric import MU_MAX
from .spectral import (EnergyWindow, SpectralDecomposition, diagonalize, max_degeneracy,
                       resolvent_direct)

MIN_FIT_SAMPLES = 10


# --- fitting ----------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    """Log-domain fit ``value ~ C |a(x)|^-1 exp(-mu r)`` or ``D |b(x)|^-1 (1+r)^-alpha``.

    For the polynomial kind ``C`` holds ``D`` and ``alpha`` the power.
    """

    kind: str
    C: float
    rate: float
    residual: float
    n_samples: int
    n_zero: int = 0
    rate_stderr: float = 0.0
    log_C_stderr: float = 0.0
    a: np.ndarray | None = None
    identifiability: float = 1.0

    @property
    def mu(self) -> float:
        if self.kind != "exponential":
            raise AttributeError("polynomial fits have no exponential rate")
        return self.rate

    @property
    def alpha(self) -> float:
        if self.kind != "polynomial":
            raise AttributeError("exponential fits have no polynomial power")
        return self.rate

    @property
    def a_l1(self) -> float:
        return 1.0 if self.a is None else float(np.abs(self.a).sum())

    @property
    def significance(self) -> float:
        """``rate / stderr`` (inf for an exact fit with positive rate)."""
        if self.rate_stderr == 0:
            return math.inf if self.rate > 0 else 0.0
        return self.rate / self.rate_stderr

    def with_stderr(self, rate_stderr: float, log_C_stderr: float) -> DecayFit:
        return DecayFit(self.kind, self.C, self.rate, self.residual, self.n_samples, self.n_zero,
                        rate_stderr, log_C_stderr, self.a, self.identifiability)


def _regressor(distance: np.ndarray, kind: str) -> np.ndarray:
    if kind == "exponential":
        return -np.asarray(distance, dtype=float)
    if kind == "polynomial":
        return -np.log1p(np.asarray(distance, dtype=float))
    raise ValueError(f"unknown fit kind {kind!r}")


def fit_decay(distance: np.ndarray, value: np.ndarray, kind: str = "exponential",
              site: np.ndarray | None = None, weighted: bool = False, floor: float = 0.0) -> DecayFit:
    """Least-squares fit of ``log value`` against distance.

    Zero values (and values at or below ``floor``) are excluded and counted in
    ``n_zero``.  With ``weighted=True`` every site ``x`` in ``site`` gets its
    own intercept, turned into an l1-normalised weight vector ``a``.
    """
    distance = np.asarray(distance, dtype=float).ravel()
    value = np.asarray(value, dtype=float).ravel()
    keep = value > floor
    n_zero = int(np.count_nonzero(~keep))
    if not np.any(keep):
        raise ValueError("all samples are zero")
    if np.count_nonzero(keep) < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} positive samples, got {np.count_nonzero(keep)}")
    r, v = distance[keep], value[keep]
    if np.ptp(r) == 0:
        raise ValueError("degenerate regression: all samples at the same distance")
    slope_col = _regressor(r, kind)
    logv = np.log(v)
    if weighted:
        if site is None:
            raise ValueError("weighted fit needs per-sample sites")
        s = np.asarray(site).ravel()[keep]
        labels, inv = np.unique(s, return_inverse=True)
        design = np.zeros((len(r), len(labels) + 1))
        design[np.arange(len(r)), inv] = 1.0
        design[:, -1] = slope_col
    else:
        design = np.stack([np.ones_like(r), slope_col], axis=1)
    coef, *_ = np.linalg.lstsq(design, logv, rcond=None)
    resid = logv - design @ coef
    dof = max(len(r) - design.shape[1], 1)
    sigma2 = float(resid @ resid) / dof
    rate = float(coef[-1])
    try:
        cov = sigma2 * np.linalg.inv(design.T @ design)
        rate_se = float(math.sqrt(max(cov[-1, -1], 0.0)))
        logc_se = float(math.sqrt(max(cov[0, 0], 0.0)))
    except np.linalg.LinAlgError:
        rate_se, logc_se = math.inf, math.inf
    rms = float(math.sqrt(np.mean(resid**2)))
    if weighted:
        intercepts = coef[:-1]
        shift = intercepts.min()
        w = np.exp(-(intercepts - shift))
        a = np.zeros(int(np.max(s)) + 1)
        a[labels] = w / w.sum()
        C = float(np.exp(shift) / w.sum())
        counts = np.bincount(inv)
        ident = float(np.mean(counts >= 2))
        return DecayFit(kind, C, rate, rms, len(r), n_zero, rate_se, logc_se, a, ident)
    return DecayFit(kind, float(np.exp(coef[0])), rate, rms, len(r), n_zero, rate_se, logc_se)


def pair_samples(box: LatticeBox, values: np.ndarray,
                 rows: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten an ``(len(rows), n_sites)`` table into ``(site, distance, value)`` samples."""
    rows = np.arange(box.n_sites) if rows is None else np.asarray(rows)
    values = np.asarray(values)
    if values.shape != (len(rows), box.n_sites):
        raise ValueError(f"expected a table of shape {(len(rows), box.n_sites)}, got {values.shape}")
    site = np.repeat(rows, box.n_sites)
    dist = box.distances[rows].ravel()
    return site, dist, values.ravel()


def central_sites(box: LatticeBox, radius: int | None = None) -> np.ndarray:
    radius = box.radius // 2 if radius is None else radius
    return np.nonzero(np.max(np.abs(box.coords), axis=1) <= radius)[0]


# --- single-realisation diagnostics ----------------------------------------

def _block_norms_rank_one_sum(amp: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """``sum_n w_n ||psi_n(x)|| ||psi_n(y)||`` for site amplitudes ``amp[x, n]``."""
    if amp.shape[1] == 0:
        return np.zeros((amp.shape[0], amp.shape[0]))
    w = amp if weights is None else amp * weights[None, :]
    return w @ amp.T


def _projector_block_norms(dec: SpectralDecomposition, mask: np.ndarray) -> np.ndarray:
    v = dec.eigenvectors[:, mask]
    p = v @ v.conj().T
    n, N = dec.box.n_sites, dec.N
    if N == 1:
        return np.abs(p)
    blocks = p.reshape(n, N, n, N).transpose(0, 2, 1, 3)
    return np.linalg.norm(blocks, ord=2, axis=(-2, -1))


def b1_sup_bound(dec: SpectralDecomposition, window: EnergyWindow) -> np.ndarray:
    """Pointwise bound ``B(x, y)`` on ``sup ||f(H)_xy||`` over the class B1(window).

    ``f(H) = c_- chi_(-inf,a](H) + c_+ chi_[b,inf)(H) + sum_{lambda_n in window} f(lambda_n) psi_n psi_n^dagger``
    with ``|c_-|, |c_+|, |f| <= 1``; the triangle inequality on this expansion
    gives ``B``.
    """
    ev = dec.eigenvalues
    below = ev <= window.a
    above = ev >= window.b
    inside = ~(below | above)
    out = _projector_block_norms(dec, below) + _projector_block_norms(dec, above)
    out += _block_norms_rank_one_sum(dec.site_amplitudes[:, inside])
    return out


@dataclass(frozen=True)
class FractionalMomentConfig:
    s: float = 0.5
    eta_grid: tuple[float, ...] = tuple(np.logspace(-4, 0, 12).tolist())
    window: EnergyWindow = EnergyWindow(-0.5, 0.5)
    quad_nodes: int = 64

    def __post_init__(self) -> None:
        if not 0 < self.s < 1:
            raise ValueError(f"fraction s must lie in (0, 1), got {self.s}")
        if any(e == 0 for e in self.eta_grid) or not self.eta_grid:
            raise ValueError("eta grid must be nonempty and avoid 0")
        if self.quad_nodes < 1:
            raise ValueError("quad_nodes must be >= 1")


def _green_rows(dec: SpectralDecomposition, rows: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``||G(x, y; z_k)||`` for ``x`` in rows, shape ``(len(z), len(rows), n_sites)``."""
    N, n = dec.N, dec.box.n_sites
    v = dec.eigenvectors
    inv = 1.0 / (dec.eigenvalues[None, :] - z[:, None])
    idx = (rows[:, None] * N + np.arange(N)[None, :]).ravel()
    left = v[idx]
    g = np.einsum("im,zm,jm->zij", left, inv, v.conj(), optimize=True)
    if N == 1:
        return np.abs(g)
    g = g.reshape(len(z), len(rows), N, n, N).transpose(0, 1, 3, 2, 4)
    return np.linalg.norm(g, ord=2, axis=(-2, -1))


def greens_fractional_table(dec: SpectralDecomposition, cfg: FractionalMomentConfig,
                            rows: Sequence[int] | None = None) -> np.ndarray:
    """``sup_eta int_window ||G(x, y; E + i eta)||^s dE`` for ``x`` in rows, all ``y``."""
    rows = np.arange(dec.box.n_sites) if rows is None else np.asarray(rows)
    t, w = np.polynomial.legendre.leggauss(cfg.quad_nodes)
    a, b = cfg.window.a, cfg.window.b
    energies = 0.5 * (b - a) * t + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w
    best = np.zeros((len(rows), dec.box.n_sites))
    for eta in cfg.eta_grid:
        g = _green_rows(dec, rows, energies + 1j * eta)
        integral = np.tensordot(weights, g**cfg.s, axes=(0, 0))
        np.maximum(best, integral, out=best)
    return best


def greens_fractional_energy_integral(dec: SpectralDecomposition, x: int, y: int,
                                      cfg: FractionalMomentConfig) -> float:
    return float(greens_fractional_table(dec, cfg, [x])[0, y])


@dataclass(frozen=True)
class CombesThomasResult:
    fit: DecayFit | None
    passed: bool
    distance: float
    max_norm: float
    bound: float
    empirical_rate: float


def combes_thomas_check(dec: SpectralDecomposition, z: complex, rel_floor: float = 1e-12) -> CombesThomasResult:
    """Check ``||G(x, y; z)|| <= (2/dist) exp(-mu dist |x - y|)`` for some ``mu > 0``.

    ``empirical_rate`` is the largest such ``mu`` on the box; the decay fit
    ignores entries below ``rel_floor`` times the largest entry (round-off).
    """
    dist = float(np.min(np.abs(dec.eigenvalues - z)))
    if dist < 0.5:
        raise ModelError(f"z = {z} is only {dist:.3g} from the spectrum (need >= 0.5)")
    g = _green_rows(dec, np.arange(dec.box.n_sites), np.array([z]))[0]
    r = dec.box.distances
    bound = 2.0 / dist
    max_norm = float(g.max())
    off = (r > 0) & (g > 0)
    if np.any(off):
        rates = np.log(bound / g[off]) / (dist * r[off])
        empirical = float(rates.min())
    else:
        empirical = math.inf
    fit = None
    pos = g > rel_floor * max_norm
    if np.count_nonzero(pos & (r > 0)) >= MIN_FIT_SAMPLES:
        fit = fit_decay(r[pos], g[pos])
    passed = max_norm <= bound and empirical > 0 and (fit is None or fit.rate > 0)
    return CombesThomasResult(fit, passed, dist, max_norm, bound, empirical)


# --- ensembles --------------------------------------------------------------

def realization_seed(base_seed: int, k: int) -> int:
    """Independent 64-bit seed for realisation ``k``."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(k),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class EnsembleResult:
    """Ensemble means per pair, sup over eta, and an exponential fit.

    ``fit.rate_stderr`` is a jackknife error over realisations.
    """

    fit: DecayFit
    mean: np.ndarray
    stderr: np.ndarray
    rows: np.ndarray
    box: LatticeBox
    n_samples: int
    per_eta_mean: np.ndarray | None = None
    per_eta_stderr: np.ndarray | None = None
    per_sample_rates: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _map(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))


def _realization_greens(args: tuple) -> np.ndarray:
    spec, seed, energy, etas, rows, power, scale_eta = args
    H = build_hamiltonian(spec.with_(seed=seed))
    out = []
    for eta in etas:
        g = resolvent_direct(H, energy + 1j * eta)
        norms = _resolvent_block_norms(g, H.box, H.N, rows)
        vals = norms**power
        out.append(eta * vals if scale_eta else vals)
    return np.array(out)


def _resolvent_block_norms(g: np.ndarray, box: LatticeBox, N: int, rows: np.ndarray) -> np.ndarray:
    n = box.n_sites
    if N == 1:
        return np.abs(g[rows])
    blocks = g.reshape(n, N, n, N).transpose(0, 2, 1, 3)[rows]
    return np.linalg.norm(blocks, ord=2, axis=(-2, -1))


def _check_disordered(spec: ModelSpec, n_samples: int) -> None:
    if spec.disorder_w <= 0:
        raise ModelError("ensemble diagnostics need a disordered model (W > 0)")
    if n_samples < 20:
        raise ModelError(f"need at least 20 realisations, got {n_samples}")


def _ensemble_fit(samples: np.ndarray, box: LatticeBox, rows: np.ndarray,
                  floor: float = 0.0) -> tuple[DecayFit, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """``samples`` has shape ``(n, n_eta, n_rows, n_sites)``; sup over eta after averaging."""
    n = samples.shape[0]
    per_eta_mean = samples.mean(axis=0)
    per_eta_se = samples.std(axis=0, ddof=1) / math.sqrt(n)
    k = np.argmax(per_eta_mean, axis=0)
    mean = np.take_along_axis(per_eta_mean, k[None], axis=0)[0]
    se = np.take_along_axis(per_eta_se, k[None], axis=0)[0]
    site, dist, val = pair_samples(box, mean, rows)
    fit = fit_decay(dist, val, floor=floor)
    total = samples.sum(axis=0)
    jack = np.empty(n)
    for i in range(n):
        loo = ((total - samples[i]) / (n - 1)).max(axis=0)
        jack[i] = fit_decay(dist, loo.ravel(), floor=floor).rate
    jack_se = math.sqrt((n - 1) / n * float(np.sum((jack - jack.mean()) ** 2)))
    return fit.with_stderr(jack_se, fit.log_C_stderr), mean, se, per_eta_mean, per_eta_se


def _default_rows(box: LatticeBox, rows: Sequence[int] | None) -> np.ndarray:
    if rows is not None:
        return np.asarray(rows)
    return np.arange(box.n_sites) if box.d == 1 else central_sites(box)


def _greens_ensemble(spec: ModelSpec, energy: float, etas: Sequence[float], n_samples: int,
                     power: float, scale_eta: bool, rows, jobs: int) -> EnsembleResult:
    _check_disordered(spec, n_samples)
    box = spec.box
    rows = _default_rows(box, rows)
    tasks = [(spec, realization_seed(spec.seed, k), energy, tuple(etas), rows, power, scale_eta)
             for k in range(n_samples)]
    samples = np.stack(_map(_realization_greens, tasks, jobs))
    fit, mean, se, pm, pse = _ensemble_fit(samples, box, rows)
    return EnsembleResult(fit, mean, se, rows, box, n_samples, pm, pse,
                          meta={"energy": energy, "power": power, "eta_grid": list(etas)})


def ensemble_fractional_moment(spec: ModelSpec, energy: float, cfg: FractionalMomentConfig,
                               n_samples: int, rows: Sequence[int] | None = None,
                               jobs: int = 1) -> EnsembleResult:
    """Monte Carlo ``sup_eta E[||G(x, y; E + i eta)||^s]`` and its exponential fit."""
    return _greens_ensemble(spec, energy, cfg.eta_grid, n_samples, cfg.s, False, rows, jobs)


def ensemble_second_moment(spec: ModelSpec, energy: float, eta_grid: Sequence[float],
                           n_samples: int, rows: Sequence[int] | None = None,
                           jobs: int = 1) -> EnsembleResult:
    """Monte Carlo ``sup_eta eta E[||G(x, y; E + i eta)||^2]`` and its exponential fit."""
    return _greens_ensemble(spec, energy, eta_grid, n_samples, 2.0, True, rows, jobs)


def _realization_b1(args: tuple) -> np.ndarray:
    spec, seed, window, rows = args
    dec = diagonalize(build_hamiltonian(spec.with_(seed=seed)))
    return b1_sup_bound(dec, window)[rows][None]


def ensemble_b1_decay(spec: ModelSpec, window: EnergyWindow, n_samples: int,
                      rows: Sequence[int] | None = None, jobs: int = 1) -> EnsembleResult:
    """Average of the B1(window) bound over realisations with an exponential fit.

    ``per_sample_rates`` holds the fitted rate of every single realisation.
    """
    _check_disordered(spec, n_samples)
    box = spec.box
    rows = _default_rows(box, rows)
    tasks = [(spec, realization_seed(spec.seed, k), window, rows) for k in range(n_samples)]
    samples = np.stack(_map(_realization_b1, tasks, jobs))
    fit, mean, se, pm, pse = _ensemble_fit(samples, box, rows)
    _, dist, _ = pair_samples(box, mean, rows)
    single = np.array([fit_decay(dist, s[0].ravel()).rate for s in samples])
    return EnsembleResult(fit, mean, se, rows, box, n_samples, pm, pse, single,
                          meta={"window": [window.a, window.b]})


def jensen_check(low: EnsembleResult, high: EnsembleResult, sigma: float, s: float,
                 n_se: float = 3.0) -> tuple[bool, int]:
    """Per pair and eta: ``mean_sigma <= mean_s**(sigma/s) + n_se * stderr_sigma``.

    Both ensembles must come from the same realisations.  Returns the pass
    flag and the number of violating entries.
    """
    if not 0 < sigma < s < 1:
        raise ValueError("need 0 < sigma < s < 1")
    if low.per_eta_mean is None or high.per_eta_mean is None:
        raise ValueError("ensembles carry no per-eta means")
    if low.per_eta_mean.shape != high.per_eta_mean.shape:
        raise ValueError("ensembles were computed on different grids")
    lhs = low.per_eta_mean
    rhs = high.per_eta_mean ** (sigma / s) + n_se * low.per_eta_stderr
    bad = int(np.count_nonzero(lhs > rhs))
    return bad == 0, bad


# --- eigenbasis and projector diagnostics ---------------------------------

@dataclass
class SuleResult:
    eigenvalues: np.ndarray
    centers: np.ndarray
    rates: np.ndarray
    fit: DecayFit | None
    center_offset: float

    @property
    def median_rate(self) -> float:
        return float(np.median(self.rates))


def _simple_rate(r: np.ndarray, v: np.ndarray) -> float:
    if r.size < 2 or np.ptp(r) == 0:
        return MU_MAX
    slope = np.polyfit(r, np.log(v), 1)[0]
    return float(min(-slope, MU_MAX)) if slope < 0 else 0.0


def sule_analysis(dec: SpectralDecomposition, window: EnergyWindow, rel_floor: float = 1e-12) -> SuleResult:
    """Localization centres and exponential profiles of eigenvectors in the window.

    ``center_offset`` is the smallest ``C0`` with ``|x_n| >= sqrt(n)/3 - C0``
    after sorting centres by distance from the origin.  Amplitudes below
    ``rel_floor`` times a vector's peak are treated as zero; vectors with no
    usable tail get the capped rate ``MU_MAX``.
    """
    inside = window.contains(dec.eigenvalues)
    if np.count_nonzero(inside) < 5:
        raise ModelError(f"window holds {np.count_nonzero(inside)} eigenvalues; need at least 5")
    amp = dec.site_amplitudes[:, inside]
    centers = np.argmax(amp, axis=0)
    dist = dec.box.distances
    rates, all_r, all_v = [], [], []
    for k, c in enumerate(centers):
        a = amp[:, k]
        keep = a > rel_floor * a[c]
        r, v = dist[c][keep], a[keep]
        rates.append(_simple_rate(r, v))
        all_r.append(r)
        all_v.append(v)
    r_cat, v_cat = np.concatenate(all_r), np.concatenate(all_v)
    fit = None
    if r_cat.size >= MIN_FIT_SAMPLES and np.ptp(r_cat) > 0:
        fit = fit_decay(r_cat, v_cat)
    norms = np.sort(np.abs(dec.box.coords[centers]).sum(axis=1))
    n = np.arange(1, len(norms) + 1)
    offset = float(np.max(np.sqrt(n) / 3.0 - norms))
    return SuleResult(dec.eigenvalues[inside], centers, np.array(rates), fit, offset)


def fermi_avg_projection_diff(dec: SpectralDecomposition, dec2: SpectralDecomposition,
                              window: EnergyWindow, x: int, y: int) -> float:
    """Exact ``int_window ||(P_lambda - P'_lambda)_xy|| d lambda``.

    Both projections are constant between consecutive eigenvalues, so the
    integral is a finite sum of interval lengths times midpoint norms.
    """
    if dec.box != dec2.box or dec.N != dec2.N:
        raise ModelError("decompositions live on different boxes")
    N = dec.N

    def cumulative(d: SpectralDecomposition) -> np.ndarray:
        vx = d.eigenvectors[x * N : (x + 1) * N]
        vy = d.eigenvectors[y * N : (y + 1) * N]
        outer = np.einsum("am,bm->mab", vx, vy.conj())
        return np.concatenate([np.zeros((1, N, N), dtype=complex), np.cumsum(outer, axis=0)])

    c1, c2 = cumulative(dec), cumulative(dec2)
    pts = np.concatenate([dec.eigenvalues, dec2.eigenvalues])
    pts = np.unique(np.concatenate([[window.a, window.b], pts[(pts > window.a) & (pts < window.b)]]))
    mids = 0.5 * (pts[1:] + pts[:-1])
    lengths = np.diff(pts)
    k1 = np.searchsorted(dec.eigenvalues, mids, side="left")
    k2 = np.searchsorted(dec2.eigenvalues, mids, side="left")
    diff = c1[k1] - c2[k2]
    norms = np.abs(diff[:, 0, 0]) if N == 1 else np.linalg.norm(diff, ord=2, axis=(-2, -1))
    return float(np.sum(lengths * norms))


# --- certificate ------------------------------------------------------------

@dataclass(frozen=True)
class CertificateThresholds:
    """Worst admissible objects: window width, amplitude, rate, ``||a||_1``, degeneracy."""

    min_width: float = 0.1
    max_C: float = 10.0
    min_mu: float = 0.1
    max_a_l1: float = 1.0
    max_degeneracy: int = 2


@dataclass
class InsulatorCertificate:
    window: EnergyWindow
    thresholds: CertificateThresholds
    degeneracy: int
    b1_fit: DecayFit
    greens_fit: DecayFit | None
    clauses: dict[str, bool]
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())


def _envelope_amplitude(dist: np.ndarray, val: np.ndarray, mu: float) -> float:
    """Smallest ``C`` with ``val <= C exp(-mu dist)`` on every sample."""
    log_c = float(np.max(np.log(np.maximum(val, np.finfo(float).tiny)) + mu * dist))
    return math.exp(log_c) if log_c < 709.0 else math.inf


def _largest_admissible_rate(dist: np.ndarray, val: np.ndarray, max_C: float) -> float:
    """Largest ``mu`` in ``[0, MU_MAX]`` whose envelope amplitude stays within ``max_C`` (0 if none)."""
    if _envelope_amplitude(dist, val, 0.0) > max_C:
        return 0.0
    if _envelope_amplitude(dist, val, MU_MAX) <= max_C:
        return MU_MAX
    lo, hi = 0.0, MU_MAX
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        if _envelope_amplitude(dist, val, mid) <= max_C:
            lo = mid
        else:
            hi = mid
    return lo


def insulator_certificate(H: BlockOperator, window: EnergyWindow, thresholds: CertificateThresholds,
                          dec: SpectralDecomposition | None = None,
                          fm_cfg: FractionalMomentConfig | None = None,
                          rows: Sequence[int] | None = None,
                          greens_rows: Sequence[int] | None = None) -> InsulatorCertificate:
    """Finite-volume insulator test of ``H`` on ``window`` (Fermi energy at 0).

    B1 decay is fitted over pairs with ``x`` in ``rows`` (default: the central
    half of the box); the Green's function energy integral uses
    ``greens_rows`` (default: the centre site) on the middle half of the
    window.

    The rate clause compares the fitted decay rate with ``min_mu``; the
    amplitude clause asks for a rigorous envelope ``C exp(-min_mu r)`` over
    all sampled pairs with ``C <= max_C``.
    """
    dec = dec or diagonalize(H)
    box = H.box
    rows = central_sites(box) if rows is None else np.asarray(rows)
    greens_rows = np.array([box.center]) if greens_rows is None else np.asarray(greens_rows)
    degeneracy = max_degeneracy(dec, window)
    bound = b1_sup_bound(dec, window)[rows]
    _, dist, val = pair_samples(box, bound, rows)
    b1_fit = fit_decay(dist, val, floor=1e-14 * float(val.max()))
    # C(mu) is increasing, so an envelope with C <= C0 and mu >= mu0 exists iff C(mu0) <= C0
    envelope_C = _envelope_amplitude(dist, val, thresholds.min_mu)
    if fm_cfg is None:
        quarter = 0.25 * window.width
        fm_cfg = FractionalMomentConfig(window=EnergyWindow(window.a + quarter, window.b - quarter))
    table = greens_fractional_table(dec, fm_cfg, greens_rows)
    _, gdist, gval = pair_samples(box, table, greens_rows)
    try:
        greens_fit = fit_decay(gdist, gval, kind="polynomial")
    except ValueError:
        greens_fit = None
    clauses = {
        "fermi_in_window": bool(window.a < 0.0 < window.b),
        "width": window.width >= thresholds.min_width,
        "amplitude": envelope_C <= thresholds.max_C,
        "rate": b1_fit.rate >= thresholds.min_mu,
        "weight_l1": b1_fit.a_l1 <= thresholds.max_a_l1 + 1e-12,
        "degeneracy": degeneracy <= thresholds.max_degeneracy,
    }
    meta = {
        "envelope_C": envelope_C,
        "certified_mu": _largest_admissible_rate(dist, val, thresholds.max_C),
        "box_L": box.L, "d": box.d, "n_rows": int(len(rows)),
        "greens_max": float(table.max()), "fm_s": fm_cfg.s,
        "fm_window": [fm_cfg.window.a, fm_cfg.window.b],
    }
    return InsulatorCertificate(window, thresholds, degeneracy, b1_fit, greens_fit, clauses, meta)
