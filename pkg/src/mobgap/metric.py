"""Local distance between operators: closeness plus off-diagonal decay rate."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import BlockOperator, LatticeBox, block_norms

MU_MIN = 1e-3
MU_MAX = 50.0
MU_TOL = 1e-9


@dataclass(frozen=True)
class DecayEnvelope:
    C: float
    mu: float

    def __post_init__(self) -> None:
        if not (0 < self.C < math.inf and 0 < self.mu < math.inf):
            raise ValueError("envelope amplitude and rate must be positive and finite")

    @property
    def t(self) -> float:
        return max(self.C, 1.0 / self.mu)


@dataclass(frozen=True)
class MetricResult:
    value: float
    mu_star: float
    C_star: float
    box: LatticeBox


def _distance_profile(D: BlockOperator) -> tuple[np.ndarray, np.ndarray]:
    """Distinct distances ``r`` and the largest block norm found at each."""
    norms = D.block_norms
    dist = D.box.distances
    r = np.arange(D.box.diameter + 1)
    peak = np.zeros(len(r))
    np.maximum.at(peak, dist.ravel(), norms.ravel())
    keep = peak > 0
    return r[keep].astype(float), peak[keep]


def _envelope(r: np.ndarray, peak: np.ndarray, mu: float) -> float:
    if r.size == 0:
        return 0.0
    log_c = float(np.max(np.log(peak) + mu * r))
    return math.exp(log_c) if log_c < 709.0 else math.inf


def envelope_constant(D: BlockOperator, mu: float) -> float:
    """Smallest ``C`` with ``||D_xy|| <= C exp(-mu |x - y|)`` on the box."""
    if mu <= 0:
        raise ValueError(f"rate must be positive, got {mu}")
    return _envelope(*_distance_profile(D), mu)


def local_distance(A: BlockOperator, B: BlockOperator) -> MetricResult:
    """Minimise ``max(C(mu), 1/mu)`` over ``mu`` in ``[MU_MIN, MU_MAX]``.

    ``C(mu)`` is nondecreasing and ``1/mu`` decreasing, so the minimum sits at
    their crossing; bisection keeps the upper end, where ``C(mu) >= 1/mu``,
    so the returned envelope is always admissible.
    """
    A._check_compatible(B)
    D = A - B
    r, peak = _distance_profile(D)
    if r.size == 0:
        return MetricResult(0.0, MU_MAX, 0.0, A.box)

    def excess(mu: float) -> float:
        return _envelope(r, peak, mu) - 1.0 / mu

    if excess(MU_MIN) >= 0:
        mu = MU_MIN
    elif excess(MU_MAX) <= 0:
        mu = MU_MAX
    else:
        lo, hi = MU_MIN, MU_MAX
        while hi - lo > MU_TOL:
            mid = 0.5 * (lo + hi)
            if excess(mid) >= 0:
                hi = mid
            else:
                lo = mid
        mu = hi
        # only on-site differences bind: the envelope is flat in mu
        if r[np.argmax(np.log(peak) + mu * r)] == 0 and _envelope(r, peak, MU_MAX) == _envelope(r, peak, mu):
            mu = MU_MAX
    C = _envelope(r, peak, mu)
    return MetricResult(max(C, 1.0 / mu), mu, C, A.box)


def envelope_check(A: BlockOperator, B: BlockOperator, t: float, slack: float = 1e-9) -> bool:
    """True iff ``||(A-B)_xy|| <= (t+slack) exp(-|x-y|/(t+slack))`` for all pairs."""
    if t <= 0:
        raise ValueError("t must be positive")
    A._check_compatible(B)
    s = t + slack
    norms = block_norms(A.matrix - B.matrix, A.N)
    return bool(np.all(norms <= s * np.exp(-A.box.distances / s)))


def opnorm_bound_from_metric(dl: float, d: int) -> float:
    """Operator-norm bound ``dl * coth(1/(2 dl))**d`` implied by the local distance."""
    if dl <= 0:
        raise ValueError("local distance must be positive")
    return dl * (1.0 / math.tanh(1.0 / (2.0 * dl))) ** d
