"""Finite lattice boxes, block operators and model Hamiltonians.

Operators on ``l2(box) (x) C^N`` are stored densely as a flat complex matrix
whose row/column index is ``site * N + orbital``.  The ``(x, y)`` block is the
``N x N`` matrix ``A[x*N:(x+1)*N, y*N:(y+1)*N]``.  Block norms are spectral
norms throughout and positions are compared with the 1-norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Sequence

import numpy as np

HERMITIAN_TOL = 1e-12


class ModelError(ValueError):
    """Raised for invalid model descriptions or incompatible operators."""


@dataclass(frozen=True)
class LatticeBox:
    """Origin-centred box ``{x in Z^d : |x|_inf <= (L-1)/2}``."""

    d: int
    L: int

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ModelError(f"dimension must be 1 or 2, got {self.d}")
        if self.L < 1 or self.L % 2 == 0:
            raise ModelError(f"side length must be a positive odd integer, got {self.L}")

    @property
    def radius(self) -> int:
        return (self.L - 1) // 2

    @property
    def n_sites(self) -> int:
        return self.L**self.d

    @property
    def diameter(self) -> int:
        """Largest 1-norm distance between two sites."""
        return self.d * (self.L - 1)

    @cached_property
    def coords(self) -> np.ndarray:
        """Integer coordinates, shape ``(n_sites, d)``; the last axis varies fastest."""
        axis = np.arange(-self.radius, self.radius + 1)
        grids = np.meshgrid(*([axis] * self.d), indexing="ij")
        out = np.stack([g.ravel() for g in grids], axis=1)
        out.flags.writeable = False
        return out

    @cached_property
    def distances(self) -> np.ndarray:
        """Pairwise 1-norm distances, shape ``(n_sites, n_sites)``."""
        c = self.coords
        out = np.abs(c[:, None, :] - c[None, :, :]).sum(axis=-1)
        out.flags.writeable = False
        return out

    def index(self, x: Sequence[int]) -> int:
        x = tuple(int(v) for v in np.atleast_1d(x))
        if len(x) != self.d or any(abs(v) > self.radius for v in x):
            raise ModelError(f"site {x} is not in the box of side {self.L}")
        idx = 0
        for v in x:
            idx = idx * self.L + (v + self.radius)
        return idx

    @property
    def center(self) -> int:
        return self.index([0] * self.d)


@dataclass(frozen=True, eq=False)
class BlockOperator:
    """Dense operator on ``l2(box) (x) C^N``."""

    box: LatticeBox
    N: int
    matrix: np.ndarray
    hermitian: bool = False

    def __post_init__(self) -> None:
        dim = self.box.n_sites * self.N
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (dim, dim):
            raise ModelError(f"matrix shape {m.shape} does not match box/N (expected {(dim, dim)})")
        if m is self.matrix and m.flags.writeable:
            m = m.copy()
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        if self.hermitian and not self.is_hermitian():
            raise ModelError("operator flagged hermitian but A_xy != (A_yx)^dagger")

    @classmethod
    def zeros(cls, box: LatticeBox, N: int = 1) -> BlockOperator:
        dim = box.n_sites * N
        return cls(box, N, np.zeros((dim, dim), dtype=complex), hermitian=True)

    @classmethod
    def identity(cls, box: LatticeBox, N: int = 1) -> BlockOperator:
        return cls(box, N, np.eye(box.n_sites * N, dtype=complex), hermitian=True)

    @classmethod
    def from_blocks(cls, box: LatticeBox, blocks: np.ndarray, hermitian: bool = False) -> BlockOperator:
        """Build from an array of shape ``(n, n, N, N)`` indexed ``[x, y, a, b]``."""
        n, _, N, _ = blocks.shape
        mat = np.asarray(blocks, dtype=complex).transpose(0, 2, 1, 3).reshape(n * N, n * N)
        return cls(box, N, mat, hermitian=hermitian)

    @property
    def n_sites(self) -> int:
        return self.box.n_sites

    @property
    def blocks(self) -> np.ndarray:
        """View of shape ``(n, n, N, N)`` with ``blocks[x, y] == A_xy``."""
        n, N = self.n_sites, self.N
        return self.matrix.reshape(n, N, n, N).transpose(0, 2, 1, 3)

    def block(self, x: int, y: int) -> np.ndarray:
        N = self.N
        return self.matrix[x * N : (x + 1) * N, y * N : (y + 1) * N]

    @cached_property
    def block_norms(self) -> np.ndarray:
        """Spectral norms ``||A_xy||``, shape ``(n, n)``."""
        return block_norms(self.matrix, self.N)

    def is_hermitian(self, tol: float = HERMITIAN_TOL) -> bool:
        diff = self.matrix - self.matrix.conj().T
        return bool(np.max(np.abs(diff), initial=0.0) < tol)

    def _check_compatible(self, other: BlockOperator) -> None:
        if self.box != other.box or self.N != other.N:
            raise ModelError(
                f"shape mismatch: box {self.box}, N={self.N} vs box {other.box}, N={other.N}"
            )

    def __add__(self, other: BlockOperator) -> BlockOperator:
        self._check_compatible(other)
        return BlockOperator(self.box, self.N, self.matrix + other.matrix,
                             hermitian=self.hermitian and other.hermitian)

    def __sub__(self, other: BlockOperator) -> BlockOperator:
        self._check_compatible(other)
        return BlockOperator(self.box, self.N, self.matrix - other.matrix,
                             hermitian=self.hermitian and other.hermitian)

    def __neg__(self) -> BlockOperator:
        return self.scale(-1.0)

    def __matmul__(self, other: BlockOperator) -> BlockOperator:
        return compose(self, other)

    def scale(self, c: complex) -> BlockOperator:
        herm = self.hermitian and complex(c).imag == 0.0
        return BlockOperator(self.box, self.N, c * self.matrix, hermitian=herm)

    def adjoint(self) -> BlockOperator:
        return adjoint(self)

    def max_block_diff(self, other: BlockOperator) -> float:
        self._check_compatible(other)
        return float(np.max(block_norms(self.matrix - other.matrix, self.N), initial=0.0))


def block_norms(matrix: np.ndarray, N: int) -> np.ndarray:
    """Spectral norm of every ``N x N`` block of a flat ``(nN, nN)`` matrix."""
    n = matrix.shape[0] // N
    if N == 1:
        return np.abs(matrix)
    blocks = matrix.reshape(n, N, n, N).transpose(0, 2, 1, 3)
    return np.linalg.norm(blocks, ord=2, axis=(-2, -1))


def compose(A: BlockOperator, B: BlockOperator) -> BlockOperator:
    A._check_compatible(B)
    return BlockOperator(A.box, A.N, A.matrix @ B.matrix)


def adjoint(A: BlockOperator) -> BlockOperator:
    return BlockOperator(A.box, A.N, A.matrix.conj().T, hermitian=A.hermitian)


def holmgren_bound(A: BlockOperator) -> float:
    """Larger of the maximal row and column sums of block norms."""
    norms = A.block_norms
    if norms.size == 0:
        return 0.0
    return float(max(norms.sum(axis=0).max(), norms.sum(axis=1).max()))


def operator_norm(A: BlockOperator) -> float:
    """Largest singular value of the dense matrix."""
    m = A.matrix
    if not np.any(m):
        return 0.0
    if A.hermitian:
        return float(np.max(np.abs(np.linalg.eigvalsh(m))))
    return float(np.linalg.norm(m, ord=2))


@dataclass(frozen=True)
class SwitchFunction:
    """Tabulated switch ``Lambda: Z -> R``, 0 for ``n <= -M`` and 1 for ``n >= M``.

    ``table[k]`` holds ``Lambda(k - M)`` for ``k = 0..2M``.
    """

    M: int
    table: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.M < 1:
            raise ModelError("switch support radius must be >= 1")
        if len(self.table) != 2 * self.M + 1:
            raise ModelError(f"switch table needs {2 * self.M + 1} entries, got {len(self.table)}")
        if self.table[0] != 0.0 or self.table[-1] != 1.0:
            raise ModelError("switch must equal 0 at -M and 1 at +M")

    def __call__(self, n: np.ndarray | int) -> np.ndarray:
        k = np.clip(np.asarray(n) + self.M, 0, 2 * self.M)
        return np.asarray(self.table)[k]

    @property
    def total_variation(self) -> float:
        return float(np.abs(np.diff(self.table)).sum())

    @classmethod
    def sharp(cls) -> SwitchFunction:
        """``Lambda(n) = 1`` for ``n >= 0``, else 0."""
        return cls(1, (0.0, 1.0, 1.0), name="sharp")

    @classmethod
    def tanh(cls, width: float = 3.0, M: int = 20) -> SwitchFunction:
        """``(1 + tanh(n/width))/2`` on ``|n| < M``, clamped to 0/1 outside."""
        n = np.arange(-M, M + 1)
        vals = 0.5 * (1.0 + np.tanh(n / width))
        vals[0], vals[-1] = 0.0, 1.0
        return cls(M, tuple(float(v) for v in vals), name="tanh")

    @classmethod
    def named(cls, name: str) -> SwitchFunction:
        if name == "sharp":
            return cls.sharp()
        if name == "tanh":
            return cls.tanh()
        raise ModelError(f"unknown switch function {name!r} (expected 'sharp' or 'tanh')")


def nc_derivative(A: BlockOperator, axis: int, switch: SwitchFunction) -> BlockOperator:
    """``-i [Lambda(X_axis), A]``: block ``(x, y)`` is ``-i (Lambda(x_a) - Lambda(y_a)) A_xy``."""
    if not 1 <= axis <= A.box.d:
        raise ModelError(f"axis {axis} out of range for d={A.box.d}")
    lam = np.repeat(switch(A.box.coords[:, axis - 1]), A.N)
    factor = -1j * (lam[:, None] - lam[None, :])
    return BlockOperator(A.box, A.N, factor * A.matrix)


def trace_norm(A: BlockOperator) -> float:
    """Exact trace norm (sum of singular values)."""
    return float(np.linalg.svd(A.matrix, compute_uv=False).sum())


def trace_norm_estimate(A: BlockOperator, B: BlockOperator) -> float:
    """Upper bound ``sum_{x,y,z} ||A_xy|| ||B_yz||`` on ``||AB||_1``."""
    A._check_compatible(B)
    return float(A.block_norms.sum(axis=0) @ B.block_norms.sum(axis=1))


# --- models -----------------------------------------------------------------

MODEL_KINDS = ("hofstadter", "anderson", "custom")


@dataclass(frozen=True)
class Hopping:
    """Translation-invariant term ``H[x + shift, x][a, b] = value`` (h.c. added)."""

    shift: tuple[int, ...]
    value: complex
    orbital_to: int = 0
    orbital_from: int = 0


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "anderson"
    d: int = 1
    L: int = 11
    N: int = 1
    flux_p: int = 0
    flux_q: int = 1
    disorder_w: float = 0.0
    seed: int = 0
    energy_shift: float = 0.0
    hoppings: tuple[Hopping, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        LatticeBox(self.d, self.L)
        if self.N < 1:
            raise ModelError("internal dimension N must be >= 1")
        if self.flux_q < 1 or math.gcd(self.flux_p, self.flux_q) != 1:
            raise ModelError(f"invalid flux {self.flux_p}/{self.flux_q}: need q >= 1 and gcd(p, q) = 1")
        if self.kind == "hofstadter" and self.d != 2:
            raise ModelError("hofstadter model requires d = 2")
        if self.disorder_w < 0:
            raise ModelError("disorder width must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ModelError("seed must fit in 64 unsigned bits")
        for h in self.hoppings:
            if len(h.shift) != self.d:
                raise ModelError(f"hopping shift {h.shift} has wrong dimension")
            if max((abs(s) for s in h.shift), default=0) > self.L - 1:
                raise ModelError(f"hopping shift {h.shift} does not fit in a box of side {self.L}")
            if not (0 <= h.orbital_to < self.N and 0 <= h.orbital_from < self.N):
                raise ModelError(f"hopping orbitals out of range for N={self.N}")

    @property
    def box(self) -> LatticeBox:
        return LatticeBox(self.d, self.L)

    @property
    def flux(self) -> Fraction:
        return Fraction(self.flux_p, self.flux_q)

    def with_(self, **changes: Any) -> ModelSpec:
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "hoppings"}
        out["disorder_w"] = float(self.disorder_w)
        out["energy_shift"] = float(self.energy_shift)
        if self.hoppings:
            out["hoppings"] = [
                {
                    "shift": list(h.shift),
                    "value": [float(complex(h.value).real), float(complex(h.value).imag)],
                    "orbital_to": h.orbital_to,
                    "orbital_from": h.orbital_from,
                }
                for h in self.hoppings
            ]
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelSpec:
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ModelError(f"unknown model key(s): {', '.join(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in data.items():
            if key == "hoppings":
                kwargs[key] = tuple(_parse_hopping(h) for h in value)
            elif key == "kind":
                if not isinstance(value, str):
                    raise ModelError(f"model key 'kind' must be a string, got {type(value).__name__}")
                kwargs[key] = value
            elif key in ("disorder_w", "energy_shift"):
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ModelError(f"model key {key!r} must be a number, got {type(value).__name__}")
                kwargs[key] = float(value)
            else:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ModelError(f"model key {key!r} must be an integer, got {type(value).__name__}")
                kwargs[key] = value
        return cls(**kwargs)


def _parse_hopping(data: dict[str, Any]) -> Hopping:
    allowed = {"shift", "value", "orbital_to", "orbital_from"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ModelError(f"unknown hopping key(s): {', '.join(unknown)}")
    value = data.get("value", 0.0)
    if isinstance(value, (list, tuple)):
        value = complex(value[0], value[1])
    return Hopping(
        shift=tuple(int(s) for s in data["shift"]),
        value=complex(value),
        orbital_to=int(data.get("orbital_to", 0)),
        orbital_from=int(data.get("orbital_from", 0)),
    )


def disorder_values(seed: int, n: int, width: float) -> np.ndarray:
    """I.i.d. uniform values on ``[-W/2, W/2]``; entry ``k`` depends only on ``(seed, k)``.

    Philox is counter based, so the k-th draw under a fixed key is a pure
    function of the key and k.
    """
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    return gen.uniform(-0.5 * width, 0.5 * width, size=n)


def _add_translation_term(mat: np.ndarray, box: LatticeBox, N: int, shift: Sequence[int],
                          value: complex, a: int, b: int, phases: np.ndarray | None = None) -> None:
    """``H[x + shift, x][a, b] += value * phase(x)`` plus the hermitian conjugate."""
    coords = box.coords
    target = coords + np.asarray(shift)
    inside = np.all(np.abs(target) <= box.radius, axis=1)
    src = np.nonzero(inside)[0]
    dst = np.array([box.index(t) for t in target[inside]], dtype=int)
    amp = np.full(len(src), value, dtype=complex)
    if phases is not None:
        amp = amp * phases[src]
    rows, cols = dst * N + a, src * N + b
    if any(shift):
        mat[rows, cols] += amp
        mat[cols, rows] += amp.conj()
    elif a != b:
        mat[rows, cols] += amp
        mat[cols, rows] += amp.conj()
    else:
        mat[rows, cols] += amp.real


def build_hamiltonian(spec: ModelSpec) -> BlockOperator:
    """Hermitian tight-binding Hamiltonian for ``spec`` (deterministic in the seed)."""
    spec.validate()
    box, N = spec.box, spec.N
    dim = box.n_sites * N
    mat = np.zeros((dim, dim), dtype=complex)
    if spec.kind in ("anderson", "hofstadter"):
        for axis in range(spec.d):
            shift = [0] * spec.d
            shift[axis] = 1
            phases = None
            if spec.kind == "hofstadter" and axis == 1:
                phases = np.exp(2j * np.pi * float(spec.flux) * box.coords[:, 0])
            for a in range(N):
                _add_translation_term(mat, box, N, shift, 1.0, a, a, phases)
    else:
        for h in spec.hoppings:
            if spec.flux_p and any(h.shift):
                phases = np.exp(2j * np.pi * float(spec.flux) * h.shift[-1] * box.coords[:, 0]) \
                    if spec.d == 2 else None
            else:
                phases = None
            _add_translation_term(mat, box, N, h.shift, h.value, h.orbital_to, h.orbital_from, phases)
    if spec.disorder_w > 0:
        mat[np.diag_indices(dim)] += disorder_values(spec.seed, dim, spec.disorder_w)
    if spec.energy_shift:
        mat[np.diag_indices(dim)] -= spec.energy_shift
    return BlockOperator(box, N, mat, hermitian=True)


def onsite_operator(box: LatticeBox, N: int, values: np.ndarray) -> BlockOperator:
    """Diagonal operator with ``values`` on the diagonal (length ``n_sites * N``)."""
    return BlockOperator(box, N, np.diag(np.asarray(values, dtype=complex)), hermitian=True)


# --- dumps ------------------------------------------------------------------

def save_operator(path: str | Path, A: BlockOperator) -> None:
    """Write an ``.npz`` dump with keys ``matrix``, ``d``, ``L``, ``N``, ``hermitian``."""
    with open(path, "wb") as fh:
        np.savez(fh, matrix=A.matrix, d=A.box.d, L=A.box.L, N=A.N, hermitian=A.hermitian)


def load_operator(path: str | Path) -> BlockOperator:
    with np.load(path) as data:
        box = LatticeBox(int(data["d"]), int(data["L"]))
        return BlockOperator(box, int(data["N"]), np.array(data["matrix"]), hermitian=bool(data["hermitian"]))
