import numpy as np
import pytest

from mobgap.lattice import BlockOperator, LatticeBox, ModelSpec, build_hamiltonian
from mobgap.spectral import diagonalize

# Centre of the lowest Hofstadter 1/3 gap; shifting by it puts E_F = 0 mid-gap.
HOF_GAP_CENTER = -1.366


def random_operator(rng, box, N=1, scale=1.0, decay=None, hermitian=False):
    dim = box.n_sites * N
    m = scale * (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim)))
    if decay is not None:
        m *= np.kron(np.exp(-decay * box.distances), np.ones((N, N)))
    if hermitian:
        m = 0.5 * (m + m.conj().T)
    return BlockOperator(box, N, m, hermitian=hermitian)


def hofstadter(L=21, p=1, q=3, W=0.0, seed=0, shift=HOF_GAP_CENTER):
    return ModelSpec(kind="hofstadter", d=2, L=L, flux_p=p, flux_q=q, disorder_w=W, seed=seed,
                     energy_shift=shift)


def chain(L, W=0.0, seed=0):
    return ModelSpec(kind="anderson", d=1, L=L, disorder_w=W, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def hof21():
    H = build_hamiltonian(hofstadter())
    return H, diagonalize(H)


@pytest.fixture(scope="session")
def box_small():
    return LatticeBox(2, 3)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
