import numpy as np
import pytest

from mobgap.lattice import BlockOperator, LatticeBox, ModelError, build_hamiltonian
from mobgap.spectral import (EnergyWindow, SpectralError, apply_borel, contour_nodes, contour_projection,
                             diagonalize, fermi_projection, max_degeneracy, resolvent_block,
                             resolvent_direct, resolvent_matrix)

from conftest import chain, random_operator


def diag_op(values):
    """Diagonal operator on a single site with one orbital per value."""
    values = np.asarray(values, dtype=float)
    return BlockOperator(LatticeBox(1, 1), len(values), np.diag(values), hermitian=True)


def expm_taylor(m, terms=60):
    out = np.eye(len(m), dtype=complex)
    term = np.eye(len(m), dtype=complex)
    for k in range(1, terms):
        term = term @ m / k
        out = out + term
    return out


def test_diagonalize_examples():
    dec = diagonalize(diag_op([2.0, -1.0, 0.5]))
    np.testing.assert_array_equal(dec.eigenvalues, [-1.0, 0.5, 2.0])
    sx = BlockOperator(LatticeBox(1, 1), 2, np.array([[0, 1], [1, 0]]), hermitian=True)
    np.testing.assert_allclose(diagonalize(sx).eigenvalues, [-1, 1])
    ev = diagonalize(build_hamiltonian(chain(5))).eigenvalues
    exact = np.sort(2 * np.cos(np.arange(1, 6) * np.pi / 6))
    assert np.max(np.abs(ev - exact)) < 1e-10


def test_diagonalize_rejects_non_hermitian(rng):
    with pytest.raises(ModelError):
        diagonalize(random_operator(rng, LatticeBox(1, 3)))


def test_fermi_projection_examples():
    dec = diagonalize(diag_op([-1.0, 2.0]))
    assert not np.any(fermi_projection(dec, -5.0).matrix)
    np.testing.assert_array_equal(fermi_projection(dec, 0.0).matrix, np.diag([1.0, 0.0]))
    with pytest.raises(SpectralError, match="collides"):
        fermi_projection(dec, 2.0 + 1e-13)


def test_fermi_projection_matches_dense_oracle(rng):
    H = random_operator(rng, LatticeBox(1, 3), hermitian=True)
    w, v = np.linalg.eig(H.matrix)  # independent, non-symmetric solver
    sel = w.real < 0.1
    q, _ = np.linalg.qr(v[:, sel])
    np.testing.assert_allclose(fermi_projection(diagonalize(H), 0.1).matrix, q @ q.conj().T, atol=1e-10)


def test_projector_algebra_and_monotone_rank(rng):
    box = LatticeBox(2, 5)
    H = random_operator(rng, box, N=2, decay=1.0, hermitian=True)
    dec = diagonalize(H)
    last = -1
    for e in np.linspace(-4, 4, 41):
        P = fermi_projection(dec, e).matrix
        assert np.max(np.abs(P @ P - P)) < 1e-10
        assert np.max(np.abs(P - P.conj().T)) < 1e-10
        rank = np.trace(P).real
        assert abs(rank - round(rank)) < 1e-10
        assert round(rank) >= last
        last = round(rank)


def test_apply_borel(rng):
    H = random_operator(rng, LatticeBox(1, 3), hermitian=True)
    dec = diagonalize(H)
    np.testing.assert_allclose(apply_borel(dec, lambda e: np.ones_like(e)).matrix, np.eye(3), atol=1e-12)
    chi = apply_borel(dec, lambda e: (e < 0.2).astype(float))
    np.testing.assert_allclose(chi.matrix, fermi_projection(dec, 0.2).matrix, atol=1e-14)
    two = random_operator(rng, LatticeBox(1, 1), N=2, hermitian=True)
    U = apply_borel(diagonalize(two), lambda e: np.exp(1j * e), bounded=True)
    np.testing.assert_allclose(U.matrix, expm_taylor(1j * two.matrix), atol=1e-12)
    with pytest.raises(ValueError):
        apply_borel(dec, lambda e: 2 * np.ones_like(e), bounded=True)


def test_resolvent_examples(rng):
    dec = diagonalize(BlockOperator.zeros(LatticeBox(1, 3)))
    G = resolvent_matrix(dec, 1j)
    np.testing.assert_allclose(np.diag(G), [1j] * 3)
    assert resolvent_block(dec, 0, 1, 1j)[0, 0] == 0
    H = random_operator(rng, LatticeBox(2, 3), N=2, hermitian=True)
    dec = diagonalize(H)
    for z in (0.3 + 0.01j, -1 + 0.5j, 2j):
        G = resolvent_matrix(dec, z)
        dense = np.linalg.inv(H.matrix - z * np.eye(18))
        assert np.max(np.abs(G - dense)) < 1e-9
        np.testing.assert_allclose(resolvent_direct(H, z), dense, atol=1e-9)
        for x, y in ((0, 0), (2, 7)):
            assert np.linalg.norm(resolvent_block(dec, x, y, z), 2) <= 1 / abs(z.imag) + 1e-12


def test_resolvent_identity(rng):
    box = LatticeBox(2, 3)
    for _ in range(10):
        H = random_operator(rng, box, hermitian=True)
        H2 = random_operator(rng, box, hermitian=True)
        z = complex(rng.normal(), rng.uniform(0.1, 1.0))
        G, G2 = resolvent_matrix(diagonalize(H), z), resolvent_matrix(diagonalize(H2), z)
        assert np.max(np.abs(G - G2 - G @ (H2.matrix - H.matrix) @ G2)) < 1e-9


def test_contour_nodes_integrate_closed_loop():
    z, w = contour_nodes(0.0, -3.0, 20)
    assert abs(w.sum()) < 1e-12  # oint dz = 0
    assert abs(np.sum(w / (z + 1.0)) - 2j * np.pi) < 1e-10


def test_contour_projection_without_enclosed_poles():
    H = diag_op([1.0, 2.0, 3.0])
    assert np.max(np.abs(contour_projection(H, 0.0, 200).matrix)) < 1e-12


def test_contour_projection_diagonal_case():
    H = diag_op([-1.0, 1.0])
    exact = fermi_projection(diagonalize(H), 0.0).matrix
    errors = [np.max(np.abs(contour_projection(H, 0.0, n).matrix - exact)) for n in (4, 8, 16, 200)]
    assert errors[-1] < 1e-6
    assert errors[0] > errors[1] > errors[2]


def test_contour_solve_matches_spectral(rng):
    H = random_operator(rng, LatticeBox(2, 3), decay=1.0, hermitian=True)
    dec = diagonalize(H)
    gaps = np.diff(dec.eigenvalues)
    k = int(np.argmax(gaps))
    lam = 0.5 * (dec.eigenvalues[k] + dec.eigenvalues[k + 1])
    a = contour_projection(H, lam, 50, method="solve").matrix
    b = contour_projection(H, lam, 50, method="spectral").matrix
    assert np.max(np.abs(a - b)) < 1e-10


def test_contour_warns_near_pole():
    with pytest.warns(RuntimeWarning, match="within"):
        contour_projection(diag_op([-1.0, 0.01]), 0.0, 50)
    with pytest.raises(SpectralError):
        contour_projection(diag_op([-1.0, 0.0]), 0.0, 50)


def test_max_degeneracy():
    assert max_degeneracy(diagonalize(diag_op([0.1, 0.2, 0.3])), EnergyWindow(-1, 1)) == 1
    assert max_degeneracy(diagonalize(BlockOperator.zeros(LatticeBox(1, 3))), EnergyWindow(-1, 1)) == 3
    assert max_degeneracy(diagonalize(diag_op([5.0])), EnergyWindow(-1, 1)) == 0
    for seed in range(5):
        dec = diagonalize(build_hamiltonian(chain(51, W=2.0, seed=seed)))
        assert max_degeneracy(dec, EnergyWindow(-3, 3)) == 1


def test_energy_window_rejects_empty():
    with pytest.raises(ValueError):
        EnergyWindow(1.0, 1.0)
