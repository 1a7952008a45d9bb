import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mobgap.lattice import (BlockOperator, Hopping, LatticeBox, ModelError, ModelSpec, SwitchFunction,
                            adjoint, build_hamiltonian, compose, disorder_values, holmgren_bound,
                            load_operator, nc_derivative, onsite_operator, operator_norm, save_operator,
                            trace_norm, trace_norm_estimate)

from conftest import chain, hofstadter, random_operator


def test_box_geometry():
    box = LatticeBox(2, 5)
    assert box.n_sites == 25 and box.radius == 2 and box.diameter == 8
    assert tuple(box.coords[box.center]) == (0, 0)
    assert box.index((-2, -2)) == 0 and box.index((-2, -1)) == 1
    assert box.distances.max() == box.diameter
    with pytest.raises(ModelError):
        LatticeBox(2, 4)
    with pytest.raises(ModelError):
        box.index((3, 0))


def test_clean_chain_is_tridiagonal():
    H = build_hamiltonian(chain(3))
    expected = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex)
    np.testing.assert_array_equal(H.matrix, expected)


def test_zero_flux_hofstadter_has_unit_hoppings():
    H = build_hamiltonian(ModelSpec(kind="hofstadter", d=2, L=5, flux_p=0, flux_q=1))
    m = H.matrix
    assert np.all(np.isin(m, [0, 1]))
    np.testing.assert_array_equal(m != 0, H.box.distances == 1)


def test_hofstadter_phase_on_axis2_bonds():
    spec = hofstadter(L=5, shift=0.0)
    H = build_hamiltonian(spec)
    box = H.box
    for x1 in range(-2, 3):
        a, b = box.index((x1, 0)), box.index((x1, 1))
        assert H.matrix[b, a] == pytest.approx(np.exp(2j * np.pi * x1 / 3))
        assert H.matrix[box.index((1, x1)), box.index((0, x1))] == pytest.approx(1.0)


def test_hofstadter_gap_matches_bloch_bands(hof21):
    from mobgap.chern import band_edges
    _, dec = hof21
    edges = band_edges(hofstadter(shift=0.0))
    ev = dec.eigenvalues + (-1.366)  # undo the shift
    lo, hi = edges[0, 1], edges[1, 0]
    assert hi - lo > 1.2
    # open-boundary edge modes are the only states inside the bulk gap
    assert np.count_nonzero((ev > lo) & (ev < hi)) < 0.06 * ev.size
    assert abs(np.count_nonzero(ev <= lo + 1e-9) - ev.size / 3) < 0.05 * ev.size


@pytest.mark.parametrize("spec", [hofstadter(L=7, W=1.0, seed=3), chain(9, W=2.0, seed=1),
                                  ModelSpec(kind="custom", d=2, L=5, N=2, flux_p=1, flux_q=4,
                                            hoppings=(Hopping((1, 0), 0.5 + 0.2j, 0, 1),
                                                      Hopping((0, 0), 0.3j, 0, 1),
                                                      Hopping((0, 0), 0.7, 1, 1)))])
def test_built_hamiltonians_are_hermitian(spec):
    H = build_hamiltonian(spec)
    assert H.max_block_diff(H.adjoint()) < 1e-12


def test_build_is_deterministic():
    a = build_hamiltonian(hofstadter(L=9, W=1.0, seed=42))
    b = build_hamiltonian(hofstadter(L=9, W=1.0, seed=42))
    assert a.matrix.tobytes() == b.matrix.tobytes()
    c = build_hamiltonian(hofstadter(L=9, W=1.0, seed=43))
    assert not np.array_equal(a.matrix, c.matrix)


def test_disorder_is_counter_based():
    full = disorder_values(7, 100, 2.0)
    np.testing.assert_array_equal(full[:10], disorder_values(7, 10, 2.0))
    assert np.all(np.abs(full) <= 1.0)


@pytest.mark.parametrize("bad", [dict(flux_p=1, flux_q=0), dict(flux_p=2, flux_q=4), dict(L=4),
                                 dict(disorder_w=-1.0), dict(kind="hofstadter", d=1)])
def test_invalid_specs(bad):
    base = dict(kind="anderson", d=2, L=5)
    base.update(bad)
    with pytest.raises(ModelError):
        build_hamiltonian(ModelSpec(**base))


def test_spec_dict_rejects_unknown_keys():
    with pytest.raises(ModelError, match="fluxx"):
        ModelSpec.from_dict({"kind": "anderson", "fluxx": 1})
    spec = hofstadter(W=0.5, seed=9)
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_compose_and_adjoint(rng):
    box = LatticeBox(1, 3)
    A = random_operator(rng, box, N=2)
    B = random_operator(rng, box, N=2)
    I = BlockOperator.identity(box, 2)
    np.testing.assert_array_equal(compose(I, A).matrix, A.matrix)
    np.testing.assert_array_equal(adjoint(adjoint(A)).matrix, A.matrix)
    small = LatticeBox(1, 1)
    a2 = random_operator(rng, small, N=2)
    b2 = random_operator(rng, small, N=2)
    np.testing.assert_allclose(compose(a2, b2).matrix, a2.matrix @ b2.matrix)
    np.testing.assert_allclose((A @ B).matrix, A.matrix @ B.matrix)
    with pytest.raises(ModelError, match="shape mismatch"):
        compose(A, random_operator(rng, box, N=1))


def test_holmgren_examples(rng):
    box = LatticeBox(1, 3)
    assert holmgren_bound(BlockOperator.identity(box, 2)) == pytest.approx(1.0)
    blocks = np.zeros((3, 3, 2, 2), dtype=complex)
    blocks[0, 2] = (0.7 - 0.2j) * np.eye(2)
    assert holmgren_bound(BlockOperator.from_blocks(box, blocks)) == pytest.approx(abs(0.7 - 0.2j))
    H = random_operator(rng, box, N=1, hermitian=True)
    assert holmgren_bound(H) >= np.max(np.abs(np.linalg.eigvalsh(H.matrix))) - 1e-12


def test_holmgren_dominates_norm_on_100_operators(rng):
    box = LatticeBox(2, 3)
    for _ in range(100):
        A = random_operator(rng, box, N=2, decay=rng.uniform(0, 1))
        assert holmgren_bound(A) >= operator_norm(A) - 1e-9


def test_operator_norm_examples():
    box = LatticeBox(1, 3)
    assert operator_norm(BlockOperator.zeros(box)) == 0.0
    D = BlockOperator(LatticeBox(1, 1), 2, np.diag([-1.0, 2.0]), hermitian=True)
    assert operator_norm(D) == pytest.approx(2.0)
    H = build_hamiltonian(chain(101))
    assert abs(operator_norm(H) - 2 * np.cos(np.pi / 102)) < 1e-6


def test_nc_derivative_examples(rng):
    box = LatticeBox(2, 3)
    sharp = SwitchFunction.sharp()
    diag = BlockOperator(box, 1, np.diag(rng.normal(size=9)))
    assert not np.any(nc_derivative(diag, 1, sharp).matrix)
    x, y = box.index((-1, 0)), box.index((0, 0))
    m = np.zeros((9, 9), dtype=complex)
    m[x, y] = 1.0
    out = nc_derivative(BlockOperator(box, 1, m), 1, sharp).matrix
    assert out[x, y] == pytest.approx(1j)
    assert np.count_nonzero(out) == 1


@pytest.mark.parametrize("name", ["sharp", "tanh"])
def test_nc_derivative_matches_dense_commutator(rng, name):
    box = LatticeBox(2, 5)
    sw = SwitchFunction.named(name)
    A = random_operator(rng, box, N=2)
    for axis in (1, 2):
        lam = np.diag(np.repeat(sw(box.coords[:, axis - 1]), 2)).astype(complex)
        dense = -1j * (lam @ A.matrix - A.matrix @ lam)
        np.testing.assert_allclose(nc_derivative(A, axis, sw).matrix, dense, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["sharp", "tanh"]), st.sampled_from([1, 2]))
def test_nc_derivative_is_a_derivation(seed, name, axis):
    rng = np.random.default_rng(seed)
    box = LatticeBox(2, 3)
    sw = SwitchFunction.named(name)
    A, B = random_operator(rng, box, N=2), random_operator(rng, box, N=2)
    lhs = nc_derivative(A @ B, axis, sw).matrix
    rhs = (nc_derivative(A, axis, sw) @ B + A @ nc_derivative(B, axis, sw)).matrix
    assert np.max(np.abs(lhs - rhs)) < 1e-10


def test_switch_functions():
    sharp, smooth = SwitchFunction.sharp(), SwitchFunction.tanh()
    np.testing.assert_array_equal(sharp(np.array([-5, -1, 0, 1, 7])), [0, 0, 1, 1, 1])
    assert smooth(-20) == 0.0 and smooth(20) == 1.0 and smooth(0) == pytest.approx(0.5)
    assert smooth(100) == 1.0 and smooth(-100) == 0.0
    assert smooth.total_variation == pytest.approx(1.0)
    with pytest.raises(ModelError):
        SwitchFunction(1, (0.1, 0.5, 1.0))


def test_trace_norm_estimate(rng):
    box = LatticeBox(1, 1)
    P = BlockOperator(box, 2, np.diag([1.0, 0.0]))
    assert trace_norm_estimate(P, P) == pytest.approx(1.0)
    assert trace_norm(P @ P) == pytest.approx(1.0)
    four = LatticeBox(1, 3)
    A, B = random_operator(rng, four, N=2), random_operator(rng, four, N=2)
    assert trace_norm_estimate(A, BlockOperator.zeros(four, 2)) == 0.0
    assert trace_norm_estimate(A, B) >= trace_norm(A @ B) - 1e-12


def test_onsite_and_roundtrip(tmp_path):
    box = LatticeBox(1, 3)
    V = onsite_operator(box, 1, np.array([0.1, -0.2, 0.3]))
    np.testing.assert_array_equal(np.diag(V.matrix).real, [0.1, -0.2, 0.3])
    H = build_hamiltonian(hofstadter(L=5, W=1.0, seed=2))
    save_operator(tmp_path / "h.npz", H)
    H2 = load_operator(tmp_path / "h.npz")
    assert H2.box == H.box and H2.N == H.N and H2.hermitian
    np.testing.assert_array_equal(H2.matrix, H.matrix)


def test_operators_are_read_only(rng):
    A = random_operator(rng, LatticeBox(1, 3))
    with pytest.raises(ValueError):
        A.matrix[0, 0] = 1.0
