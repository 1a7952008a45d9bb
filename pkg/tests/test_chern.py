import numpy as np
import pytest

from mobgap.chern import (bloch_chern_oracle, chern_density, chern_number, chern_of_hamiltonian,
                          count_bands_below, fermi_energy_scan, weak_locality_profile)
from mobgap.lattice import (BlockOperator, Hopping, LatticeBox, ModelError, ModelSpec, SwitchFunction,
                            build_hamiltonian, nc_derivative)
from mobgap.localization import fit_decay
from mobgap.spectral import EnergyWindow, diagonalize, fermi_projection

from conftest import hofstadter


def qwz(L, m, W=0.0, seed=0):
    """Two-orbital Chern insulator: on-site ``m sz``, bonds ``(sz - i s_axis)/2``."""
    hops = (
        Hopping((0, 0), m, 0, 0), Hopping((0, 0), -m, 1, 1),
        Hopping((1, 0), 0.5, 0, 0), Hopping((1, 0), -0.5, 1, 1),
        Hopping((1, 0), -0.5j, 0, 1), Hopping((1, 0), -0.5j, 1, 0),
        Hopping((0, 1), 0.5, 0, 0), Hopping((0, 1), -0.5, 1, 1),
        Hopping((0, 1), -0.5, 0, 1), Hopping((0, 1), 0.5, 1, 0),
    )
    return ModelSpec(kind="custom", d=2, L=L, N=2, disorder_w=W, seed=seed, hoppings=hops)


def test_trivial_projections():
    box = LatticeBox(2, 7)
    for P in (BlockOperator.zeros(box), BlockOperator.identity(box)):
        res = chern_number(P)
        assert res.raw == 0.0 and res.rounded == 0 and res.accepted


def test_fermi_energy_outside_spectrum(hof21):
    H, dec = hof21
    assert chern_of_hamiltonian(H, -10.0, dec=dec).raw == 0.0
    assert abs(chern_of_hamiltonian(H, 10.0, dec=dec).raw) < 1e-9


def test_hofstadter_third_matches_oracle(hof21):
    H, dec = hof21
    oracle = bloch_chern_oracle(hofstadter(shift=0.0), 1)
    res = chern_of_hamiltonian(H, 0.0, dec=dec)
    assert abs(oracle) == 1
    assert abs(res.raw - oracle) < 0.05
    assert res.status == "accepted" and res.switch_id == "sharp"


def test_two_orbital_model_matches_oracle():
    spec = qwz(21, -1.0)
    oracle = bloch_chern_oracle(spec, 1)
    res = chern_of_hamiltonian(build_hamiltonian(spec), 0.0)
    assert abs(oracle) == 1
    assert abs(res.raw - oracle) < 0.05
    assert bloch_chern_oracle(qwz(5, 3.0), 1) == 0


def test_oracle_values_and_resolution():
    assert bloch_chern_oracle(ModelSpec(kind="hofstadter", d=2, L=5, flux_p=0, flux_q=1), 1) == 0
    assert [bloch_chern_oracle(hofstadter(q=3, shift=0), n) for n in (1, 2)] == [-1, 1]
    fifth = hofstadter(q=5, shift=0)
    for n in (1, 2):
        assert bloch_chern_oracle(fifth, n, k_grid=12) == bloch_chern_oracle(fifth, n, k_grid=24)
    assert bloch_chern_oracle(fifth, 1) == -1


def test_oracle_preconditions():
    with pytest.raises(ModelError):
        bloch_chern_oracle(hofstadter(W=0.5), 1)
    with pytest.raises(ModelError):
        bloch_chern_oracle(hofstadter(), 1, k_grid=8)
    with pytest.raises(ModelError, match="touch"):
        bloch_chern_oracle(hofstadter(q=4, shift=0), 2)


def test_count_bands_below():
    spec = hofstadter(shift=0.0)
    assert count_bands_below(spec, -1.366) == 1
    assert count_bands_below(spec, 1.366) == 2
    with pytest.raises(ModelError):
        count_bands_below(spec, -2.3)


def test_scan_inside_gap_is_constant(hof21):
    H, dec = hof21
    ev = dec.eigenvalues
    k = int(np.argmin(np.abs(ev)))
    lo, hi = sorted((ev[k], ev[k + 1] if ev[k] < 0 else ev[k - 1]))
    pad = 0.1 * (hi - lo)
    scan = fermi_energy_scan(H, EnergyWindow(lo + pad, hi - pad), 5, dec=dec)
    assert len(scan.results) == 5 and scan.spread < 1e-9


def test_scan_skips_collisions():
    H = build_hamiltonian(hofstadter(L=7))
    dec = diagonalize(H)
    e = float(dec.eigenvalues[20])
    scan = fermi_energy_scan(H, EnergyWindow(e, e + 1.0), 3, dec=dec)
    assert len(scan.skipped) == 1 and scan.skipped[0][0] == e
    assert len(scan.results) == 2


def test_disorder_keeps_the_integer(hof21):
    clean = chern_of_hamiltonian(hof21[0], 0.0, dec=hof21[1])
    dirty = chern_of_hamiltonian(build_hamiltonian(hofstadter(W=0.5, seed=3)), 0.0)
    assert dirty.accepted and dirty.rounded == clean.rounded


def test_switch_independence_at_31():
    H = build_hamiltonian(hofstadter(L=31))
    dec = diagonalize(H)
    sharp = chern_of_hamiltonian(H, 0.0, SwitchFunction.sharp(), dec=dec)
    smooth = chern_of_hamiltonian(H, 0.0, SwitchFunction.tanh(), dec=dec)
    assert sharp.rounded == smooth.rounded
    assert abs(sharp.raw - smooth.raw) < 0.05


def test_integrality_improves_with_size(hof21):
    r21 = chern_of_hamiltonian(hof21[0], 0.0, dec=hof21[1]).residual
    r31 = chern_of_hamiltonian(build_hamiltonian(hofstadter(L=31)), 0.0).residual
    assert r31 <= r21 + 0.01


def test_weak_locality_profile(hof21):
    H, dec = hof21
    P = fermi_projection(dec, 0.0)
    ys, zs, v = weak_locality_profile(P, reference=[H.box.center])
    fit = fit_decay(H.box.distances[ys, zs], v, kind="polynomial", floor=1e-14 * v.max())
    assert fit.alpha >= 2


def test_trace_cyclicity():
    P = fermi_projection(diagonalize(build_hamiltonian(hofstadter(L=9))), 0.0)
    sw = SwitchFunction.tanh()
    p, p1, p2 = (P.matrix, nc_derivative(P, 1, sw).matrix, nc_derivative(P, 2, sw).matrix)
    a = np.trace(p @ p1 @ p2 - p @ p2 @ p1)
    b = np.trace(p2 @ p @ p1 - p1 @ p @ p2)
    assert abs(a - b) < 1e-9
    assert abs(2j * np.pi * a - chern_density(P, sw).sum()) < 1e-9


def test_chern_number_preconditions():
    with pytest.raises(ModelError, match="d = 2"):
        chern_number(BlockOperator.zeros(LatticeBox(1, 5)))
    half = BlockOperator(LatticeBox(2, 3), 1, 0.5 * np.eye(9))
    with pytest.raises(ModelError, match="projector"):
        chern_number(half)


def test_undecided_reported_not_rounded():
    res = chern_of_hamiltonian(build_hamiltonian(hofstadter(L=11)), 0.0)
    assert not res.accepted and res.status == "undecided"
    assert res.rounded == round(res.raw)
