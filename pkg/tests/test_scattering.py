import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arrayqi.errors import FitError, NumericalWarning, SingularMatrixError
from arrayqi.geometry import DisorderSpec, GaussianBeam, apply_disorder, build_2d, build_3d, mode_overlap_eta
from arrayqi.greens import (KERNEL_SCALE, LatticeParams, collective_rate_2d, collective_shift_2d,
                            phase_matched_shift, projected_green)
from arrayqi.model1d import InterfaceParams, reflection_amplitude
from arrayqi.scattering import (InteractionMatrix, PlaneGrid, SpectrumScan, SteadyStateSolution, build_matrix,
                                drive_vector, eigenmodes, fit_lorentzian, lorentzian_amplitude,
                                multilayer_effective_solve, paraxial_reflection, project_onto_mode,
                                projection_vector, reflectivity_spectrum, scattered_field, solve_steady_state)

LAT = LatticeParams(0.6)
G0 = collective_rate_2d(LAT)
D0 = collective_shift_2d(LAT).delta0


def scan_around(center, half=5.0, n=81):
    return np.linspace(center - half * G0, center + half * G0, n)


@pytest.fixture(scope="module")
def ordered30():
    arr = build_2d(LAT, 30)
    beam = GaussianBeam(0.25 * arr.side_length)
    return arr, beam, reflectivity_spectrum(arr, beam, scan_around(D0))


@pytest.fixture(scope="module")
def eig30():
    arr = build_2d(LAT, 30)
    beam = GaussianBeam(10 * LAT.a)
    x, y, _ = arr.positions.T
    u = beam.profile(x, y)
    return arr, eigenmodes(build_matrix(arr), target=u, pattern=u * arr.parity)


def pair(d=0.4):
    from arrayqi.geometry import ArrayRealization
    pos = np.array([[-d / 2, 0, 0], [d / 2, 0, 0]])
    return ArrayRealization(pos, np.zeros(2), np.zeros(2), np.zeros(2, int))


def test_single_atom_matrix():
    M = build_matrix(build_2d(LAT, 1), 0.3)
    assert M.dimension == 1 and M.matrix[0, 0] == pytest.approx(0.5 - 0.3j)


def test_pair_matrix_eigensystem():
    arr = pair()
    M = build_matrix(arr, 0.2)
    d12 = -1j * KERNEL_SCALE * projected_green([0.4, 0, 0], arr.orientation)
    lam = np.sort_complex(np.linalg.eigvals(M.matrix))
    assert np.allclose(lam, np.sort_complex(np.array([0.5 - 0.2j + d12, 0.5 - 0.2j - d12])))
    modes = eigenmodes(M)
    for v in modes.vectors.T:
        assert abs(abs(v[0]) - 1 / np.sqrt(2)) < 1e-12 and abs(abs(v[1]) - 1 / np.sqrt(2)) < 1e-12


def test_disordered_matrix_symmetric():
    arr = apply_disorder(build_2d(LAT, 30), DisorderSpec(0.05, base_seed=2), 0)
    K = build_matrix(arr, 0.1).matrix
    assert np.array_equal(K, K.T)


def test_matrix_carries_detunings_and_rates():
    arr = build_2d(LAT, 2).with_updates(detunings=np.array([0.1, -0.1, 0.2, 0.0]),
                                        noncollective_rates=np.array([0.0, 0.2, 0.0, 0.4]))
    M = build_matrix(arr, 0.3).matrix
    assert np.allclose(np.diag(M), 0.5 + arr.noncollective_rates / 2 - 1j * (0.3 + arr.detunings))


def test_drive_vector():
    arr = build_2d(LAT, 10)
    beam = GaussianBeam(2.0)
    d = drive_vector(arr, beam)
    assert np.allclose(np.angle(d), 0.0)
    from arrayqi.geometry import ArrayRealization
    two = ArrayRealization(np.array([[0, 0, 0.0], [2.0, 0, 0.0]]), np.zeros(2), np.zeros(2), np.zeros(2, int))
    v = drive_vector(two, beam)
    assert v[1] / v[0] == pytest.approx(np.exp(-1))
    arr3 = build_3d(LatticeParams(0.6, 0.3), 3, 3)
    assert np.allclose(drive_vector(arr3, beam, -1), np.conj(drive_vector(arr3, beam, 1)))


def test_drive_small_waist_warns():
    with pytest.warns(NumericalWarning):
        drive_vector(build_2d(LAT, 4), GaussianBeam(1.0))


def test_single_atom_steady_state():
    sol = solve_steady_state(build_matrix(build_2d(LAT, 1)), [1.0])
    assert sol.dipoles[0] == pytest.approx(2j)


def test_pair_symmetric_drive():
    sol = solve_steady_state(build_matrix(pair(), 0.1), [1.0, 1.0])
    assert sol.dipoles[0] == pytest.approx(sol.dipoles[1], abs=1e-14)


def test_large_array_residual():
    arr = build_2d(LAT, 30)
    sol = solve_steady_state(build_matrix(arr, D0), drive_vector(arr, GaussianBeam(4.5)))
    assert sol.residual_norm < 1e-10


def test_singular_matrix_reports():
    with pytest.raises(SingularMatrixError, match="cond"):
        solve_steady_state(InteractionMatrix(np.zeros((3, 3), complex), 0.0), np.ones(3))


def test_zero_dipoles_zero_field():
    arr = build_2d(LAT, 3)
    sol = SteadyStateSolution(np.zeros(9, complex), np.zeros(9, complex), 0.0)
    assert np.all(scattered_field(sol, arr, 2.0, PlaneGrid(1.0)) == 0)


def test_single_dipole_field():
    arr = build_2d(LAT, 1)
    sol = SteadyStateSolution(np.array([0.7 - 0.2j]), np.ones(1, complex), 0.0)
    grid = PlaneGrid(3.0, 0.25)
    X, Y = grid.mesh()
    f = scattered_field(sol, arr, 4.0, grid)
    ref = KERNEL_SCALE * (0.7 - 0.2j) * projected_green(np.stack([X, Y, np.full_like(X, 4.0)], -1), arr.orientation)
    assert np.max(np.abs(f - ref)) < 1e-12


def test_planar_mirror_symmetry():
    arr = apply_disorder(build_2d(LAT, 5), DisorderSpec(0.05, axes="xy"), 0)
    sol = solve_steady_state(build_matrix(arr), drive_vector(arr, GaussianBeam(2.0)))
    grid = PlaneGrid(2.0)
    assert np.allclose(scattered_field(sol, arr, 3.0, grid), scattered_field(sol, arr, -3.0, grid), atol=1e-14)


def test_coarse_grid_warns():
    arr = build_2d(LAT, 1)
    sol = SteadyStateSolution(np.ones(1, complex), np.ones(1, complex), 0.0)
    with pytest.warns(NumericalWarning):
        scattered_field(sol, arr, 2.0, PlaneGrid(2.0, 0.5))


def test_projection_normalization_and_orthogonality():
    beam = GaussianBeam(2.0)
    grid = PlaneGrid.for_beam(beam, 4.0, 0.125)
    X, Y = grid.mesh()
    assert project_onto_mode(beam.profile(X, Y), grid, beam, 0.0) == pytest.approx(1.0, abs=1e-8)
    odd = X * beam.profile(X, Y)
    assert abs(project_onto_mode(odd, grid, beam, 0.0)) < 1e-8


def test_projection_methods_agree():
    arr = apply_disorder(build_2d(LAT, 8), DisorderSpec(0.05), 1)
    beam = GaussianBeam(3.0)
    spec = projection_vector(arr, beam, -5.0, method="spectral")
    plane = projection_vector(arr, beam, -5.0, grid=PlaneGrid.for_beam(beam, 4.5, 0.125), method="plane")
    assert np.max(np.abs(spec - plane)) < 1e-5 * np.max(np.abs(spec))


def test_projection_vector_matches_field_projection():
    arr = apply_disorder(build_2d(LAT, 4), DisorderSpec(0.05), 3)
    beam = GaussianBeam(1.5)
    grid = PlaneGrid.for_beam(beam)
    sol = solve_steady_state(build_matrix(arr, 0.2), drive_vector(arr, GaussianBeam(2.0)))
    direct = project_onto_mode(scattered_field(sol, arr, -5.0, grid), grid, beam, -5.0)
    assert projection_vector(arr, beam, -5.0, grid) @ sol.dipoles == pytest.approx(direct, rel=1e-12)


def test_projection_plane_outside_slab():
    with pytest.raises(ValueError):
        projection_vector(build_3d(LatticeParams(0.6, 1.0), 2, 4), GaussianBeam(3.0), 2.0)


def test_paraxial_cross_check():
    arr = build_2d(LAT, 20)
    beam = GaussianBeam(3.0)
    sol = solve_steady_state(build_matrix(arr, D0), drive_vector(arr, beam))
    r = projection_vector(arr, beam, -5.0) @ sol.dipoles / np.sqrt(beam.mode_area)
    assert abs(r - paraxial_reflection(arr, beam, sol.dipoles)) < 0.02 * abs(r)


def test_lorentzian_self_fit():
    d = np.linspace(-3, 4, 81)
    p = InterfaceParams(0.8, 0.15, 0.4)
    fit = fit_lorentzian(d, np.abs(reflection_amplitude(p, d)))
    assert fit.r0 == pytest.approx(0.8 / 0.95, abs=1e-6)
    assert fit.center == pytest.approx(0.4, abs=1e-6)
    assert fit.width == pytest.approx(0.95, abs=1e-6)


@given(st.floats(0.05, 1.0), st.floats(-1, 1), st.floats(0.1, 2))
def test_lorentzian_roundtrip(r0, c, w):
    d = np.linspace(c - 3 * w, c + 3 * w, 61)
    fit = fit_lorentzian(d, lorentzian_amplitude(d, r0, c, w))
    assert abs(fit.r0 - r0) < 1e-6 and abs(fit.center - c) < 1e-6 * max(w, 1) and abs(fit.width - w) < 1e-6


def test_spectrum_grid_must_increase():
    with pytest.raises(ValueError):
        SpectrumScan(np.array([0.0, 0.0, 1.0]), np.zeros(3), np.ones(3))


def test_fit_rejects_boundary_peak():
    arr = build_2d(LAT, 8)
    with pytest.raises(FitError):
        reflectivity_spectrum(arr, GaussianBeam(3.0), np.linspace(D0 + 1.0, D0 + 4.0, 31))


def test_fit_rejects_weak_peak():
    arr = build_2d(LAT, 8)
    with pytest.raises(FitError):
        reflectivity_spectrum(arr, GaussianBeam(3.0), np.linspace(D0 + 200, D0 + 210, 31))


@settings(max_examples=5)
@given(st.integers(0, 10**6), st.sampled_from([0.02, 0.05, 0.1]))
def test_energy_bound_disordered(seed, sigma):
    arr = apply_disorder(build_2d(LAT, 10), DisorderSpec(sigma, base_seed=seed), 0)
    s = reflectivity_spectrum(arr, GaussianBeam(3.0), scan_around(D0, 5, 41), fit=False)
    assert np.all(s.R + s.T <= 1 + 1e-6) and np.all(s.R >= 0) and np.all(s.T <= 1 + 1e-6)


def test_ordered_energy_balance(ordered30):
    arr, beam, s = ordered30
    assert np.all(s.R + s.T <= 1 + 1e-6)
    i = int(np.argmax(s.R))
    assert s.R[i] + s.T[i] == pytest.approx(1.0, abs=0.02)


def test_ordered_mapping_identity(ordered30):
    arr, beam, s = ordered30
    eta = mode_overlap_eta(beam, arr.side_length)
    C = eta / (1 - eta)
    assert abs(s.fit.r0 - C / (1 + C)) < 0.01
    assert s.fit.inverse_cooperativity < 0.02 / 100


def test_ordered_resonance_near_lattice_shift(ordered30):
    assert abs(ordered30[2].fit.delta_res - D0) < 0.05 * G0


def test_resonance_40_matches_lattice_shift():
    arr = build_2d(LAT, 40)
    s = reflectivity_spectrum(arr, GaussianBeam(6.0), scan_around(D0, 3, 41))
    assert abs(s.fit.delta_res - D0) < 0.05 * G0


@pytest.mark.parametrize("seed", [0, 1])
def test_reciprocity_planar(seed):
    arr = apply_disorder(build_2d(LAT, 10), DisorderSpec(0.05, base_seed=seed, axes="xy"), 0)
    beam = GaussianBeam(3.0)
    scan = scan_around(D0, 3, 21)
    up = reflectivity_spectrum(arr, beam, scan, direction=1, fit=False)
    down = reflectivity_spectrum(arr, beam, scan, direction=-1, fit=False)
    assert np.max(np.abs(up.R - down.R)) < 1e-8 and np.max(np.abs(up.T - down.T)) < 1e-8


def test_spectrum_outputs(tmp_path):
    arr = build_2d(LAT, 8)
    s = reflectivity_spectrum(arr, GaussianBeam(3.0), scan_around(D0, 5, 41))
    s.write_csv(tmp_path / "s.csv", "config_hash=abc")
    s.write_json(tmp_path / "s.json", {"config_hash": "abc"})
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1] == "delta_p,R,T,L" and len(lines) == 43
    doc = json.loads((tmp_path / "s.json").read_text())
    assert doc["config_hash"] == "abc" and doc["fit"]["C"] == pytest.approx(s.fit.cooperativity)


def test_eigen_orthogonality_completeness():
    arr = apply_disorder(build_2d(LAT, 10), DisorderSpec(0.05, base_seed=4), 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", NumericalWarning)
        modes = eigenmodes(build_matrix(arr))
    V = modes.vectors
    assert np.max(np.abs(V.T @ V - np.eye(len(V)))) < 1e-8
    rng = np.random.default_rng(0)
    full = V @ V.T
    for n, m in rng.integers(0, len(V), (10, 2)):
        assert abs(full[n, m] - (n == m)) < 1e-6
    for _ in range(10):
        x = rng.normal(size=len(V)) + 1j * rng.normal(size=len(V))
        assert np.linalg.norm(V @ (V.T @ x) - x) < 1e-6 * np.linalg.norm(x)


def test_m_mode_subradiant(eig30):
    arr, modes = eig30
    i = int(np.argmax(modes.pattern_overlaps))
    assert modes.pattern_overlaps[i] > 0.9 and modes.decay_rates[i] < 0.01


def test_bright_mode_rate(eig30):
    arr, modes = eig30
    i = int(np.argmax(modes.overlaps))
    assert modes.decay_rates[i] == pytest.approx(G0, rel=0.1)


def test_multilayer_single_layer_is_lorentzian():
    arr = build_3d(LAT, 2, 1)
    grid = np.linspace(-3 * G0, 3 * G0, 61)
    s = multilayer_effective_solve(arr, None, grid, eta=0.9, fit=False)
    ref = reflection_amplitude(InterfaceParams(0.9 * G0, 0.1 * G0), grid)
    assert np.allclose(s.r, ref, atol=1e-12)


def test_multilayer_single_layer_beam_eta():
    arr = build_3d(LAT, 30, 1)
    beam = GaussianBeam(4.8)
    s = multilayer_effective_solve(arr, beam, np.linspace(-3 * G0, 3 * G0, 81))
    assert s.fit.r0 == pytest.approx(mode_overlap_eta(beam, arr.side_length), abs=1e-8)


def test_multilayer_enhancement():
    lat = LatticeParams(0.6, 1.0)
    g0 = collective_rate_2d(lat)
    s = multilayer_effective_solve(build_3d(lat, 2, 10), None, np.linspace(-3 * g0, 3 * g0, 81),
                                   gamma_s=0.05 * g0, eta=1.0)
    assert s.fit.cooperativity == pytest.approx(200, rel=0.1)


def test_multilayer_spotlight_shift():
    lat = LatticeParams(0.68, 1.0)
    g0 = collective_rate_2d(lat)
    s = multilayer_effective_solve(build_3d(lat, 2, 10), None, np.linspace(-3 * g0, 3 * g0, 81),
                                   gamma_s=0.05 * g0, eta=1.0)
    assert abs(s.fit.delta_res - phase_matched_shift(lat, 10)) < 0.05 * g0
