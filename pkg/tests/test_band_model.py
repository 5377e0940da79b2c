import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import constants

from latticegates.band_model import (
    LatticeSpec,
    band_scan,
    build_hamiltonian,
    charge_qubit_map,
    control_operators,
    dispersion,
    free_oscillation_period,
    planewave_cos2x,
    planewave_sin2x,
    recoil_energy,
    recoil_units,
    reduce_quasimomentum,
    solve_bands,
)

from oracles import (
    floquet_band_energies,
    mathieu_band_energies,
    realspace_bands,
)

quasimomenta = st.floats(min_value=-0.999, max_value=1.0, allow_nan=False)
depths = st.floats(min_value=0.0, max_value=120.0, allow_nan=False)


class TestLatticeSpec:
    def test_defaults(self):
        spec = LatticeSpec(13)
        assert spec.n_planewaves == 16 and spec.n_bands == 6 and spec.dim == 33

    @pytest.mark.parametrize("kwargs", [
        {"r": -1.0},
        {"r": float("nan")},
        {"r": 5, "n_bands": 1},
        {"r": 5, "n_planewaves": 3, "n_bands": 4},
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LatticeSpec(**kwargs)


class TestHamiltonian:
    def test_free_particle(self):
        h = build_hamiltonian(LatticeSpec(0.0, n_planewaves=2, n_bands=2), 0.0)
        np.testing.assert_array_equal(np.diag(h), [16, 4, 0, 4, 16])
        assert np.count_nonzero(h - np.diag(np.diag(h))) == 0

    def test_n1_free_particle(self):
        # n_planewaves=1 is below the default band count, so keep two bands
        h = build_hamiltonian(LatticeSpec(0.0, n_planewaves=2, n_bands=2), 0.0)[1:4, 1:4]
        np.testing.assert_array_equal(h, np.diag([4.0, 0.0, 4.0]))

    def test_r4_substitution(self):
        h = build_hamiltonian(LatticeSpec(4.0, n_planewaves=2, n_bands=2), 0.0)[1:4, 1:4]
        expected = np.array([[6.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 6.0]])
        np.testing.assert_array_equal(h, expected)

    @pytest.mark.parametrize("k", [-1.0, -1.5, 1.0000001, 3.0])
    def test_rejects_k_outside_zone(self, k):
        with pytest.raises(ValueError):
            build_hamiltonian(LatticeSpec(2.0), k)

    def test_r13_k03_matches_floquet_oracle(self):
        energies = solve_bands(LatticeSpec(13.0), 0.3).energies
        brackets = [(e - 0.3, e + 0.3) for e in energies[:4]]
        np.testing.assert_allclose(energies[:4], floquet_band_energies(13.0, 0.3, brackets),
                                   atol=1e-9)


class TestSolveBands:
    def test_free_particle_half_zone(self):
        e = solve_bands(LatticeSpec(0.0), 0.5).energies
        np.testing.assert_allclose(e[:3], [0.25, 2.25, 6.25], atol=1e-13)

    def test_free_particle_degenerate_pair(self):
        e = solve_bands(LatticeSpec(0.0), 0.0).energies
        np.testing.assert_allclose(e[:3], [0.0, 4.0, 4.0], atol=1e-13)

    @pytest.mark.parametrize("r", [2.0, 12.0, 13.0, 17.0, 30.0])
    @pytest.mark.parametrize("edge", [False, True])
    def test_mathieu_characteristic_values(self, r, edge):
        bands = solve_bands(LatticeSpec(r), 1.0 if edge else 0.0)
        np.testing.assert_allclose(bands.energies, mathieu_band_energies(r, edge, 6),
                                   rtol=0, atol=1e-8)

    @given(k=quasimomenta)
    @settings(max_examples=40, deadline=None)
    def test_free_particle_limit(self, k):
        n = np.arange(-16, 17)
        expected = np.sort((2 * n - k) ** 2)[:6]
        got = solve_bands(LatticeSpec(0.0), k).energies
        np.testing.assert_allclose(got, expected, rtol=4 * np.finfo(float).eps, atol=1e-14)

    @given(r=depths, k=quasimomenta)
    @settings(max_examples=60, deadline=None)
    def test_time_reversal_symmetry(self, r, k):
        spec = LatticeSpec(r)
        minus = -k if k < 1.0 else 1.0
        diff = solve_bands(spec, k).energies - solve_bands(spec, minus).energies
        assert np.max(np.abs(diff)) < 1e-10

    @given(r=depths, k=quasimomenta)
    @settings(max_examples=40, deadline=None)
    def test_basis_convergence(self, r, k):
        coarse = solve_bands(LatticeSpec(r), k).energies
        fine = solve_bands(LatticeSpec(r, n_planewaves=24), k).energies
        assert np.max(np.abs(coarse - fine)) < 1e-10

    @given(r=depths, k=quasimomenta)
    @settings(max_examples=40, deadline=None)
    def test_orthonormal_and_ordered(self, r, k):
        b = solve_bands(LatticeSpec(r), k)
        w = b.bloch_vectors
        assert np.max(np.abs(w.conj().T @ w - np.eye(6))) < 1e-10
        assert np.all(np.diff(b.energies) >= -1e-12)
        if r > 0.5 and abs(k) not in (0.0, 1.0):
            assert np.all(np.diff(b.energies) > 0)

    @pytest.mark.parametrize("gauge", ["largest", "smooth"])
    def test_phase_conventions_are_deterministic(self, gauge):
        a = solve_bands(LatticeSpec(17.0), 0.37, gauge=gauge).bloch_vectors
        b = solve_bands(LatticeSpec(17.0), 0.37, gauge=gauge).bloch_vectors
        np.testing.assert_array_equal(a, b)

    def test_largest_component_positive(self):
        w = solve_bands(LatticeSpec(5.0), 0.2, gauge="largest").bloch_vectors
        lead = np.argmax(np.abs(w), axis=0)
        assert np.all(w[lead, np.arange(w.shape[1])].real > 0)

    def test_smooth_gauge_overlaps_k0_positively(self):
        spec = LatticeSpec(12.0)
        ref = solve_bands(spec, 0.0).bloch_vectors
        for k in np.linspace(-0.95, 1.0, 40):
            ov = np.sum(ref * solve_bands(spec, k).bloch_vectors, axis=0)
            assert np.all(ov[:2] > 0.5)

    def test_gauges_differ_by_signs_only(self):
        spec = LatticeSpec(12.0)
        a = solve_bands(spec, 0.8, gauge="largest").bloch_vectors
        b = solve_bands(spec, 0.8).bloch_vectors
        ratio = np.sum(a.conj() * b, axis=0)
        np.testing.assert_allclose(np.abs(ratio), 1.0, atol=1e-12)


class TestControlOperators:
    def test_planewave_cos(self):
        c = planewave_cos2x(3)
        np.testing.assert_array_equal(c, [[0, 0.5, 0], [0.5, 0, 0.5], [0, 0.5, 0]])

    def test_planewave_sin_matches_fourier_series(self):
        # sin 2x applied to exp(i 2 n x) sampled on a grid
        s = planewave_sin2x(5)
        x = np.linspace(0, np.pi, 17, endpoint=False)
        n = np.arange(-2, 3)
        basis = np.exp(2j * np.outer(x, n))
        coeffs = np.array([0, 0.3, 1.0, -0.2j, 0])
        direct = np.sin(2 * x) * (basis @ coeffs)
        np.testing.assert_allclose(basis @ (s @ coeffs), direct, atol=1e-14)

    @given(r=depths, k=quasimomenta)
    @settings(max_examples=30, deadline=None)
    def test_band_operators_hermitian(self, r, k):
        spec = LatticeSpec(r)
        ops = control_operators(spec, solve_bands(spec, k))
        for op in (ops.cos2x_band, ops.sin2x_band):
            assert op.shape == (6, 6)
            assert np.max(np.abs(op - op.conj().T)) < 1e-12

    def test_dimension_mismatch(self):
        bands = solve_bands(LatticeSpec(3.0, n_planewaves=10), 0.1)
        with pytest.raises(ValueError):
            control_operators(LatticeSpec(3.0), bands)

    def test_matrix_element_matches_planewave_quadrature(self):
        spec = LatticeSpec(17.0)
        bands = solve_bands(spec, 0.0)
        element = control_operators(spec, bands).sin2x_band[0, 1]
        x = np.linspace(0, np.pi, 400, endpoint=False)
        basis = np.exp(2j * np.outer(x, spec.orders))
        u0 = basis @ bands.bloch_vectors[:, 0]
        u1 = basis @ bands.bloch_vectors[:, 1]
        direct = np.mean(np.conj(u0) * np.sin(2 * x) * u1)
        assert abs(direct - element) < 1e-12 * abs(element)

    def test_matrix_element_matches_realspace_solver(self):
        x, _, psi = realspace_bands(17.0)
        direct = abs(np.mean(psi[:, 0] * np.sin(2 * x) * psi[:, 1]))
        spec = LatticeSpec(17.0)
        element = abs(control_operators(spec, solve_bands(spec, 0.0)).sin2x_band[0, 1])
        assert abs(direct / element - 1) < 1e-6


class TestDispersion:
    @pytest.mark.parametrize("r, expected", [(17.0, 0.054), (12.0, 0.132)])
    def test_reported_depths(self, r, expected):
        assert dispersion(LatticeSpec(r)).d_value == pytest.approx(expected, abs=1e-3)

    def test_deep_lattice_nearly_dispersionless(self):
        assert dispersion(LatticeSpec(110.0)).d_value <= 2e-4

    def test_definition(self):
        rep = dispersion(LatticeSpec(13.0))
        assert rep.d_value == 1 - rep.gap_edge / rep.gap_center
        e0 = mathieu_band_energies(13.0, False, 2)
        e1 = mathieu_band_energies(13.0, True, 2)
        assert rep.gap_center == pytest.approx(e0[1] - e0[0], abs=1e-8)
        assert rep.gap_edge == pytest.approx(e1[1] - e1[0], abs=1e-8)

    def test_strictly_decreasing_in_depth(self):
        values = [dispersion(LatticeSpec(r)).d_value for r in (2, 12, 13, 17, 30, 110)]
        assert np.all(np.diff(values) < 0)
        assert all(0 <= v < 1 for v in values)

    def test_free_lattice_rejected(self):
        with pytest.raises(ValueError):
            dispersion(LatticeSpec(0.0))

    def test_json_shape(self):
        data = json.loads(json.dumps(dispersion(LatticeSpec(17.0)).to_dict()))
        assert set(data) == {"r", "D", "gap_center", "gap_edge"}


class TestFreeOscillation:
    def test_harmonic_limit(self):
        # H ~ p^2 + r x^2 near a deep well: level spacing 2 sqrt(r) minus O(1)
        prev = None
        for r in (100.0, 1000.0, 10000.0):
            period = free_oscillation_period(LatticeSpec(r, n_planewaves=48))
            ratio = period / (2 * np.pi / (2 * np.sqrt(r)))
            assert ratio > 1
            if prev is not None:
                assert ratio - 1 < prev - 1
            prev = ratio
        assert prev - 1 < 6e-3

    def test_r13_matches_mathieu_gap(self):
        e = mathieu_band_energies(13.0, False, 2)
        assert free_oscillation_period(LatticeSpec(13.0)) == pytest.approx(
            2 * np.pi / (e[1] - e[0]), rel=1e-9)

    def test_free_lattice_rejected(self):
        with pytest.raises(ValueError):
            free_oscillation_period(LatticeSpec(0.0))


class TestChargeQubit:
    def test_examples(self):
        assert charge_qubit_map(6.0, 1.0, 0.25) == (12.0, 0.5)
        assert charge_qubit_map(8.5, 1.0, 0.0) == (17.0, 0.0)

    def test_zone_reduction(self):
        r, k = charge_qubit_map(1.0, 1.0, 0.75)
        assert k == pytest.approx(-0.5)

    @pytest.mark.parametrize("e_c", [0.0, -1.0])
    def test_rejects_nonpositive_charging_energy(self, e_c):
        with pytest.raises(ValueError):
            charge_qubit_map(1.0, e_c, 0.0)

    def test_spectrum_matches_transmon_hamiltonian(self):
        # 4 E_C (n - n_g)^2 - E_J cos(phi) in the charge basis, energies in E_C
        e_j, e_c, n_g = 3.0, 1.0, 0.2
        n = np.arange(-20, 21)
        h = np.diag(4 * e_c * (n - n_g) ** 2) - 0.5 * e_j * (np.eye(41, k=1) + np.eye(41, k=-1))
        transmon = np.linalg.eigvalsh(h)[:4]
        r, k = charge_qubit_map(e_j, e_c, n_g)
        lattice = solve_bands(LatticeSpec(r), k).energies[:4]
        # lattice energies equal circuit energies plus the constant r/2 (units E_C)
        np.testing.assert_allclose(lattice - r / 2, transmon, atol=1e-10)

    @given(st.floats(min_value=-10, max_value=10, allow_nan=False))
    def test_reduce_into_zone(self, k):
        reduced = reduce_quasimomentum(k)
        assert -1 < reduced <= 1
        assert abs(((reduced - k) / 2) - round((reduced - k) / 2)) < 1e-9


class TestRecoilUnits:
    mass = 85 * constants.atomic_mass
    k_laser = 2 * np.pi / 780e-9

    def test_definition(self):
        e_r = recoil_energy(self.mass, self.k_laser)
        assert recoil_units(e_r, self.mass, self.k_laser) == pytest.approx(1.0)
        assert recoil_units(18 * e_r, self.mass, self.k_laser) == pytest.approx(18.0)

    def test_mass_scaling(self):
        u0 = 1e-30
        assert recoil_units(u0, 2 * self.mass, self.k_laser) == pytest.approx(
            2 * recoil_units(u0, self.mass, self.k_laser))

    @pytest.mark.parametrize("args", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
    def test_rejects_nonpositive(self, args):
        with pytest.raises(ValueError):
            recoil_units(*args)


def test_band_scan_shape():
    ks, e = band_scan(LatticeSpec(13.0, n_bands=4), 101)
    assert e.shape == (101, 4)
    np.testing.assert_allclose(e[0], e[-1], atol=1e-12)
