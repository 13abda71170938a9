import json
import math
import warnings

import numpy as np
import pytest
import scipy.linalg

from nvqpt.errors import UnphysicalStateError
from nvqpt.spincore import (
    PAULIS,
    BlochVector,
    ChiMatrix,
    DensityMatrix,
    apply_channel,
    chi_from_kraus,
    chi_from_ptm,
    chi_ideal,
    density_from_bloch,
    optimize_phi,
    process_fidelity,
    ptm_from_chi,
)
from conftest import random_cptp_chi, random_kraus_set

SX, SY, SZ = PAULIS[1], PAULIS[2], PAULIS[3]


def rotation_about_z(phi):
    """Independent 3x3 Bloch-rotation oracle."""
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def z_rotation_unitary(phi):
    return scipy.linalg.expm(-0.5j * phi * np.array([[1, 0], [0, -1]], complex))


def damped_rotation_kraus(phi, k):
    """Phase damping (transverse scale k) composed with a Z rotation."""
    u = z_rotation_unitary(phi)
    zu = np.diag([1.0, -1.0]) @ u
    return [math.sqrt((1 + k) / 2) * u, math.sqrt((1 - k) / 2) * zu]


class TestDensityFromBloch:
    def test_north_pole(self):
        rho = density_from_bloch((0, 0, 1))
        np.testing.assert_allclose(rho.matrix, np.diag([1.0, 0.0]), atol=1e-15)

    def test_x_state_off_diagonal(self):
        rho = density_from_bloch((1, 0, 0))
        assert rho.matrix[0, 1] == pytest.approx(0.5)
        assert rho.matrix[1, 0] == pytest.approx(0.5)

    def test_eigenvalues_of_mixed_state(self):
        # Eigendecomposition oracle: eigenvalues of (I + b.sigma)/2 are
        # (1 +- |b|)/2 with |b| = sqrt(0.5) for b = (0.3, -0.4, 0.5).
        rho = density_from_bloch((0.3, -0.4, 0.5))
        evals = np.sort(np.linalg.eigvalsh(rho.matrix))
        r = math.sqrt(0.5)
        np.testing.assert_allclose(evals, [(1 - r) / 2, (1 + r) / 2], atol=1e-12)

    def test_rejects_unphysical_vector(self):
        with pytest.raises(UnphysicalStateError):
            density_from_bloch((1.0, 0.1, 0.0))

    def test_invariants_and_round_trip(self, rng):
        for _ in range(200):
            v = rng.normal(size=3)
            v *= rng.uniform(0, 1) / np.linalg.norm(v)
            rho = density_from_bloch(v).validate()
            assert rho.p0 == pytest.approx((1 + v[2]) / 2, abs=1e-12)
            np.testing.assert_allclose(rho.bloch().as_array(), v, atol=1e-12)


class TestApplyChannel:
    def test_identity_process(self, rng):
        chi = ChiMatrix(np.diag([1.0, 0.0, 0.0, 0.0]))
        rho = density_from_bloch(rng.uniform(-0.5, 0.5, size=3))
        np.testing.assert_allclose(apply_channel(chi, rho).matrix, rho.matrix, atol=1e-14)

    def test_pure_z_process_flips_x(self):
        chi = ChiMatrix(np.diag([0.0, 0.0, 0.0, 1.0]))
        out = apply_channel(chi, density_from_bloch((1, 0, 0)))
        np.testing.assert_allclose(out.bloch().as_array(), [-1, 0, 0], atol=1e-14)

    def test_rotation_matches_bloch_oracle(self):
        out = apply_channel(chi_ideal(math.pi / 2), density_from_bloch((1, 0, 0)))
        np.testing.assert_allclose(out.bloch().as_array(), [0, 1, 0], atol=1e-12)

    def test_linearity(self, rng):
        for _ in range(30):
            chi = random_cptp_chi(rng)
            rho1 = density_from_bloch(rng.uniform(-0.5, 0.5, size=3))
            rho2 = density_from_bloch(rng.uniform(-0.5, 0.5, size=3))
            alpha = rng.uniform()
            mixed = DensityMatrix(alpha * rho1.matrix + (1 - alpha) * rho2.matrix)
            lhs = apply_channel(chi, mixed).matrix
            rhs = alpha * apply_channel(chi, rho1).matrix
            rhs = rhs + (1 - alpha) * apply_channel(chi, rho2).matrix
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_trace_preserved_for_tp_channel(self, rng):
        for _ in range(20):
            chi = random_cptp_chi(rng)
            rho = density_from_bloch(rng.uniform(-0.5, 0.5, size=3))
            out = apply_channel(chi, rho)
            assert np.trace(out.matrix).real == pytest.approx(1.0, abs=1e-9)


class TestChiIdeal:
    def test_zero_angle_is_identity_process(self):
        np.testing.assert_allclose(chi_ideal(0.0).matrix, np.diag([1, 0, 0, 0j]), atol=1e-15)

    def test_full_turn_is_identity_process(self):
        np.testing.assert_allclose(chi_ideal(2 * math.pi).matrix, np.diag([1, 0, 0, 0j]), atol=1e-15)

    def test_90_degrees_entries(self):
        chi = chi_ideal(math.pi / 2).matrix
        assert chi[0, 0] == pytest.approx(0.5)
        assert chi[3, 3] == pytest.approx(0.5)
        assert chi[0, 3] == pytest.approx(0.5j)
        assert chi[3, 0] == pytest.approx(-0.5j)

    def test_matches_unitary_expansion_oracle(self):
        # Expand exp(-i phi sigma_z / 2) in the Pauli basis by hand and form
        # the rank-one chi from its coefficient vector.
        for phi in np.linspace(-2 * math.pi, 2 * math.pi, 17):
            u = z_rotation_unitary(phi)
            c = np.array([np.trace(p @ u) / 2 for p in PAULIS])
            np.testing.assert_allclose(chi_ideal(phi).matrix, np.outer(c, c.conj()), atol=1e-14)

    def test_physicality_and_rank(self):
        chi = chi_ideal(1.234)
        chi.validate_physical()
        evals = np.linalg.eigvalsh(chi.matrix)
        assert np.sum(evals > 1e-12) == 1
        assert np.trace(chi.matrix).real == pytest.approx(1.0)

    def test_acts_as_z_rotation_on_bloch_grid(self, rng):
        for phi in np.linspace(0, 2 * math.pi, 36, endpoint=False):
            chi = chi_ideal(phi)
            r = rotation_about_z(phi)
            for _ in range(3):
                b = rng.uniform(-0.57, 0.57, size=3)
                out = apply_channel(chi, density_from_bloch(b))
                np.testing.assert_allclose(out.bloch().as_array(), r @ b, atol=1e-10)


class TestProcessFidelity:
    def test_self_fidelity_of_unitaries(self):
        for phi in np.linspace(0, 2 * math.pi, 9):
            assert process_fidelity(chi_ideal(phi), chi_ideal(phi)) == pytest.approx(1.0)

    def test_orthogonal_rotations(self):
        assert process_fidelity(chi_ideal(0.0), chi_ideal(math.pi / 2)) == pytest.approx(0.5)

    def test_phase_damped_rotation(self):
        chi = chi_from_kraus(damped_rotation_kraus(math.pi / 2, 0.74))
        f = process_fidelity(chi, chi_ideal(math.pi / 2))
        assert f == pytest.approx((1 + 0.74) / 2, abs=1e-12)

    def test_warns_on_non_hermitian_input(self):
        m = np.diag([1.0 + 0j, 0, 0, 0])
        m[0, 3] = 1e-4  # no conjugate partner at [3, 0]
        with pytest.warns(UserWarning, match="imaginary"):
            process_fidelity(ChiMatrix(m), chi_ideal(0.3))

    def test_invariant_under_simultaneous_z_conjugation(self, rng):
        # Conjugating both Kraus sets by the same Z rotation leaves F fixed.
        for _ in range(10):
            phi = rng.uniform(0, 2 * math.pi)
            alpha = rng.uniform(0, 2 * math.pi)
            k = rng.uniform(0.2, 1.0)
            u = z_rotation_unitary(alpha)
            ka = damped_rotation_kraus(phi, k)
            kb = [z_rotation_unitary(phi)]
            f0 = process_fidelity(chi_from_kraus(ka), chi_from_kraus(kb))
            f1 = process_fidelity(
                chi_from_kraus([u @ m @ u.conj().T for m in ka]),
                chi_from_kraus([u @ m @ u.conj().T for m in kb]),
            )
            assert f1 == pytest.approx(f0, abs=1e-10)


class TestOptimizePhi:
    def test_recovers_known_rotation(self):
        phi = math.radians(94.6)
        res = optimize_phi(chi_ideal(phi))
        assert math.degrees(res.phi_rad) == pytest.approx(94.6, abs=1e-9)
        assert res.fidelity == pytest.approx(1.0, abs=1e-12)
        assert not res.degenerate

    def test_depolarizing_is_degenerate(self):
        chi = ChiMatrix(np.eye(4) / 4.0)
        res = optimize_phi(chi)
        assert res.degenerate
        assert res.phi_rad == 0.0
        assert res.fidelity == pytest.approx(0.25, abs=1e-12)
        for phi in np.linspace(0, 2 * math.pi, 12):
            assert process_fidelity(chi, chi_ideal(phi)) == pytest.approx(0.25, abs=1e-12)

    def test_closed_form_matches_brute_force_grid(self, rng):
        # 0.01-degree grid maximization as the independent oracle.
        grid = np.radians(np.arange(0.0, 360.0, 0.01))
        cos_g, sin_g = np.cos(grid), np.sin(grid)
        for _ in range(100):
            a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
            chi = ChiMatrix(a @ a.conj().T + a + a.conj().T + 2 * np.eye(4))
            res = optimize_phi(chi)
            m = chi.matrix / np.trace(chi.matrix).real
            ca = 0.5 * (m[0, 0] + m[3, 3]).real
            cb = 0.5 * (m[0, 0] - m[3, 3]).real
            cc = m[0, 3].imag
            f_grid = ca + cb * cos_g + cc * sin_g
            best = grid[np.argmax(f_grid)]
            delta = math.degrees(abs(math.remainder(res.phi_rad - best, 2 * math.pi)))
            if not res.degenerate:
                assert delta <= 0.02
            assert res.fidelity >= f_grid.max() - 1e-12

    def test_fidelity_is_sinusoidal_in_phi(self, rng):
        # The closed form rests on F(phi) = a + b cos phi + c sin phi; check
        # against direct evaluation on random physical channels.
        for _ in range(10):
            chi = random_cptp_chi(rng)
            f0 = process_fidelity(chi, chi_ideal(0.0))
            f90 = process_fidelity(chi, chi_ideal(math.pi / 2))
            f180 = process_fidelity(chi, chi_ideal(math.pi))
            a = 0.5 * (f0 + f180)
            b = 0.5 * (f0 - f180)
            c = f90 - a
            for phi in rng.uniform(0, 2 * math.pi, size=8):
                direct = process_fidelity(chi, chi_ideal(phi))
                assert direct == pytest.approx(a + b * math.cos(phi) + c * math.sin(phi), abs=1e-12)


class TestChiSerialization:
    def test_round_trip_is_bit_exact(self, rng):
        m = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        chi = ChiMatrix(m + m.conj().T)
        restored = ChiMatrix.from_json(chi.to_json())
        assert np.array_equal(restored.matrix, chi.matrix)

    def test_schema_fields(self):
        d = json.loads(chi_ideal(0.7).to_json())
        assert d["basis"] == ["I", "X", "Y", "Z"]
        assert len(d["re"]) == 4 and len(d["im"]) == 4
        assert all(len(row) == 4 for row in d["re"])

    def test_rejects_foreign_basis(self):
        d = chi_ideal(0.1).to_json_dict()
        d["basis"] = ["I", "Z", "X", "Y"]
        with pytest.raises(ValueError):
            ChiMatrix.from_json_dict(d)


class TestTransferConversions:
    def test_round_trip(self, rng):
        for _ in range(20):
            chi = random_cptp_chi(rng)
            t = ptm_from_chi(chi)
            np.testing.assert_allclose(chi_from_ptm(t).matrix, chi.matrix, atol=1e-12)

    def test_ptm_columns_are_channel_actions(self, rng):
        # T[i, j] = Tr(P_i E(P_j)) / 2 evaluated through apply_channel on a
        # decomposition of P_j into density matrices.
        chi = random_cptp_chi(rng)
        t = ptm_from_chi(chi)
        e_plus = apply_channel(chi, density_from_bloch((0, 0, 1))).matrix
        e_minus = apply_channel(chi, density_from_bloch((0, 0, -1))).matrix
        image_z = e_plus - e_minus
        for i, p in enumerate(PAULIS):
            assert t[i, 3] == pytest.approx(np.trace(p @ image_z).real / 2, abs=1e-12)

    def test_unitary_ptm_is_rotation(self):
        t = ptm_from_chi(chi_ideal(0.31))
        expected = np.eye(4)
        expected[1:, 1:] = rotation_about_z(0.31)
        np.testing.assert_allclose(t, expected, atol=1e-12)
