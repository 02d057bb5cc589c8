import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tqs.exceptions import DegenerateSampleError, InvalidSizeError, ShapeError
from tqs.hamiltonian import (
    CouplingVector,
    PauliTerm,
    all_configs,
    as_config,
    build_tfi,
    build_xyz,
    config_to_index,
    connected_configs,
    dense_matrix,
    index_to_config,
    local_energies,
    local_energy,
    sample_couplings,
    tfi_family,
)
from conftest import ground_pair, kron_matrix


def term_map(H):
    return {t.factors: complex(t.coefficient) for t in H.terms}


class TestBuilders:
    def test_tfi_zero_field_drops_terms(self):
        H = build_tfi(2, J=1.0, h=0.0)
        assert term_map(H) == {((0, "Z"), (1, "Z")): -1.0}

    def test_tfi_n3_exact_terms(self):
        H = build_tfi(3, J=1.0, h=1.0)
        assert term_map(H) == {
            ((0, "Z"), (1, "Z")): -1.0,
            ((1, "Z"), (2, "Z")): -1.0,
            ((0, "X"),): -1.0,
            ((1, "X"),): -1.0,
            ((2, "X"),): -1.0,
        }

    def test_tfi_term_counts(self):
        for n in range(2, 65):
            H = build_tfi(n, J=1.0, h=0.5)
            zz = [t for t in H.terms if len(t.factors) == 2]
            x = [t for t in H.terms if len(t.factors) == 1]
            assert len(zz) == n - 1 and len(x) == n

    def test_xyz_bond_coefficients(self):
        H = build_xyz(2, J=1.0, gamma=0.2, delta=0.5, h=0.0)
        assert term_map(H) == pytest.approx(
            {
                ((0, "X"), (1, "X")): 1.2,
                ((0, "Y"), (1, "Y")): 0.8,
                ((0, "Z"), (1, "Z")): 0.5,
            }
        )

    def test_xyz_isotropic_ground_energy(self):
        H = build_xyz(2, J=1.0, gamma=0.0, delta=1.0, h=0.0)
        energy, _ = ground_pair(H)
        assert energy == pytest.approx(-3.0, abs=1e-12)

    def test_xyz_field_only(self):
        H = build_xyz(2, J=0.0, gamma=0.2, delta=1.0, h=1.0)
        assert term_map(H) == {((0, "Z"),): 1.0, ((1, "Z"),): 1.0}
        energy, _ = ground_pair(H)
        assert energy == pytest.approx(-2.0, abs=1e-12)

    def test_xyz_term_counts(self):
        for n in range(2, 65):
            H = build_xyz(n, J=1.0, gamma=0.2, delta=0.5, h=0.3)
            assert len(H.terms) == 3 * (n - 1) + n

    @pytest.mark.parametrize("builder", [lambda n: build_tfi(n, 1, 1), lambda n: build_xyz(n, 1, 0.2, 0.5, 0.1)])
    def test_invalid_size(self, builder):
        with pytest.raises(InvalidSizeError):
            builder(1)

    def test_pauli_term_validation(self):
        with pytest.raises(ValueError):
            PauliTerm(1.0, ())
        with pytest.raises(ValueError):
            PauliTerm(1.0, ((1, "Z"), (0, "Z")))
        with pytest.raises(ValueError):
            PauliTerm(1.0, ((0, "Q"),))


class TestConnectedConfigs:
    def test_tfi_n2_all_elements(self):
        H = build_tfi(2, J=1.0, h=1.0)
        got = {tuple(s): e for s, e in connected_configs(H, [0, 0])}
        assert got == {(0, 0): -1.0, (1, 0): -1.0, (0, 1): -1.0}

    def test_diagonal_hamiltonian_single_entry(self):
        H = build_tfi(3, J=1.0, h=0.0)
        out = connected_configs(H, [0, 1, 0])
        assert len(out) == 1
        s, e = out[0]
        assert tuple(s) == (0, 1, 0) and e == pytest.approx(2.0)

    def test_yy_bond_element_vs_dense(self):
        gamma = 0.2
        H = build_xyz(2, J=1.0, gamma=gamma, delta=0.0, h=0.0)
        got = {tuple(s): e for s, e in connected_configs(H, [0, 0])}
        # the XX and YY terms connect 00 to 11; the combined element must
        # match the dense matrix entry <00|H|11>
        M = kron_matrix(H)
        assert got[(1, 1)] == pytest.approx(M[0, 3])
        assert got[(1, 1)] == pytest.approx((1 + gamma) - (1 - gamma))

    def test_length_mismatch(self):
        H = build_tfi(3, 1, 1)
        with pytest.raises(ShapeError):
            connected_configs(H, [0, 0])

    @pytest.mark.parametrize(
        "H",
        [
            build_tfi(4, 1.0, 0.7),
            build_xyz(4, 1.0, 0.2, 0.5, 0.3),
            build_xyz(3, 0.8, -0.4, 1.0, 0.0),
        ],
    )
    def test_dense_assembly_matches_kron(self, H):
        assembled = dense_matrix(H)
        reference = kron_matrix(H)
        assert np.abs(assembled - reference).max() < 1e-12

    def test_hermiticity(self):
        for H in (build_tfi(5, 1.0, 1.3), build_xyz(5, 1.0, 0.2, -0.5, 0.4)):
            M = dense_matrix(H)
            assert np.abs(M - M.conj().T).max() < 1e-12

    @given(
        s_bits=st.integers(min_value=0, max_value=15),
        gamma=st.floats(-0.9, 0.9),
        delta=st.floats(-1.0, 1.0),
        h=st.floats(-1.0, 1.0),
    )
    @settings(max_examples=25, deadline=None)
    def test_elements_match_dense_row(self, s_bits, gamma, delta, h):
        H = build_xyz(4, 1.0, gamma, delta, h)
        M = kron_matrix(H)
        s = index_to_config(s_bits, 4)
        row = np.zeros(16, dtype=complex)
        for sp, elem in connected_configs(H, s):
            row[config_to_index(sp)] = elem
        assert np.abs(row - M[s_bits]).max() < 1e-12


class TestLocalEnergy:
    def test_diagonal_case_ignores_psi(self):
        H = build_tfi(4, J=1.0, h=0.0)
        psi = lambda s: (-1.23, 0.45)  # arbitrary nonzero amplitude
        assert local_energy(H, [0, 0, 0, 0], psi) == pytest.approx(-3.0)

    def test_exact_ground_vector_constant(self):
        H = build_tfi(2, J=1.0, h=1.0)
        energy, vec = ground_pair(H)
        amps = np.abs(vec)

        def psi(s):
            a = amps[config_to_index(np.asarray(s))]
            return np.log(a), 0.0

        values = [local_energy(H, index_to_config(i, 2), psi) for i in range(4)]
        assert np.allclose(values, -np.sqrt(5), atol=1e-9)
        assert np.var(np.real(values)) < 1e-18

    def test_eigenvector_zero_variance_xyz(self):
        H = build_xyz(3, J=1.0, gamma=0.2, delta=0.5, h=0.3)
        energy, vec = ground_pair(H)

        def psi(s):
            a = vec[config_to_index(np.asarray(s))]
            return np.log(np.abs(a)), np.angle(a)

        # only configurations in the support of the state carry samples
        support = [i for i in range(8) if np.abs(vec[i]) > 1e-12]
        assert len(support) >= 4
        values = np.array([local_energy(H, index_to_config(i, 3), psi) for i in support])
        assert np.abs(values - energy).max() < 1e-9

    def test_underflow_raises(self):
        H = build_tfi(2, 1.0, 1.0)
        psi = lambda s: (-40.0, 0.0)  # below the sqrt(1e-30) floor
        with pytest.raises(DegenerateSampleError):
            local_energy(H, [0, 0], psi)

    def test_batched_matches_single(self):
        H = build_xyz(4, J=1.0, gamma=0.3, delta=-0.4, h=0.2)
        _, vec = ground_pair(H)
        rng = np.random.default_rng(5)
        # a generic normalized complex vector, not an eigenvector
        raw = rng.normal(size=16) + 1j * rng.normal(size=16)
        raw /= np.linalg.norm(raw)

        def psi(s):
            a = raw[config_to_index(np.asarray(s))]
            return np.log(np.abs(a)), np.angle(a)

        def psi_batch(configs):
            idx = [config_to_index(c) for c in configs]
            return np.log(np.abs(raw[idx])), np.angle(raw[idx])

        configs = all_configs(4)
        batched, valid = local_energies(H, configs, psi_batch)
        assert valid.all()
        singles = np.array([local_energy(H, c, psi) for c in configs])
        assert np.abs(batched - singles).max() < 1e-12


class TestCouplings:
    def test_sample_within_prior(self):
        family = tfi_family((0.5, 1.5), sizes=tuple(range(10, 41, 2)))
        rng = np.random.Generator(np.random.Philox(key=9))
        for _ in range(200):
            J = sample_couplings(family, rng)
            assert 0.5 <= J.get("h") <= 1.5
            assert J.n % 2 == 0 and 10 <= J.n <= 40

    def test_degenerate_prior(self):
        family = tfi_family((1.0, 1.0), sizes=(6,))
        rng = np.random.Generator(np.random.Philox(key=0))
        for _ in range(5):
            J = sample_couplings(family, rng)
            assert J.get("h") == 1.0 and J.n == 6

    def test_seeded_reproducibility(self):
        family = tfi_family((0.5, 1.5), sizes=(4, 6, 8))
        a = [sample_couplings(family, np.random.Generator(np.random.Philox(key=4))).params for _ in range(1)]
        b = [sample_couplings(family, np.random.Generator(np.random.Philox(key=4))).params for _ in range(1)]
        assert a == b

    def test_empty_size_set_rejected(self):
        with pytest.raises(Exception):
            tfi_family((0.5, 1.5), sizes=())

    def test_outside_prior_flagging(self):
        family = tfi_family((0.5, 1.5), sizes=(4,))
        assert family.coupling(4, h=1.75).outside_prior(family) == ("h",)
        assert family.coupling(4, h=1.0).outside_prior(family) == ()

    def test_builder_deterministic(self):
        family = tfi_family((0.5, 1.5), sizes=(4,))
        J = family.coupling(4, h=0.77)
        assert family.build(J) == family.build(J)


def test_as_config_validation():
    with pytest.raises(ShapeError):
        as_config([0, 2, 0])
    with pytest.raises(ShapeError):
        as_config([[0, 1]])
    with pytest.raises(ShapeError):
        as_config([0, 1], n=3)


def test_coupling_vector_accessors():
    J = CouplingVector.make(6, h=1.25)
    assert J.names == ("h",)
    assert J.get("h") == 1.25
    with pytest.raises(KeyError):
        J.get("delta")
