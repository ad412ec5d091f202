import numpy as np
import pytest
import scipy.linalg

from mqcsim import (
    AllToAll,
    Axis,
    Chain,
    Delay,
    ExplicitCouplings,
    NonConvergence,
    OperatorKind,
    Pulse,
    PulseProgram,
    aht_error,
    build_system,
    collective_pulse,
    compile_program,
    dq_block,
    evolve,
    hamiltonian_matrix,
    krylov_expmv,
    program_from_json,
    program_to_json,
    pulse_matrix,
)

from oracles import dense_hdq, random_couplings, random_state

UP, DOWN = 1, 0


def bits(*spins):
    return sum(b << i for i, b in enumerate(spins))


@pytest.fixture
def sys4():
    rng = np.random.default_rng(40)
    return build_system(ExplicitCouplings(random_couplings(4, rng)), 4)


class TestEvolve:
    def test_hdq_fixed_point(self):
        system = build_system(AllToAll(d0=1.0), 2)
        psi = np.zeros(4, dtype=complex)
        psi[bits(UP, DOWN)] = 1.0
        out = evolve(psi, system, OperatorKind.HDQ, 0.83)
        assert np.allclose(out, psi, atol=1e-12)

    def test_two_spin_density_cosine(self):
        # Iz under Hdq: diagonal +-cos(dt), (uu,dd) magnitude sin(dt)
        system = build_system(AllToAll(d0=1.0), 2)
        t = 0.37
        rho = np.diag(system.magnetization).astype(complex)
        out = evolve(rho, system, OperatorKind.HDQ, t)
        assert out[bits(UP, UP), bits(UP, UP)] == pytest.approx(np.cos(t), abs=1e-12)
        assert out[bits(DOWN, DOWN), bits(DOWN, DOWN)] == pytest.approx(
            -np.cos(t), abs=1e-12
        )
        assert abs(out[bits(UP, UP), bits(DOWN, DOWN)]) == pytest.approx(
            np.sin(t), abs=1e-12
        )
        # brute-force dense exponential agrees
        u = scipy.linalg.expm(-1j * dense_hdq(system.couplings) * t)
        assert np.max(np.abs(out - u @ rho @ u.conj().T)) < 1e-12

    def test_norm_preserved_under_hzz(self, sys4):
        rng = np.random.default_rng(0)
        psi = random_state(4, rng)
        out = evolve(psi, sys4, OperatorKind.HZZ, 1.7)
        assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)

    def test_composition(self, sys4):
        rng = np.random.default_rng(1)
        psi = random_state(4, rng)
        once = evolve(psi, sys4, OperatorKind.HDQ, 0.9)
        twice = evolve(
            evolve(psi, sys4, OperatorKind.HDQ, 0.4), sys4, OperatorKind.HDQ, 0.5
        )
        assert np.max(np.abs(once - twice)) < 1e-10

    def test_reversal_loschmidt(self, sys4):
        rng = np.random.default_rng(2)
        rho = np.outer(*(2 * [random_state(4, rng)])).astype(complex)
        rho = rho + rho.conj().T
        back = evolve(
            evolve(rho, sys4, OperatorKind.HZZ, 0.8), sys4, OperatorKind.HZZ, -0.8
        )
        assert np.max(np.abs(back - rho)) < 1e-10

    def test_eigen_and_krylov_agree_n8(self):
        rng = np.random.default_rng(8)
        system = build_system(ExplicitCouplings(random_couplings(8, rng)), 8)
        psi = random_state(8, rng)
        a = evolve(psi, system, OperatorKind.HDQ, 0.6, method="eigen")
        b = evolve(psi, system, OperatorKind.HDQ, 0.6, method="krylov")
        assert np.max(np.abs(a - b)) < 1e-8

    def test_krylov_splits_long_steps(self, sys4):
        rng = np.random.default_rng(3)
        psi = random_state(4, rng)
        # t large enough that a 12-dim subspace needs splitting
        out = krylov_expmv(sys4, OperatorKind.HZZ, psi, 40.0, m_max=12)
        ref = evolve(psi, sys4, OperatorKind.HZZ, 40.0, method="eigen")
        assert np.max(np.abs(out - ref)) < 1e-7

    def test_krylov_nonconvergence_reports_residual(self, sys4):
        rng = np.random.default_rng(4)
        psi = random_state(4, rng)
        with pytest.raises(NonConvergence) as err:
            krylov_expmv(
                sys4, OperatorKind.HZZ, psi, 1e4, m_max=2, max_halvings=1
            )
        assert err.value.residual is not None

    def test_krylov_density(self, sys4):
        rng = np.random.default_rng(5)
        rho = np.diag(sys4.magnetization).astype(complex)
        a = evolve(rho, sys4, OperatorKind.HDQ, 0.5, method="eigen")
        b = evolve(rho, sys4, OperatorKind.HDQ, 0.5, method="krylov")
        assert np.max(np.abs(a - b)) < 1e-8


class TestCollectivePulse:
    def test_pi_half_y_maps_iz_to_ix(self, sys4):
        iz = np.diag(sys4.magnetization).astype(complex)
        ix = hamiltonian_matrix(sys4, OperatorKind.IX_TOTAL)
        out = collective_pulse(iz, Axis.Y, np.pi / 2)
        assert np.max(np.abs(out - ix)) < 1e-12

    def test_two_pi_is_identity_on_densities(self):
        # odd N: the state picks up a global -1, which cancels on rho
        rng = np.random.default_rng(6)
        system = build_system(ExplicitCouplings(random_couplings(3, rng)), 3)
        rho = np.diag(system.magnetization).astype(complex)
        rho = collective_pulse(rho, Axis.Y, 0.4)  # something non-diagonal
        for axis in Axis:
            out = collective_pulse(rho, axis, 2 * np.pi)
            assert np.max(np.abs(out - rho)) < 1e-12
        psi = random_state(3, rng)
        flipped = collective_pulse(psi, Axis.X, 2 * np.pi)
        assert np.max(np.abs(flipped + psi)) < 1e-12  # global phase -1

    def test_pi_x_inverts_iz(self, sys4):
        iz = np.diag(sys4.magnetization).astype(complex)
        out = collective_pulse(iz, Axis.X, np.pi)
        assert np.max(np.abs(out + iz)) < 1e-12

    def test_matches_dense_pulse_matrix(self):
        rng = np.random.default_rng(7)
        psi = random_state(5, rng)
        for axis in Axis:
            u = pulse_matrix(axis, 0.93, 5)
            assert np.max(np.abs(collective_pulse(psi, axis, 0.93) - u @ psi)) < 1e-12


class TestPrograms:
    def test_single_delay_equals_evolve(self, sys4):
        program = PulseProgram([Delay(0.3, OperatorKind.HZZ)], name="one-delay")
        prop = compile_program(program, sys4)
        rng = np.random.default_rng(8)
        psi = random_state(4, rng)
        assert np.max(
            np.abs(prop.matrix @ psi - evolve(psi, sys4, OperatorKind.HZZ, 0.3))
        ) < 1e-12
        assert prop.duration == pytest.approx(0.3)

    def test_zero_rotation_is_identity(self, sys4):
        prop = compile_program(PulseProgram([Pulse(Axis.X, 0.0)]), sys4)
        assert np.max(np.abs(prop.matrix - np.eye(16))) < 1e-14
        assert prop.duration == 0.0

    def test_dq_block_delays(self):
        program = dq_block(3e-6, 8e-6)
        assert program.duration == pytest.approx(60e-6)
        delays = [s.duration for s in program.steps if isinstance(s, Delay)]
        assert sum(delays) == pytest.approx(4 * 3e-6 + 6 * 8e-6)
        pulses = [s for s in program.steps if isinstance(s, Pulse)]
        assert len(pulses) == 8
        assert all(p.angle == pytest.approx(np.pi / 2) for p in pulses)

    @pytest.mark.parametrize("n", [2, 4, 6])
    def test_propagator_unitarity(self, n):
        rng = np.random.default_rng(n)
        system = build_system(
            ExplicitCouplings(random_couplings(n, rng, 100.0, 2000.0)), n
        )
        prop = compile_program(dq_block(), system)
        assert prop.unitarity_defect() < 1e-10

    def test_program_json_roundtrip(self):
        program = dq_block(2e-6, 5e-6, sign=-1)
        clone = program_from_json(program_to_json(program))
        assert clone.name == program.name
        assert clone.steps == program.steps

    def test_json_wire_format(self):
        import json

        doc = json.loads(program_to_json(PulseProgram(
            [Pulse(Axis.X, 1.5707), Delay(3e-6, OperatorKind.HZZ)], name="demo"
        )))
        assert doc["steps"][0] == {"pulse": {"axis": "X", "angle": 1.5707}}
        assert doc["steps"][1] == {"delay": {"t": 3e-6, "h": "zz"}}


class TestAhtError:
    def test_matching_delay_is_exact(self, sys4):
        program = PulseProgram([Delay(0.25, OperatorKind.HZZ)])
        assert aht_error(program, OperatorKind.HZZ, sys4, 1.0) < 1e-12

    def test_error_vanishes_with_scale(self):
        system = build_system(Chain(d0=1.0), 4)
        errs = [
            aht_error(dq_block(), OperatorKind.HDQ, system, s)
            for s in (400.0, 50.0, 1e-3)
        ]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-9

    @pytest.mark.parametrize("n", [4, 6])
    def test_leading_order_scaling(self, n):
        # halving the couplings quarters the defect in the small-coupling regime
        system = build_system(AllToAll(d0=1.0), n)
        scale = 500.0  # d0 * tau_dq = 0.03
        e1 = aht_error(dq_block(), OperatorKind.HDQ, system, scale)
        e2 = aht_error(dq_block(), OperatorKind.HDQ, system, scale / 2)
        assert e2 / e1 == pytest.approx(0.25, abs=0.0625)

    def test_reversed_block_realizes_minus_hdq(self):
        system = build_system(AllToAll(d0=1.0), 4)
        err = aht_error(
            dq_block(sign=-1), OperatorKind.HDQ_PHASE, system, 500.0, phi=np.pi / 2
        )
        # same leading-order quality as the forward block
        fwd = aht_error(dq_block(), OperatorKind.HDQ, system, 500.0)
        assert err == pytest.approx(fwd, rel=0.2)
