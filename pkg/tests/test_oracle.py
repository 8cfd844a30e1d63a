"""Cross-checks for the dense reference propagators.

These oracles back the accuracy tests of the production engine, so they
get validated against closed-form physics here: vacuum Rabi cycles,
discrete pure-dephasing sums, and the analytically solvable
independent-boson model.
"""

import numpy as np
import pytest

from ptsim import (
    HBAR,
    Event,
    GaussPulse,
    Output,
    SingleModeSpec,
    SystemLiouvillian,
    TimeGrid,
    gaussian_kernels,
    propagate,
)
from ptsim.oracle import (
    dense_propagate,
    independent_boson_exact,
    path_sum,
    system_ode,
)

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SM = np.array([[0, 1], [0, 0]], dtype=complex)   # |0><1|
SP = SM.conj().T
OCC = np.diag([0.0, 1.0]).astype(complex)
GROUND = np.diag([1.0, 0.0]).astype(complex)
EXCITED = np.diag([0.0, 1.0]).astype(complex)


def _damped_rabi(omega=1.0, gamma=0.1):
    sys = SystemLiouvillian(2)
    sys.add_hamiltonian(0.5 * HBAR * omega * SX)
    sys.add_lindblad(gamma, SM)
    return sys


def _jc_mode(g):
    """Resonant exchange with one bosonic level: |1,0> <-> |0,1>."""
    c = np.array([[0, 1], [0, 0]], dtype=complex)
    h = HBAR * g * (np.kron(SM, c.conj().T) + np.kron(SP, c))
    joint = SystemLiouvillian(4)
    joint.add_hamiltonian(h)
    return SingleModeSpec(2, 2, joint, GROUND)


@pytest.mark.parametrize("sym,alt", [(True, False), (False, False), (True, True)])
def test_dense_no_modes_equals_engine(sym, alt):
    # without environment both propagators reduce to the same expm chain
    sys = _damped_rabi()
    grid = TimeGrid(0.0, 0.05, 200)
    ref = propagate(sys, grid, EXCITED, outputs=[Output(OCC)],
                    use_symmetric_trotter=sym, propagate_alternate=alt)
    res = dense_propagate(sys, [], grid, EXCITED, outputs=[Output(OCC)],
                          use_symmetric_trotter=sym, propagate_alternate=alt)
    assert np.abs(res.states - ref.states).max() < 1e-13
    assert np.abs(res.values - ref.values).max() < 1e-13


def test_vacuum_rabi_single_mode():
    # H_S = 0, so the system/mode splitting is exact at any dt and the
    # excited-state population must follow cos^2(g t) to full precision
    g = 0.8
    grid = TimeGrid(0.0, 0.05, 160)
    res = dense_propagate(SystemLiouvillian(2), [_jc_mode(g)], grid, EXCITED,
                          outputs=[Output(OCC)])
    expected = np.cos(g * grid.times) ** 2
    assert np.abs(res.values[:, 0].real - expected).max() < 1e-10
    assert np.abs(res.values[:, 0].imag).max() < 1e-12


def test_vacuum_rabi_two_modes_joint_env():
    # two identical resonant modes act like one with coupling sqrt(2) g
    g = 0.6
    grid = TimeGrid(0.0, 0.02, 300)
    res = dense_propagate(SystemLiouvillian(2), [_jc_mode(g), _jc_mode(g)],
                          grid, EXCITED, outputs=[Output(OCC)], joint_env=True)
    expected = np.cos(np.sqrt(2.0) * g * grid.times) ** 2
    assert np.abs(res.values[:, 0].real - expected).max() < 1e-10


def test_joint_env_equals_split_for_single_mode():
    grid = TimeGrid(0.0, 0.1, 50)
    split = dense_propagate(SystemLiouvillian(2), [_jc_mode(0.7)], grid, EXCITED)
    joint = dense_propagate(SystemLiouvillian(2), [_jc_mode(0.7)], grid, EXCITED,
                            joint_env=True)
    assert np.abs(split.states - joint.states).max() < 1e-12


def test_dense_guard_rejects_large_hilbert_space():
    modes = [_jc_mode(0.1) for _ in range(6)]    # 2^7 levels squared > guard
    with pytest.raises(ValueError, match="oracle guard"):
        dense_propagate(SystemLiouvillian(2), modes, TimeGrid(0.0, 0.1, 2),
                        EXCITED)


def test_dense_rejects_mismatched_mode():
    with pytest.raises(ValueError, match="2-level system"):
        dense_propagate(SystemLiouvillian(3), [_jc_mode(0.5)],
                        TimeGrid(0.0, 0.1, 2), np.eye(3, dtype=complex) / 3)


def test_path_sum_guard():
    sys = SystemLiouvillian(2)
    coeffs = np.zeros(10, dtype=complex)
    avals = np.array([0.0, 1.0])
    path_sum(coeffs, avals, sys, TimeGrid(0.0, 0.1, 8), GROUND)
    with pytest.raises(ValueError, match="path"):
        path_sum(coeffs, avals, sys, TimeGrid(0.0, 0.1, 9), GROUND)


def test_path_sum_needs_matching_avals():
    with pytest.raises(ValueError, match="eigenvalue per level"):
        path_sum(np.zeros(3, dtype=complex), np.array([0.0, 1.0, 2.0]),
                 SystemLiouvillian(2), TimeGrid(0.0, 0.1, 2), GROUND)


@pytest.mark.parametrize("sym", [True, False])
def test_path_sum_zero_kernel_is_free_evolution(sym):
    sys = _damped_rabi()
    grid = TimeGrid(0.0, 0.1, 8)
    rho0 = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
    states = path_sum(np.zeros(grid.n + 1, dtype=complex),
                      np.array([0.0, 1.0]), sys, grid, rho0,
                      use_symmetric_trotter=sym)
    ref = propagate(sys, grid, rho0, use_symmetric_trotter=sym)
    assert np.abs(states - ref.states).max() < 1e-12


def test_path_sum_pure_dephasing_closed_form():
    # with H_S = 0 and coupling eigenvalues (0, 1) only the coherence moves:
    # rho01 after j steps picks up exp(-sum_{l<j, l'<=l} conj(c_{l-l'}))
    grid = TimeGrid(0.0, 0.1, 7)
    kernel = gaussian_kernels(lambda w: 0.2 * w * np.exp(-w / 3.0), 77.0,
                              grid.dt, grid.n, omega_max=60.0)
    rho0 = 0.5 * np.array([[1, 1], [1, 1]], dtype=complex)
    states = path_sum(kernel.coeffs, np.array([0.0, 1.0]),
                      SystemLiouvillian(2), grid, rho0)
    for j in range(grid.n + 1):
        acc = sum(np.conj(kernel.coeffs[l - lp])
                  for l in range(j) for lp in range(l + 1))
        assert abs(states[j, 0, 1] - 0.5 * np.exp(-acc)) < 1e-12
        assert abs(states[j, 1, 0] - np.conj(0.5 * np.exp(-acc))) < 1e-12
        assert abs(states[j, 0, 0] - 0.5) < 1e-12


def test_system_ode_matches_engine_time_independent():
    sys = _damped_rabi()
    grid = TimeGrid(0.0, 0.1, 100)
    ode = system_ode(sys, grid, EXCITED)
    ref = propagate(sys, grid, EXCITED)      # exact for constant Liouvillian
    assert np.abs(ode - ref.states).max() < 1e-8


def test_system_ode_matches_engine_pulsed():
    sys = SystemLiouvillian(2)
    sys.add_pulse(GaussPulse(4.0, 2.0, np.pi, 0.0), 0.5 * HBAR * SP)
    grid = TimeGrid(0.0, 0.01, 800)
    ode = system_ode(sys, grid, GROUND)
    ref = propagate(sys, grid, GROUND)       # midpoint freeze, O(dt^2)
    assert np.abs(ode - ref.states).max() < 1e-5
    # pi pulse area inverts the ground state
    assert abs(ode[-1, 1, 1].real - 1.0) < 1e-6


def test_independent_boson_ohmic_closed_form():
    alpha, wc = 0.3, 2.0
    times = np.array([0.0, 0.3, 0.7, 1.1, 1.9, 2.7])
    num = independent_boson_exact(lambda w: alpha * w * np.exp(-w / wc),
                                  0.0, times, omega_max=np.inf)
    closed = (1 + (wc * times) ** 2) ** (-alpha / 2) \
        * np.exp(-1j * alpha * np.arctan(wc * times))
    assert num[0] == 1.0
    assert np.abs(num - closed).max() < 1e-8


def test_independent_boson_temperature_speeds_decay():
    J = lambda w: 0.2 * w * np.exp(-w / 3.0)
    times = np.linspace(0.2, 2.0, 7)
    cold = independent_boson_exact(J, 0.0, times, omega_max=60.0)
    warm = independent_boson_exact(J, 77.0, times, omega_max=60.0)
    assert np.all(np.abs(warm) < np.abs(cold))


def test_dense_event_matches_engine():
    # an operator insertion is applied identically by both propagators
    sys = _damped_rabi()
    grid = TimeGrid(0.0, 0.05, 100)
    events = [Event(2.5, SM, "left"), Event(4.0, SP, "right")]
    ref = propagate(sys, grid, EXCITED, events=events)
    res = dense_propagate(sys, [], grid, EXCITED, events=events)
    assert np.abs(res.states - ref.states).max() < 1e-13
