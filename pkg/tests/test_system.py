"""Tests for Liouvillian assembly and step propagators."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from ptsim.expressions import HBAR
from ptsim.system import (
    FilePulse,
    GaussPulse,
    SystemLiouvillian,
    commutator_superop,
    lindblad_superop,
    read_pulse_file,
    trace_vector,
)


def _random_hermitian(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return a + a.conj().T


@pytest.mark.parametrize("dim", [2, 3, 4])
def test_step_propagator_preserves_trace(dim):
    rng = np.random.default_rng(dim)
    sys = SystemLiouvillian(dim)
    sys.add_hamiltonian(_random_hermitian(rng, dim))
    for _ in range(2):
        a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        sys.add_lindblad(rng.uniform(0.1, 2.0), a)
    m = sys.step_propagator(0.0, 0.05)
    tv = trace_vector(dim)
    assert np.allclose(tv @ m, tv, atol=1e-12)


@pytest.mark.parametrize("dim", [2, 3])
def test_step_propagator_completely_positive(dim):
    rng = np.random.default_rng(10 + dim)
    sys = SystemLiouvillian(dim)
    sys.add_hamiltonian(_random_hermitian(rng, dim))
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    sys.add_lindblad(0.7, a)
    m = sys.step_propagator(0.0, 0.1)
    # Choi matrix of the row-major superoperator must be PSD
    choi = m.reshape(dim, dim, dim, dim).transpose(0, 2, 1, 3).reshape(dim**2, dim**2)
    eigs = np.linalg.eigvalsh(choi)
    assert eigs.min() > -1e-10


def test_rabi_oscillation_exact():
    omega = 1.0
    sys = SystemLiouvillian(2)
    sys.add_hamiltonian(HBAR * omega / 2 * np.array([[0, 1], [1, 0]], dtype=complex))
    dt = 0.01
    m = sys.step_propagator(0.0, dt)
    rho = np.array([1, 0, 0, 0], dtype=complex)
    for j in range(1, 501):
        rho = m @ rho
        expected = math.sin(omega * j * dt / 2.0) ** 2
        assert abs(rho[3].real - expected) < 1e-10


def test_lindblad_decay_rate():
    # pure decay |1> -> |0> at rate gamma: n(t) = exp(-gamma t)
    gamma = 0.35
    sys = SystemLiouvillian(2)
    sys.add_lindblad(gamma, np.array([[0, 1], [0, 0]], dtype=complex))
    m = sys.step_propagator(0.0, 0.1)
    rho = np.array([0, 0, 0, 1], dtype=complex)
    for j in range(1, 100):
        rho = m @ rho
        assert abs(rho[3].real - math.exp(-gamma * j * 0.1)) < 1e-12


def test_gauss_pulse_area_and_width():
    pulse = GaussPulse(center=10.0, fwhm=4.0, area=3 * math.pi, detuning=0.0)
    area, _ = quad(lambda t: pulse(t).real, 0.0, 20.0)
    assert area == pytest.approx(3 * math.pi, rel=1e-8)
    half = abs(pulse(10.0)) / 2.0
    assert abs(pulse(10.0 + 2.0)) == pytest.approx(half, rel=1e-12)
    assert abs(pulse(10.0 - 2.0)) == pytest.approx(half, rel=1e-12)


def test_gauss_pulse_detuning_phase():
    delta = 0.5  # meV
    pulse = GaussPulse(center=0.0, fwhm=2.0, area=1.0, detuning=delta)
    t = 1.7
    expected_phase = np.exp(-1j * delta / HBAR * t)
    ratio = pulse(t) / abs(pulse(t))
    assert abs(ratio - expected_phase) < 1e-12


def test_file_pulse_roundtrip(tmp_path):
    times = np.linspace(0, 5, 11)
    values = np.sin(times) + 1j * np.cos(times)
    path = tmp_path / "pulse.dat"
    lines = ["# t Re Im"]
    lines += [f"{t} {v.real} {v.imag}" for t, v in zip(times, values)]
    path.write_text("\n".join(lines))
    pulse = read_pulse_file(str(path))
    assert pulse(2.5) == pytest.approx(values[5], abs=1e-12)
    assert pulse(2.75) == pytest.approx(0.5 * (values[5] + values[6]), abs=1e-12)
    assert pulse(-1.0) == 0.0
    assert pulse(99.0) == 0.0


def test_midpoint_sampling_third_order():
    # full step vs two half steps differs at O(dt^3) for time-dependent H
    sys = SystemLiouvillian(2)
    sys.add_pulse(GaussPulse(1.0, 1.5, math.pi), np.array([[0, 0], [0.5 * HBAR, 0]]))
    t0 = 0.6
    errs, dts = [], [0.4, 0.2, 0.1, 0.05]
    for dt in dts:
        full = sys.step_propagator(t0, dt)
        halves = sys.step_propagator(t0 + dt / 2, dt / 2) @ sys.step_propagator(t0, dt / 2)
        errs.append(np.abs(full - halves).max())
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert slope == pytest.approx(3.0, abs=0.4)


def test_non_hermitian_rejected():
    sys = SystemLiouvillian(2)
    with pytest.raises(ValueError):
        sys.add_hamiltonian(np.array([[0, 1], [0, 0]], dtype=complex))


def test_trace_vector_annihilates_liouvillian():
    rng = np.random.default_rng(2)
    dim = 3
    h = _random_hermitian(rng, dim)
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    sup = commutator_superop(h) + 0.3 * lindblad_superop(a)
    tv = trace_vector(dim)
    assert np.allclose(tv @ sup, 0.0, atol=1e-12)
