"""System Liouvillians, pulses, and per-step propagators.

Density matrices are vectorized row-major, ``vec(rho)[nu*D + mu] =
rho[nu, mu]``, so ``vec(A rho B) = (A kron B^T) vec(rho)``.  Energies are
meV, times ps, rates 1/ps; the Liouvillian is

    L(rho) = -(i/hbar) [H(t), rho] + sum_j gamma_j D_{A_j}(rho)

with ``D_A(rho) = A rho A^dag - (A^dag A rho + rho A^dag A) / 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import expm

from .expressions import HBAR

__all__ = [
    "commutator_superop", "lindblad_superop", "trace_vector",
    "GaussPulse", "FilePulse", "read_pulse_file",
    "SystemLiouvillian",
]


def commutator_superop(h: np.ndarray) -> np.ndarray:
    """Superoperator for ``-(i/hbar) [H, .]`` (H in meV)."""
    dim = h.shape[0]
    eye = np.eye(dim)
    return (-1j / HBAR) * (np.kron(h, eye) - np.kron(eye, h.T))


def lindblad_superop(a: np.ndarray) -> np.ndarray:
    """Dissipator superoperator for a single jump operator (rate 1)."""
    dim = a.shape[0]
    eye = np.eye(dim)
    ada = a.conj().T @ a
    return (np.kron(a, a.conj())
            - 0.5 * (np.kron(ada, eye) + np.kron(eye, ada.T)))


def trace_vector(dim: int) -> np.ndarray:
    """Row vector v with v @ vec(rho) = Tr(rho)."""
    return np.eye(dim, dtype=complex).reshape(-1)


# ---------------------------------------------------------------------------
# pulses

@dataclass
class GaussPulse:
    """Gaussian pulse envelope with pulse area and detuning.

    f(t) = area / (sqrt(2 pi) sigma) * exp(-(t-t_c)^2 / (2 sigma^2))
                                     * exp(-i (detuning/hbar) t)

    with sigma = fwhm / (2 sqrt(2 ln 2)); ``detuning`` is in meV.
    """

    center: float
    fwhm: float
    area: float
    detuning: float = 0.0

    @property
    def sigma(self) -> float:
        return self.fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))

    def __call__(self, t: float) -> complex:
        sig = self.sigma
        env = self.area / (math.sqrt(2.0 * math.pi) * sig) * math.exp(
            -((t - self.center) ** 2) / (2.0 * sig ** 2))
        return env * np.exp(-1j * (self.detuning / HBAR) * t)


class FilePulse:
    """Tabulated complex envelope, linearly interpolated, zero outside."""

    def __init__(self, times: np.ndarray, values: np.ndarray):
        order = np.argsort(times)
        self.times = np.asarray(times, dtype=float)[order]
        self.values = np.asarray(values, dtype=complex)[order]

    def __call__(self, t: float) -> complex:
        if t < self.times[0] or t > self.times[-1]:
            return 0.0 + 0.0j
        re = np.interp(t, self.times, self.values.real)
        im = np.interp(t, self.times, self.values.imag)
        return re + 1j * im


def read_pulse_file(path: str) -> FilePulse:
    """Read a three-column (t, Re f, Im f) whitespace table; '#' comments."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) < 3:
                raise ValueError(f"{path}: pulse rows need 3 columns")
            rows.append([float(c) for c in cols[:3]])
    if not rows:
        raise ValueError(f"{path}: empty pulse file")
    data = np.asarray(rows)
    return FilePulse(data[:, 0], data[:, 1] + 1j * data[:, 2])


# ---------------------------------------------------------------------------
# system

HERMITICITY_TOL = 1e-10


@dataclass
class SystemLiouvillian:
    """Time-dependent system Liouvillian assembled from config commands."""

    dim: int
    h0: np.ndarray = None
    pulses: list = field(default_factory=list)      # (envelope, coupling op d)
    lindblads: list = field(default_factory=list)   # (rate, operator)

    def __post_init__(self):
        if self.h0 is None:
            self.h0 = np.zeros((self.dim, self.dim), dtype=complex)

    def add_hamiltonian(self, h: np.ndarray):
        h = np.asarray(h, dtype=complex)
        if h.shape != (self.dim, self.dim):
            raise ValueError(f"Hamiltonian shape {h.shape} != {(self.dim, self.dim)}")
        if np.abs(h - h.conj().T).max() > HERMITICITY_TOL:
            raise ValueError("add_Hamiltonian: matrix is not Hermitian")
        self.h0 = self.h0 + h

    def add_pulse(self, envelope: Callable[[float], complex], coupling: np.ndarray):
        coupling = np.asarray(coupling, dtype=complex)
        if coupling.shape != (self.dim, self.dim):
            raise ValueError("pulse coupling operator has wrong shape")
        self.pulses.append((envelope, coupling))

    def add_lindblad(self, rate: float, op: np.ndarray):
        op = np.asarray(op, dtype=complex)
        if op.shape != (self.dim, self.dim):
            raise ValueError("Lindblad operator has wrong shape")
        if rate < 0:
            raise ValueError("Lindblad rate must be non-negative")
        self.lindblads.append((float(rate), op))

    @property
    def is_time_dependent(self) -> bool:
        return bool(self.pulses)

    def hamiltonian(self, t: float) -> np.ndarray:
        h = self.h0
        if self.pulses:
            h = h.copy()
            for envelope, d in self.pulses:
                f = envelope(t)
                h += f * d + np.conj(f) * d.conj().T
        return h

    def liouvillian(self, t: float = 0.0) -> np.ndarray:
        sup = commutator_superop(self.hamiltonian(t))
        for rate, op in self.lindblads:
            sup = sup + rate * lindblad_superop(op)
        return sup

    def step_propagator(self, t: float, dt: float) -> np.ndarray:
        """exp(L(t + dt/2) * dt): the Hamiltonian is frozen at the midpoint."""
        return expm(self.liouvillian(t + 0.5 * dt) * dt)
