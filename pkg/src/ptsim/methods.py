"""PT-MPO generation from environment models.

Two families of generators live here:

* **Explicit modes** — each environment mode is a small Hilbert space
  attached to the system.  The joint step propagator is exponentiated
  exactly, reshaped into a one-step MPO block, and the per-mode process
  tensors are folded together either sequentially
  (:func:`ace_sequential`) or pairwise in a binary tree
  (:func:`ace_tree`).  :func:`discretize_continuum` turns a spectral
  density into such modes.

* **Gaussian environments** — continua of linearly coupled modes are
  integrated out analytically.  The discretized influence functional
  couples every pair of time steps through lag coefficients
  (:func:`gaussian_kernels`); its per-step columns are diagonal MPOs
  that are multiplied and compressed column by column
  (:func:`gaussian_jp`), by shift-doubling over the time axis
  (:func:`gaussian_dnc`), or into a cyclically reused bulk block
  (:func:`gaussian_periodic`).

All frequencies are in 1/ps, times in ps, energies in meV, and
temperatures in Kelvin.  Spectral densities map 1/ps to 1/ps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import dblquad, quad

from .expressions import HBAR, KB
from .process_tensor import (
    ProcessTensor,
    _product_block,
    expand_degenerate,
    preselect_combine,
    reduce_by_degeneracy,
    stack,
)
from .system import SystemLiouvillian, trace_vector
from .tensor import MPOBlock, stats

__all__ = [
    "CompressionParams", "apply_final_sweeps",
    "SingleModeSpec", "pt_from_single_mode", "ace_sequential", "ace_tree",
    "qd_phonon_J", "TabulatedSpectralDensity", "read_spectral_density_file",
    "flat_spectral_density",
    "BathSpec", "bath_correlation", "polaron_shift_integral",
    "InfluenceKernel", "gaussian_kernels", "kernels_from_correlation",
    "lowering_op", "boson_thermal_state", "fermi_occupation",
    "recommended_mode_count", "discretize_continuum",
    "gaussian_jp", "gaussian_dnc", "gaussian_periodic", "gaussian_pt",
    "PeriodicProcessTensor",
]


# ---------------------------------------------------------------------------
# compression parameters

@dataclass
class CompressionParams:
    """Sweep thresholds and fine-tuning knobs shared by all generators.

    ``threshold`` is the base relative truncation threshold.  The ratio
    fields scale it separately for forward sweeps, backward sweeps and
    product-bond preselection.  ``range_factor > 1`` makes early
    combinations run at ``threshold / range_factor``, interpolated
    exponentially up to ``threshold`` for the last one.  After
    generation, ``final_sweep_n`` extra sweep pairs run at
    ``final_sweep_threshold`` (defaulting to ``threshold``).
    """

    threshold: float = 0.0
    forward_ratio: float = 1.0
    backward_ratio: float = 1.0
    select_ratio: float = 1.0
    range_factor: float = 1.0
    final_sweep_n: int = 0
    final_sweep_threshold: Optional[float] = None

    def level_threshold(self, level: int, levels: int) -> float:
        r = self.range_factor
        if levels <= 1 or r == 1.0:
            return self.threshold
        x = level / (levels - 1)
        return self.threshold * r ** (x - 1.0)

    def forward(self, eps: float) -> float:
        return eps * self.forward_ratio

    def backward(self, eps: float) -> float:
        return eps * self.backward_ratio

    def select(self, eps: float) -> float:
        return eps * self.select_ratio


def apply_final_sweeps(pt: ProcessTensor, comp: CompressionParams):
    """Run the configured number of extra sweep pairs on a finished PT."""
    eps = comp.final_sweep_threshold
    if eps is None:
        eps = comp.threshold
    for _ in range(comp.final_sweep_n):
        pt.compress(comp.forward(eps), comp.backward(eps))


# ---------------------------------------------------------------------------
# explicit environment modes

@dataclass
class SingleModeSpec:
    """One explicit environment mode attached to the system.

    ``joint`` is the Liouvillian of system (x) mode (Hamiltonian and any
    Lindblad terms act on the product space); ``rho_init`` is the mode's
    initial density matrix.  ``events`` are ``(step_index, superop)``
    pairs: the superoperator (on the joint Liouville space) is folded
    into the step propagator right before step ``step_index + 1`` acts.
    """

    sysdim: int
    mode_dim: int
    joint: SystemLiouvillian
    rho_init: np.ndarray
    events: list = field(default_factory=list)


def _reorder_joint(u: np.ndarray, d: int, dm: int) -> np.ndarray:
    """Regroup a joint-space propagator into (sys out, mode out, sys in, mode in).

    The input is a matrix on the row-major vectorization of the joint
    Hilbert space; the output has shape (d^2, dm^2, d^2, dm^2).
    """
    t = u.reshape(d, dm, d, dm, d, dm, d, dm)
    t = t.transpose(0, 2, 1, 3, 4, 6, 5, 7)
    return np.ascontiguousarray(t.reshape(d * d, dm * dm, d * d, dm * dm))


def _block_from_dense(t4: np.ndarray, ldim: int) -> MPOBlock:
    """Build a block from a dense (ldim, out, ldim, in) tensor, dropping zeros."""
    blk = MPOBlock(ldim, t4.shape[3], t4.shape[1])
    for a_out in range(ldim):
        for a_in in range(ldim):
            m = t4[a_out, :, a_in, :]
            if np.any(m):
                blk.entries[a_out * ldim + a_in] = np.ascontiguousarray(m)
    return blk


def pt_from_single_mode(spec: SingleModeSpec, grid) -> ProcessTensor:
    """Exact PT of one mode: per-step propagators with the mode traced out.

    The first block absorbs the mode's initial state, the last one its
    trace; interior bonds carry the full mode Liouville space, so the
    result is typically compressed afterwards.
    """
    d, dm = spec.sysdim, spec.mode_dim
    if spec.joint.dim != d * dm:
        raise ValueError("joint Liouvillian dimension does not match sysdim * mode_dim")
    rho = np.asarray(spec.rho_init, dtype=complex)
    if rho.shape != (dm, dm):
        raise ValueError("mode initial state has wrong shape")
    if abs(np.trace(rho) - 1.0) > 1e-9:
        raise ValueError("mode initial state must have unit trace")
    n, dt = grid.n, grid.dt
    ldim, mdim = d * d, dm * dm

    events: dict[int, list] = {}
    for step, sup in spec.events:
        if not 0 <= step < n:
            raise ValueError(f"mode operator insertion at step {step} outside the grid")
        events.setdefault(int(step), []).append(np.asarray(sup, dtype=complex))

    tvec = trace_vector(dm)
    rvec = rho.reshape(-1)
    time_dep = spec.joint.is_time_dependent
    base = None if time_dep else spec.joint.step_propagator(0.0, dt)
    base_mats = None

    blocks = []
    interior_entries = None
    for l in range(1, n + 1):
        if base is not None and not events:
            if base_mats is None:
                base_mats = _reorder_joint(base, d, dm)
            mats = base_mats
        else:
            u = base if base is not None else spec.joint.step_propagator(
                grid.ta + (l - 1) * dt, dt)
            for sup in events.get(l - 1, ()):
                u = u @ sup
            mats = _reorder_joint(u, d, dm)
        first = l == 1
        last = l == n
        if first and last:
            t4 = np.einsum("e,aebf,f->ab", tvec, mats, rvec)[:, None, :, None]
            blocks.append(_block_from_dense(t4, ldim))
        elif first:
            t4 = np.tensordot(mats, rvec, axes=([3], [0]))[:, :, :, None]
            blocks.append(_block_from_dense(t4, ldim))
        elif last:
            t4 = np.tensordot(tvec, mats, axes=([0], [1]))[:, None, :, :]
            blocks.append(_block_from_dense(t4, ldim))
        elif mats is base_mats and not events:
            # time-independent interior blocks share their entry matrices
            if interior_entries is None:
                interior_entries = _block_from_dense(mats, ldim).entries
            blocks.append(MPOBlock(ldim, mdim, mdim, dict(interior_entries)))
        else:
            blocks.append(_block_from_dense(mats, ldim))

    closures = [np.ones(1, dtype=complex)]
    for blk in blocks[:-1]:
        closures.append(tvec.astype(complex).copy())
    closures.append(np.ones(1, dtype=complex))
    return ProcessTensor(d, dt, blocks, closures)


def ace_sequential(modes: list[SingleModeSpec], grid,
                   comp: Optional[CompressionParams] = None) -> ProcessTensor:
    """Fold mode PTs one at a time: earlier-declared modes act first."""
    if not modes:
        raise ValueError("no environment modes given")
    comp = comp or CompressionParams()
    acc = pt_from_single_mode(modes[0], grid)
    if len(modes) == 1:
        eps = comp.threshold
        acc.compress(comp.forward(eps), comp.backward(eps))
    for i, spec in enumerate(modes[1:]):
        eps = comp.level_threshold(i, len(modes) - 1)
        acc = stack(pt_from_single_mode(spec, grid), acc,
                    comp.forward(eps), comp.backward(eps))
    apply_final_sweeps(acc, comp)
    return acc


def ace_tree(modes: list[SingleModeSpec], grid,
             comp: Optional[CompressionParams] = None) -> ProcessTensor:
    """Combine mode PTs pairwise in a binary tree with bond preselection.

    At threshold zero this equals :func:`ace_sequential` exactly; at
    finite threshold the tree keeps intermediate bonds balanced and the
    range factor lets early levels run at tighter thresholds.
    """
    if not modes:
        raise ValueError("no environment modes given")
    comp = comp or CompressionParams()
    cur = [pt_from_single_mode(spec, grid) for spec in modes]
    if len(cur) == 1:
        eps = comp.threshold
        cur[0].compress(comp.forward(eps), comp.backward(eps))
    levels = max(1, math.ceil(math.log2(len(cur)))) if len(cur) > 1 else 1
    level = 0
    while len(cur) > 1:
        eps = comp.level_threshold(level, levels)
        nxt = []
        for i in range(0, len(cur) - 1, 2):
            nxt.append(preselect_combine(cur[i + 1], cur[i],
                                         comp.forward(eps), comp.backward(eps),
                                         comp.select(eps)))
        if len(cur) % 2:
            nxt.append(cur[-1])
        cur = nxt
        level += 1
    pt = cur[0]
    apply_final_sweeps(pt, comp)
    return pt


# ---------------------------------------------------------------------------
# spectral densities

_EV = 1.602176634e-19          # J
_HBAR_SI = 1.054571817e-34     # J s
_QD_DENSITY = 5370.0           # kg / m^3
_QD_SOUND = 5110.0             # m / s
_QD_DEFORM_E = 7.0 * _EV       # J
_QD_DEFORM_H = -3.5 * _EV      # J


def qd_phonon_J(omega, a_e: float = 4.0, a_h: Optional[float] = None):
    """Deformation-potential acoustic-phonon coupling of a quantum dot.

    ``omega`` in 1/ps, result in 1/ps.  ``a_e`` and ``a_h`` are electron
    and hole confinement radii in nm; ``a_h`` defaults to ``a_e / 1.15``.
    Super-ohmic: cubic at small frequencies with a Gaussian cutoff.
    """
    if a_h is None:
        a_h = a_e / 1.15
    w = np.asarray(omega, dtype=float) * 1e12
    ae, ah, cs = a_e * 1e-9, a_h * 1e-9, _QD_SOUND
    form = (_QD_DEFORM_E * np.exp(-(w * ae) ** 2 / (4.0 * cs * cs))
            - _QD_DEFORM_H * np.exp(-(w * ah) ** 2 / (4.0 * cs * cs)))
    dens = w ** 3 / (4.0 * np.pi ** 2 * _QD_DENSITY * _HBAR_SI * cs ** 5) * form ** 2
    out = dens * 1e-12
    return out if out.ndim else float(out)


@dataclass
class TabulatedSpectralDensity:
    """Linear interpolation of sampled (omega, J) pairs; zero outside."""

    omega: np.ndarray
    values: np.ndarray

    def __call__(self, w):
        return np.interp(w, self.omega, self.values, left=0.0, right=0.0)


def read_spectral_density_file(path: str) -> TabulatedSpectralDensity:
    """Two-column text file ``omega  J(omega)`` (both 1/ps)."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] < 2:
        raise ValueError(f"{path}: expected two columns (omega, J)")
    order = np.argsort(data[:, 0])
    return TabulatedSpectralDensity(data[order, 0].copy(), data[order, 1].copy())


def flat_spectral_density(value: float) -> Callable:
    """Constant spectral density; ``Gamma / (2 pi)`` gives decay rate Gamma."""
    def j(w):
        w = np.asarray(w, dtype=float)
        out = np.full(w.shape, float(value))
        return out if out.ndim else float(out)
    return j


# ---------------------------------------------------------------------------
# bath correlation function and influence coefficients

@dataclass
class BathSpec:
    """A linearly coupled continuum: spectral density, window, and statistics."""

    J: Callable
    coupling_op: np.ndarray
    omega_min: float = 0.0
    omega_max: float = 0.0
    temperature: float = 0.0
    subtract_polaron_shift: bool = True


def _thermal_factor(temperature: float) -> Callable:
    if temperature <= 0.0:
        return lambda w: 1.0
    scale = HBAR / (2.0 * KB * temperature)
    return lambda w: 1.0 / math.tanh(scale * w)


def bath_correlation(J: Callable, temperature: float, t: float,
                     omega_min: float = 0.0, omega_max: float = np.inf,
                     limit: int = 200) -> complex:
    """Time-domain bath correlation from the spectral density.

    Integrates ``J(w) [coth(hbar w / 2 kB T) cos(wt) - i sin(wt)]`` over
    the window.  ``t != 0`` uses oscillatory-weight quadrature and needs
    a finite ``omega_max``.
    """
    thermal = _thermal_factor(temperature)

    def sym(w):
        return J(w) * thermal(w)

    if t == 0.0:
        re, _ = quad(sym, omega_min, omega_max, limit=limit)
        return complex(re)
    if not np.isfinite(omega_max):
        raise ValueError("oscillatory correlation quadrature needs a finite window")
    re, _ = quad(sym, omega_min, omega_max, weight="cos", wvar=t, limit=limit)
    im, _ = quad(J, omega_min, omega_max, weight="sin", wvar=t, limit=limit)
    return complex(re, -im)


def polaron_shift_integral(J: Callable, omega_min: float = 0.0,
                           omega_max: float = np.inf, limit: int = 200) -> float:
    """Reorganization frequency ``int dw J(w) / w`` over the window."""
    def f(w):
        return J(w) / w if w != 0.0 else 0.0
    val, _ = quad(f, omega_min, omega_max, limit=limit)
    return val


@dataclass
class InfluenceKernel:
    """Double-integrated correlation coefficients per step lag.

    ``coeffs[delta]`` weights the influence between two steps ``delta``
    apart (``delta = 0`` is the on-step triangle).  ``span`` doubles as
    the memory length: lags beyond it are dropped entirely.
    """

    dt: float
    coeffs: np.ndarray
    polaron_shift: float = 0.0

    @property
    def span(self) -> int:
        return len(self.coeffs)


def gaussian_kernels(J: Callable, temperature: float, dt: float, n: int,
                     omega_min: float = 0.0, omega_max: float = np.inf,
                     n_mem: Optional[int] = None, limit: int = 200) -> InfluenceKernel:
    """Influence coefficients of a Gaussian bath on an ``n``-step grid.

    The double time integrals over step cells reduce to single frequency
    integrals::

        c_0     = int dw J [ coth (1 - cos w dt) - i (w dt - sin w dt) ] / w^2
        c_delta = int dw J [ coth cos(w delta dt) - i sin(w delta dt) ]
                           * 4 sin^2(w dt / 2) / w^2

    evaluated with oscillatory-weight quadrature.  ``n_mem`` truncates
    the lag range (memory cut-off).
    """
    span = n if n_mem is None else min(int(n_mem), n)
    if span < 1:
        raise ValueError("kernel needs at least one step")
    thermal = _thermal_factor(temperature)
    coeffs = np.empty(span, dtype=complex)

    def re0(w):
        if w == 0.0:
            return 0.0
        return J(w) * thermal(w) * (1.0 - math.cos(w * dt)) / (w * w)

    def im0(w):
        if w == 0.0:
            return 0.0
        return J(w) * (w * dt - math.sin(w * dt)) / (w * w)

    re, _ = quad(re0, omega_min, omega_max, limit=limit)
    im, _ = quad(im0, omega_min, omega_max, limit=limit)
    coeffs[0] = re - 1j * im

    def base_re(w):
        if w == 0.0:
            return 0.0
        return J(w) * thermal(w) * 4.0 * math.sin(0.5 * w * dt) ** 2 / (w * w)

    def base_im(w):
        if w == 0.0:
            return 0.0
        return J(w) * 4.0 * math.sin(0.5 * w * dt) ** 2 / (w * w)

    for delta in range(1, span):
        tau = delta * dt
        re, _ = quad(base_re, omega_min, omega_max, weight="cos", wvar=tau, limit=limit)
        im, _ = quad(base_im, omega_min, omega_max, weight="sin", wvar=tau, limit=limit)
        coeffs[delta] = re - 1j * im

    shift = polaron_shift_integral(J, omega_min, omega_max, limit=limit)
    return InfluenceKernel(dt=dt, coeffs=coeffs, polaron_shift=shift)


def kernels_from_correlation(corr: Callable, dt: float, n: int,
                             n_mem: Optional[int] = None,
                             polaron_shift: float = 0.0) -> InfluenceKernel:
    """Same coefficients by literal double quadrature of a time-domain
    correlation function.  Slow; mainly a cross-check for
    :func:`gaussian_kernels`."""
    span = n if n_mem is None else min(int(n_mem), n)
    coeffs = np.empty(span, dtype=complex)
    re = dblquad(lambda sp, s: corr(s - sp).real, 0.0, dt, 0.0, lambda s: s)[0]
    im = dblquad(lambda sp, s: corr(s - sp).imag, 0.0, dt, 0.0, lambda s: s)[0]
    coeffs[0] = re + 1j * im
    for delta in range(1, span):
        base = delta * dt
        re = dblquad(lambda sp, s: corr(base + s - sp).real, 0.0, dt, 0.0, dt)[0]
        im = dblquad(lambda sp, s: corr(base + s - sp).imag, 0.0, dt, 0.0, dt)[0]
        coeffs[delta] = re + 1j * im
    return InfluenceKernel(dt=dt, coeffs=coeffs, polaron_shift=polaron_shift)


# ---------------------------------------------------------------------------
# continuum discretization into explicit modes

def recommended_mode_count(omega_min: float, omega_max: float,
                           ta: float, te: float) -> int:
    """Heuristic: 0.4 modes per unit of frequency window times duration."""
    return max(1, int(round(0.4 * (omega_max - omega_min) * (te - ta))))


def lowering_op(dim: int) -> np.ndarray:
    a = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        a[k - 1, k] = math.sqrt(k)
    return a


def boson_thermal_state(omega: float, temperature: float, dim: int,
                        warn_tol: float = 1e-6) -> np.ndarray:
    """Thermal mode state truncated to ``dim`` levels and renormalized.

    Warns when the discarded occupation weight exceeds ``warn_tol``.
    """
    p = np.zeros(dim)
    if temperature <= 0.0:
        p[0] = 1.0
    else:
        if omega <= 0.0:
            raise ValueError("thermal occupation needs a positive mode frequency")
        x = math.exp(-HBAR * omega / (KB * temperature))
        discarded = x ** dim
        if discarded > warn_tol:
            warnings.warn(
                f"thermal state at omega={omega:g} discards occupation weight "
                f"{discarded:.2e}; increase the mode dimension", stacklevel=2)
        p[:] = x ** np.arange(dim)
        p /= p.sum()
    return np.diag(p).astype(complex)


def fermi_occupation(omega: float, e_fermi: float, temperature: float) -> float:
    """Fermi-Dirac occupation of a level at ``hbar * omega`` (meV) vs ``e_fermi``."""
    e = HBAR * omega - e_fermi
    if temperature <= 0.0:
        if e < 0.0:
            return 1.0
        return 0.5 if e == 0.0 else 0.0
    return 1.0 / (math.exp(e / (KB * temperature)) + 1.0)


def discretize_continuum(bath: BathSpec, n_modes: int, mode_dim: int = 2,
                         fermionic: bool = False, e_fermi: Optional[float] = None,
                         coupling: Optional[float] = None) -> list[SingleModeSpec]:
    """Sample the window into ``n_modes`` explicit modes.

    Frequencies sit at the midpoints of equal subintervals; couplings
    are ``sqrt(J(w_k) dw)`` unless a fixed ``coupling`` overrides them.
    Bosonic modes start thermal; fermionic ones (two-level) at the
    Fermi-Dirac occupation of ``e_fermi``.  With polaron-shift
    subtraction the squared coupling operator over the mode frequency is
    added to each mode Hamiltonian.
    """
    a_op = np.asarray(bath.coupling_op, dtype=complex)
    d = a_op.shape[0]
    if not bath.omega_max > bath.omega_min:
        raise ValueError("frequency window needs omega_max > omega_min")
    if n_modes < 1:
        raise ValueError("need at least one mode")
    dw = (bath.omega_max - bath.omega_min) / n_modes
    omegas = bath.omega_min + dw * (np.arange(n_modes) + 0.5)
    b = lowering_op(mode_dim)
    num = b.conj().T @ b
    shift_op = a_op @ a_op
    modes = []
    for w in omegas:
        if coupling is not None:
            g = float(coupling)
        else:
            g = math.sqrt(max(float(bath.J(w)), 0.0) * dw)
        h = (HBAR * w * np.kron(np.eye(d), num)
             + HBAR * g * (np.kron(a_op, b.conj().T)
                           + np.kron(a_op.conj().T, b)))
        if bath.subtract_polaron_shift and g != 0.0 and np.any(shift_op):
            if w == 0.0:
                raise ValueError(
                    "polaron-shift subtraction needs nonzero mode frequencies; "
                    "shift the window or disable the subtraction")
            h = h + HBAR * (g * g / w) * np.kron(shift_op, np.eye(mode_dim))
        joint = SystemLiouvillian(d * mode_dim)
        joint.add_hamiltonian(h)
        if fermionic:
            if mode_dim != 2:
                raise ValueError("fermionic modes are two-level")
            f = fermi_occupation(w, -1e6 if e_fermi is None else e_fermi,
                                 bath.temperature)
            rho = np.diag([1.0 - f, f]).astype(complex)
        else:
            rho = boson_thermal_state(w, bath.temperature, mode_dim)
        modes.append(SingleModeSpec(d, mode_dim, joint, rho))
    return modes


# ---------------------------------------------------------------------------
# Gaussian influence functionals
#
# The coupling operator is diagonalized first; degenerate eigenvalues
# are grouped, the influence MPO is built over the group labels (outer
# indices are diagonal pairs), and the result is rotated back to the
# full system at the end.  Closures start as all-ones vectors — cutting
# the chain at a bond with its closure removes every influence factor
# beyond it exactly — and stay consistent through every sweep.

def _influence_factors(kernel: InfluenceKernel, avals: np.ndarray,
                       subtract: bool):
    """Per-lag factor tables ``F[delta][s_later, s_earlier]`` plus the
    on-step factor (with the optional polaron counter-phase)."""
    a = np.asarray(avals, dtype=float)
    g = len(a)
    nu = np.repeat(a, g)          # s = nu * g + mu (ket label first)
    mu = np.tile(a, g)
    diff = nu - mu
    tables = np.empty((kernel.span, g * g, g * g), dtype=complex)
    for delta in range(kernel.span):
        c = kernel.coeffs[delta]
        tables[delta] = np.exp(-np.outer(diff, c * nu - np.conj(c) * mu))
    onsite = np.exp(-diff * (kernel.coeffs[0] * nu - np.conj(kernel.coeffs[0]) * mu))
    if subtract:
        onsite = onsite * np.exp(-1j * kernel.polaron_shift
                                 * (nu * nu - mu * mu) * kernel.dt)
    return tables, onsite


def _identity_block(ldim: int) -> MPOBlock:
    blk = MPOBlock(ldim, 1, 1)
    one = np.ones((1, 1), dtype=complex)
    for s in range(ldim):
        blk.entries[s * ldim + s] = one
    return blk


def _column_pt(k: int, length: int, tables: np.ndarray, onsite: np.ndarray,
               gdim: int, dt: float) -> ProcessTensor:
    """Influence column of step ``k`` (1-based) on a ``length``-site chain.

    Diagonal in the outer indices: the on-step factor at site ``k``, lag
    factors at the following sites, identity elsewhere.  The bond carries
    the step-``k`` outer value across the column's span.
    """
    ldim = gdim * gdim
    span = min(len(tables), length - k + 1)
    blocks = [_identity_block(ldim) for _ in range(length)]
    if span == 1:
        blk = MPOBlock(ldim, 1, 1)
        for s in range(ldim):
            blk.entries[s * ldim + s] = np.array([[onsite[s]]], dtype=complex)
        blocks[k - 1] = blk
    else:
        head = MPOBlock(ldim, 1, ldim)
        for s in range(ldim):
            col = np.zeros((ldim, 1), dtype=complex)
            col[s, 0] = onsite[s]
            head.entries[s * ldim + s] = col
        blocks[k - 1] = head
        for delta in range(1, span - 1):
            mid = MPOBlock(ldim, ldim, ldim)
            for s in range(ldim):
                mid.entries[s * ldim + s] = np.diag(tables[delta][s, :])
            blocks[k - 1 + delta] = mid
        tail = MPOBlock(ldim, ldim, 1)
        for s in range(ldim):
            tail.entries[s * ldim + s] = tables[span - 1][s, :][None, :]
        blocks[k - 2 + span] = tail
    closures = [np.ones(1, dtype=complex)]
    for blk in blocks:
        closures.append(np.ones(blk.dim_out, dtype=complex))
    return ProcessTensor(gdim, dt, blocks, closures)


def _shift_columns(pt: ProcessTensor, s: int) -> ProcessTensor:
    """Copy of an influence chain moved ``s`` sites later in time."""
    length = pt.n
    if s == 0:
        return pt.copy()
    ldim = pt.ldim
    for blk in pt.blocks[length - s:]:
        if blk.dim_in != 1 or blk.dim_out != 1:
            raise ValueError("shift would drop non-trivial blocks")
    blocks = [_identity_block(ldim) for _ in range(s)]
    blocks += [blk.copy() for blk in pt.blocks[:length - s]]
    # closure at bond b of the shifted chain is the original bond b - s
    closures = [np.ones(1, dtype=complex)] * (s + 1) + \
               [pt.closures[b - s].copy() for b in range(s + 1, length + 1)]
    return ProcessTensor(pt.sysdim, pt.dt, blocks, closures)


def _doubled_columns(n_cols: int, length: int, tables: np.ndarray,
                     onsite: np.ndarray, gdim: int, dt: float,
                     comp: CompressionParams, levels_total: int) -> ProcessTensor:
    """Product of influence columns ``1 .. n_cols`` by shift-doubling.

    All columns are shifted copies of the first, so each doubling level
    combines the accumulated chain with a shifted copy of itself —
    O(log n) combinations, each sweeping the whole chain once.
    """
    powers = [_column_pt(1, length, tables, onsite, gdim, dt)]
    n_doublings = n_cols.bit_length() - 1
    for lvl in range(n_doublings):
        eps = comp.level_threshold(lvl, levels_total)
        shifted = _shift_columns(powers[lvl], 1 << lvl)
        powers.append(preselect_combine(shifted, powers[lvl].copy(),
                                        comp.forward(eps), comp.backward(eps),
                                        comp.select(eps)))
    acc = None
    offset = 0
    eps = comp.level_threshold(max(0, levels_total - 1), levels_total)
    for lvl in range(n_doublings, -1, -1):
        if n_cols & (1 << lvl):
            piece = _shift_columns(powers[lvl], offset)
            acc = piece if acc is None else preselect_combine(
                acc, piece, comp.forward(eps), comp.backward(eps),
                comp.select(eps))
            offset += 1 << lvl
    return acc


def _clip_chain(pt: ProcessTensor, n_keep: int) -> ProcessTensor:
    """Keep the first ``n_keep`` steps, closing the cut bond with its closure.

    Closures start as all-ones vectors over the raw carried indices, so
    this removes every influence factor beyond the kept range exactly.
    """
    blocks = [pt.blocks[i] for i in range(n_keep)]
    closures = [pt.closures[i] for i in range(n_keep + 1)]
    q = closures[n_keep]
    last = blocks[-1]
    nb = MPOBlock(last.ldim, last.dim_in, 1)
    for key, mat in last.entries.items():
        row = q[None, :] @ mat
        if np.any(row):
            nb.entries[key] = row
    blocks[-1] = nb
    closures[n_keep] = np.ones(1, dtype=complex)
    return ProcessTensor(pt.sysdim, pt.dt, blocks, closures)


def _reduced_coupling(coupling_op: np.ndarray):
    v, labels, values = reduce_by_degeneracy(np.asarray(coupling_op, dtype=complex))
    return v, labels, np.asarray(values, dtype=float)


def gaussian_jp(kernel: InfluenceKernel, coupling_op: np.ndarray, grid,
                comp: Optional[CompressionParams] = None,
                subtract_polaron_shift: bool = True) -> ProcessTensor:
    """Gaussian-bath PT by sequential column combination.

    Absorbs one influence column per step and re-sweeps after each.
    Without a memory cut-off every sweep runs over the whole chain;
    with one, sweeps stay within a window around the new column.
    """
    comp = comp or CompressionParams()
    v, labels, values = _reduced_coupling(coupling_op)
    tables, onsite = _influence_factors(kernel, values, subtract_polaron_shift)
    gdim = len(values)
    n = grid.n
    span = kernel.span
    truncated = span < n

    acc = _column_pt(1, n, tables, onsite, gdim, grid.dt)
    if n == 1:
        eps = comp.threshold
        acc.compress(comp.forward(eps), comp.backward(eps))
    for k in range(2, n + 1):
        eps = comp.level_threshold(k - 2, n - 1)
        col = _column_pt(k, n, tables, onsite, gdim, grid.dt)
        window = (max(0, k - 1 - span), min(n, k + span)) if truncated else None
        acc = stack(col, acc, comp.forward(eps), comp.backward(eps), window=window)
    apply_final_sweeps(acc, comp)
    return expand_degenerate(acc, v, labels)


def gaussian_dnc(kernel: InfluenceKernel, coupling_op: np.ndarray, grid,
                 comp: Optional[CompressionParams] = None,
                 subtract_polaron_shift: bool = True) -> ProcessTensor:
    """Gaussian-bath PT by divide-and-conquer over the time axis.

    Columns are built unclipped on an extended chain, so every group of
    ``2^l`` consecutive columns is a shifted copy of the first one;
    doubling the group needs one preselected combination per level.  The
    extension is cut off exactly at the end through the tracked
    closures.  SVD count grows quasi-linearly with the step number,
    instead of quadratically as for the sequential scheme.
    """
    comp = comp or CompressionParams()
    v, labels, values = _reduced_coupling(coupling_op)
    tables, onsite = _influence_factors(kernel, values, subtract_polaron_shift)
    gdim = len(values)
    n = grid.n
    levels = max(1, math.ceil(math.log2(n))) if n > 1 else 1
    ext = n + kernel.span - 1
    red = _doubled_columns(n, ext, tables, onsite, gdim, grid.dt, comp, levels)
    red = _clip_chain(red, n)
    eps = comp.threshold
    red.compress(comp.forward(eps), comp.backward(eps))
    apply_final_sweeps(red, comp)
    return expand_degenerate(red, v, labels)


class _CyclicSeq:
    """Read-only sequence: explicit head, repeated cycle, explicit tail."""

    def __init__(self, head: list, cycle: list, n_cycled: int, tail: list):
        self.head = head
        self.cycle = cycle
        self.n_cycled = n_cycled
        self.tail = tail

    def __len__(self):
        return len(self.head) + self.n_cycled + len(self.tail)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        total = len(self)
        if i < 0:
            i += total
        if not 0 <= i < total:
            raise IndexError(i)
        if i < len(self.head):
            return self.head[i]
        i -= len(self.head)
        if i < self.n_cycled:
            return self.cycle[i % len(self.cycle)]
        return self.tail[i - self.n_cycled]


class PeriodicProcessTensor(ProcessTensor):
    """PT whose bulk repeats cyclically; stores O(period) distinct blocks.

    Compression in place is not supported (bulk blocks are shared);
    :meth:`materialize` yields an ordinary per-step copy.
    """

    def compress(self, *args, **kwargs):
        raise TypeError("cyclic PT blocks are shared; materialize() first")

    def copy(self):
        return self.materialize()

    def materialize(self) -> ProcessTensor:
        return ProcessTensor(
            self.sysdim, self.dt,
            [self.blocks[i].copy() for i in range(self.n)],
            [self.closures[i].copy() for i in range(self.n + 1)])


def _expand_block_list(blocks: list, v, labels, gdim: int, dt: float) -> list:
    if not blocks:
        return []
    trivial = [np.ones(1, dtype=complex)] * (len(blocks) + 1)
    tmp = ProcessTensor(gdim, dt, blocks, trivial)
    return expand_degenerate(tmp, v, labels).blocks


def _all_tuples(dims: list) -> np.ndarray:
    """Every index combination for the given bond sizes, first index slowest."""
    if not dims:
        return np.zeros((1, 0), dtype=np.int64)
    grids = np.meshgrid(*[np.arange(d) for d in dims], indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def _select_tuples(sigs: list, eps: float) -> np.ndarray:
    """Index tuples whose singular-value product is at least ``eps``.

    ``sigs`` hold each factor's bond spectrum scaled to a leading value of
    one, so partial products only shrink as factors are appended: filtering
    after every factor never loses a tuple the full criterion would keep.
    Rows come out lexicographically sorted; the all-zero tuple is always
    kept.
    """
    tuples = np.zeros((1, 0), dtype=np.int64)
    weight = np.ones(1)
    for s in sigs:
        m = len(tuples)
        cand_w = (weight[:, None] * s[None, :]).ravel()
        cand_t = np.column_stack([np.repeat(tuples, len(s), axis=0),
                                  np.tile(np.arange(len(s)), m)])
        keep = cand_w >= eps
        keep[0] = True
        tuples, weight = cand_t[keep], cand_w[keep]
    return tuples


def gaussian_periodic(kernel: InfluenceKernel, coupling_op: np.ndarray, grid,
                      comp: Optional[CompressionParams] = None,
                      subtract_polaron_shift: bool = True) -> ProcessTensor:
    """Gaussian-bath PT with a cyclically reused bulk block.

    Requires a memory cut-off: the kernel span is the period and must be
    a power of two.  One window of that many columns is compressed once
    (shift-doubling); in the bulk each step is the product of the head
    of one window copy and the tail of the previous one, so the same
    period-length block set serves arbitrarily many steps.  Runs shorter
    than two windows fall back to divide-and-conquer.
    """
    comp = comp or CompressionParams()
    n_mem = kernel.span
    n = grid.n
    if n_mem & (n_mem - 1):
        raise ValueError(
            f"periodic generation needs the memory length to be a power of two "
            f"(got {n_mem}); adjust n_mem or use the divide-and-conquer method")
    if n < 2 * n_mem:
        warnings.warn("run shorter than two memory windows; using divide-and-conquer",
                      stacklevel=2)
        return gaussian_dnc(kernel, coupling_op, grid, comp, subtract_polaron_shift)

    v, labels, values = _reduced_coupling(coupling_op)
    tables, onsite = _influence_factors(kernel, values, subtract_polaron_shift)
    gdim = len(values)
    ldim = gdim * gdim
    levels = max(1, int(math.log2(n_mem))) if n_mem > 1 else 1

    sig_map: dict[int, list] = {}

    def register(src: ProcessTensor) -> ProcessTensor:
        """Canonicalize a window and keep its per-bond singular values.

        The end-bond closure (a scalar left behind by shifts and sweeps)
        is folded into the last block: window blocks must carry their
        full influence on their own, since sites past a window's end get
        no bond index -- and hence no closure factor -- from it.
        """
        sig: list = []
        src.compress(0.0, 0.0, record=sig)
        sig_map[id(src)] = sig[::-1]          # index b-1 <-> internal bond b
        tail = src.closures[src.n]
        if tail[0] != 1.0:
            last = src.blocks[-1]
            last.entries = {k: v * tail[0] for k, v in last.entries.items()}
            src.closures[src.n] = np.ones(1, dtype=complex)
        return src

    win = register(_doubled_columns(n_mem, 2 * n_mem - 1, tables, onsite, gdim,
                                    grid.dt, comp, levels))
    n_groups = n // n_mem
    rem = n % n_mem
    rem_win = None
    if rem:
        rem_full = _doubled_columns(rem, rem + n_mem - 1, tables, onsite, gdim,
                                    grid.dt, comp, levels)
        rem_win = register(_clip_chain(rem_full, rem))

    clip_cache: dict[int, ProcessTensor] = {}

    def group_window(g: int) -> ProcessTensor:
        avail = n - g * n_mem
        if avail >= win.n:
            return win
        if avail not in clip_cache:
            clip_cache[avail] = register(_clip_chain(win.copy(), avail))
        return clip_cache[avail]

    def contributors(t: int):
        """(start, window) pairs active at site t, latest start first."""
        out = []
        if rem_win is not None:
            p = t - n_groups * n_mem
            if 1 <= p <= rem_win.n:
                out.append((n_groups * n_mem, rem_win))
        g0 = (t - 1) // n_mem
        for g in (g0, g0 - 1):
            if 0 <= g < n_groups:
                src = group_window(g)
                p = t - g * n_mem
                if 1 <= p <= src.n:
                    out.append((g * n_mem, src))
        out.sort(key=lambda sw: -sw[0])
        return out

    # Overlapping windows multiply; their raw product bond is the product of
    # the window bonds.  Keep only index tuples whose singular-value product
    # clears the selection threshold -- same rule as the pairwise preselected
    # combination, extended to however many windows cover the bond.
    select_eps = comp.select(comp.threshold)
    bond_cache: dict[int, tuple] = {}
    trivial_bond = ([], np.zeros((1, 0), dtype=np.int64),
                    np.ones(1, dtype=complex))

    def bond_data(t: int):
        """(window list, kept index tuples, closure) at global bond t."""
        if not 0 < t < n:
            return trivial_bond
        if t not in bond_cache:
            items = [(start, src, t - start) for start, src in contributors(t)
                     if 0 < t - start < src.n]
            dims = [src.blocks[p].dim_in for _, src, p in items]
            if len(items) < 2 or select_eps <= 0.0:
                tuples = _all_tuples(dims)
            else:
                tuples = _select_tuples(
                    [sig_map[id(src)][p - 1] for _, src, p in items], select_eps)
            q = np.ones(len(tuples), dtype=complex)
            for c, (_, src, p) in enumerate(items):
                q = q * src.closures[p][tuples[:, c]]
            bond_cache[t] = (items, tuples, q)
        return bond_cache[t]

    def site_block(t: int) -> MPOBlock:
        facs = contributors(t)
        if not facs:
            return _identity_block(ldim)
        items_in, t_in, _ = bond_data(t - 1)
        items_out, t_out, _ = bond_data(t)
        col_in = {start: c for c, (start, _, _) in enumerate(items_in)}
        col_out = {start: c for c, (start, _, _) in enumerate(items_out)}
        m_in, m_out = len(t_in), len(t_out)
        zeros_in = np.zeros(m_in, dtype=np.int64)
        zeros_out = np.zeros(m_out, dtype=np.int64)
        cols_in = [t_in[:, col_in[start]] if start in col_in else zeros_in
                   for start, _ in facs]
        cols_out = [t_out[:, col_out[start]] if start in col_out else zeros_out
                    for start, _ in facs]
        stats.record_product_bond(m_out)

        if len(facs) == 1:
            start, src = facs[0]
            return src.blocks[t - start - 1].copy()

        # staged product, each stage restricted to the kept tuples' prefixes
        acc = None
        key_in = key_out = None
        pos_in = pos_out = None
        for j, (start, src) in enumerate(facs):
            blk = src.blocks[t - start - 1]
            if acc is None:
                acc = blk
                key_in = cols_in[0][:, None]
                key_out = cols_out[0][:, None]
                pos_in, pos_out = cols_in[0], cols_out[0]
                continue
            key_in = np.column_stack([key_in, cols_in[j]])
            key_out = np.column_stack([key_out, cols_out[j]])
            _, fo, inv_o = np.unique(key_out, axis=0, return_index=True,
                                     return_inverse=True)
            _, fi, inv_i = np.unique(key_in, axis=0, return_index=True,
                                     return_inverse=True)
            acc = _product_block(acc, blk, ldim,
                                 sel_out=(pos_out[fo], cols_out[j][fo]),
                                 sel_in=(pos_in[fi], cols_in[j][fi]))
            pos_out, pos_in = inv_o, inv_i
        assert acc.dim_in == m_in and acc.dim_out == m_out
        return acc

    def bond_closure(t: int) -> np.ndarray:
        return bond_data(t)[2]

    # cyclic middle: sites whose two contributing windows are both full
    last_full = (n - win.n) // n_mem          # last group with an unclipped window
    t_hi = (last_full + 1) * n_mem if last_full >= 1 else 0
    if t_hi > 2 * n_mem:
        head_n = 2 * n_mem
        cycle_blocks = [site_block(t) for t in range(n_mem + 1, 2 * n_mem + 1)]
        cycle_closures = [bond_closure(t) for t in range(n_mem + 1, 2 * n_mem + 1)]
        n_cycled = t_hi - head_n
        # head covers one full period beyond the lead-in so the cycle
        # starts aligned at phase zero
        blk_head = [site_block(t) for t in range(1, head_n + 1)]
        blk_tail = [site_block(t) for t in range(t_hi + 1, n + 1)]
        cls_head = [np.ones(1, dtype=complex)] + \
                   [bond_closure(t) for t in range(1, head_n + 1)]
        cls_tail = [bond_closure(t) for t in range(t_hi + 1, n)] + \
                   [np.ones(1, dtype=complex)]
        exp_head = _expand_block_list(blk_head, v, labels, gdim, grid.dt)
        exp_cycle = _expand_block_list(cycle_blocks, v, labels, gdim, grid.dt)
        exp_tail = _expand_block_list(blk_tail, v, labels, gdim, grid.dt)
        blocks = _CyclicSeq(exp_head, exp_cycle, n_cycled, exp_tail)
        closures = _CyclicSeq(cls_head, cycle_closures, n_cycled, cls_tail)
        dim = len(labels)
        return PeriodicProcessTensor(dim, grid.dt, blocks, closures)

    # short run: materialize every site (still O(n_mem) windows)
    blocks = [site_block(t) for t in range(1, n + 1)]
    closures = [np.ones(1, dtype=complex)] + \
               [bond_closure(t) for t in range(1, n)] + \
               [np.ones(1, dtype=complex)]
    red = ProcessTensor(gdim, grid.dt, blocks, closures)
    return expand_degenerate(red, v, labels)


def gaussian_pt(bath: BathSpec, grid, comp: Optional[CompressionParams] = None,
                method: str = "jp", n_mem: Optional[int] = None) -> ProcessTensor:
    """Convenience front end: kernel quadrature plus the chosen combination.

    ``method`` is one of ``"jp"`` (sequential columns), ``"dnc"``
    (shift-doubling) or ``"periodic"`` (cyclic bulk block; needs
    ``n_mem``).
    """
    comp = comp or CompressionParams()
    kernel = gaussian_kernels(bath.J, bath.temperature, grid.dt, grid.n,
                              bath.omega_min, bath.omega_max, n_mem=n_mem)
    if method == "jp":
        return gaussian_jp(kernel, bath.coupling_op, grid, comp,
                           bath.subtract_polaron_shift)
    if method == "dnc":
        return gaussian_dnc(kernel, bath.coupling_op, grid, comp,
                            bath.subtract_polaron_shift)
    if method == "periodic":
        if n_mem is None:
            raise ValueError("periodic generation needs a memory cut-off")
        pt = gaussian_periodic(kernel, bath.coupling_op, grid, comp,
                               bath.subtract_polaron_shift)
        if comp.final_sweep_n:
            if isinstance(pt, PeriodicProcessTensor):
                pt = pt.materialize()
            apply_final_sweeps(pt, comp)
        return pt
    raise ValueError(f"unknown Gaussian method '{method}'")
