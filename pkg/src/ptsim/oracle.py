"""Brute-force and analytic references used by the test suite.

Everything here recomputes reduced system dynamics without touching the
MPO machinery: :func:`dense_propagate` keeps the full system (x) modes
density matrix and traces at every step, :func:`path_sum` evaluates the
discretized influence functional literally over all Liouville paths,
:func:`system_ode` integrates the bare system master equation with an
adaptive ODE solver, and :func:`independent_boson_exact` is the
polaron-transform closed form for pure dephasing.  They deliberately
share only the expression/system layers with the production code (and
the result containers), so agreement actually means something.

All of these scale exponentially or worse; guards keep them in the
regime where they are still exact.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp

from .expressions import HBAR, KB
from .propagate import (Event, Output, PropagationResult, TimeGrid,
                        snap_to_grid)
from .system import SystemLiouvillian, trace_vector

__all__ = ["dense_propagate", "path_sum", "system_ode",
           "independent_boson_exact"]

_MAX_LIOUVILLE = 4096
_MAX_PATHS = 65536


def _apply_factors(state: np.ndarray, sup: np.ndarray, factors: Sequence[int],
                   dims: Sequence[int]) -> np.ndarray:
    """Apply a superoperator to selected tensor factors of a density tensor.

    ``state`` has one row and one column axis per factor (rows first);
    ``sup`` acts on the row-major vectorization of the density matrix of
    the factors listed in ``factors``.
    """
    k = len(dims)
    take = list(factors) + [k + f for f in factors]
    moved = np.moveaxis(state, take, range(len(take)))
    head = moved.shape[:len(take)]
    flat = moved.reshape(int(np.prod(head)), -1)
    out = (sup @ flat).reshape(head + moved.shape[len(take):])
    return np.moveaxis(out, range(len(take)), take)


def _lift(sup: np.ndarray, factors: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    """Dense matrix of a factor-local superoperator on the full space."""
    full = int(np.prod(dims))
    eye = np.eye(full * full, dtype=complex)
    shape = tuple(dims) + tuple(dims)
    cols = [_apply_factors(eye[:, j].reshape(shape), sup, factors, dims).reshape(-1)
            for j in range(full * full)]
    return np.column_stack(cols)


def dense_propagate(system: SystemLiouvillian,
                    modes: Sequence,
                    grid: TimeGrid,
                    initial: np.ndarray,
                    outputs: Sequence[Output] = (),
                    events: Sequence[Event] = (),
                    use_symmetric_trotter: bool = True,
                    propagate_alternate: bool = False,
                    joint_env: bool = False) -> PropagationResult:
    """Propagate the full system (x) environment density matrix.

    ``modes`` are single-mode descriptions (``sysdim``, ``mode_dim``,
    ``joint``, ``rho_init``, ``events`` attributes); each mode's joint
    Liouvillian is exponentiated on its own system-mode pair and applied
    in declaration order, interleaved with the bare system propagator in
    exactly the splitting the production engine uses.  ``joint_env``
    instead exponentiates the sum of all environment generators at once
    (a genuinely different Trotter error, useful as a cross-check).

    The reduced density matrix is recorded after every step, so the
    returned :class:`PropagationResult` is directly comparable.
    """
    d = system.dim
    hd = [d] + [m.mode_dim for m in modes]
    full = int(np.prod(hd))
    if full * full > _MAX_LIOUVILLE:
        raise ValueError(
            f"full Liouville dimension {full * full} exceeds the oracle guard "
            f"{_MAX_LIOUVILLE}")
    for i, m in enumerate(modes):
        if m.sysdim != d:
            raise ValueError(f"mode {i} was built for a {m.sysdim}-level system")

    initial = np.asarray(initial, dtype=complex)
    if initial.shape != (d, d):
        raise ValueError(f"initial state has shape {initial.shape}, system is {d}")
    state = initial
    for m in modes:
        state = np.kron(state, np.asarray(m.rho_init, dtype=complex))
    state = state.reshape(tuple(hd) + tuple(hd))

    mode_events: list[dict[int, list[np.ndarray]]] = []
    for m in modes:
        ev: dict[int, list[np.ndarray]] = {}
        for step, sup in getattr(m, "events", ()):
            ev.setdefault(int(step), []).append(np.asarray(sup, dtype=complex))
        mode_events.append(ev)

    sys_events: dict[int, list[np.ndarray]] = {}
    eye = np.eye(d)
    for ev in events:
        op = np.asarray(ev.op, dtype=complex)
        sup = np.kron(op, eye) if ev.side == "left" else np.kron(eye, op.T)
        sys_events.setdefault(snap_to_grid(ev.time, grid), []).append(sup)

    cache: dict = {}

    def sys_prop(t: float, dt: float) -> np.ndarray:
        key = ("s", 0.0 if not system.is_time_dependent else t, dt)
        if key not in cache:
            cache[key] = system.step_propagator(t, dt)
        return cache[key]

    def mode_prop(k: int, t: float) -> np.ndarray:
        joint = modes[k].joint
        key = ("m", k, 0.0 if not joint.is_time_dependent else t)
        if key not in cache:
            cache[key] = joint.step_propagator(t, grid.dt)
        return cache[key]

    def joint_prop(t: float) -> np.ndarray:
        time_dep = any(m.joint.is_time_dependent for m in modes)
        key = ("j", 0.0 if not time_dep else t)
        if key not in cache:
            from scipy.linalg import expm
            gen = np.zeros((full * full, full * full), dtype=complex)
            for k, m in enumerate(modes):
                gen += _lift(m.joint.liouvillian(t + grid.dt / 2), [0, k + 1], hd)
            cache[key] = expm(gen * grid.dt)
        return cache[key]

    def env_step(l: int, t0: float, reverse: bool = False):
        nonlocal state
        if joint_env and modes:
            for k in range(len(modes)):
                for sup in mode_events[k].get(l - 1, ()):
                    state = _apply_factors(state, sup, [0, k + 1], hd)
            u = joint_prop(t0)
            state = (u @ state.reshape(-1)).reshape(state.shape)
            return
        order = range(len(modes) - 1, -1, -1) if reverse else range(len(modes))
        for k in order:
            for sup in mode_events[k].get(l - 1, ()):
                state = _apply_factors(state, sup, [0, k + 1], hd)
            state = _apply_factors(state, mode_prop(k, t0), [0, k + 1], hd)

    n_out = len(outputs)
    out_ops = [np.asarray(o.op, dtype=complex) for o in outputs]
    values = np.zeros((grid.n + 1, n_out), dtype=complex)
    states = np.zeros((grid.n + 1, d, d), dtype=complex)
    trace = np.zeros(grid.n + 1, dtype=complex)
    rest = full // d

    def record(j: int):
        rho = np.einsum("ambm->ab", state.reshape(d, rest, d, rest))
        states[j] = rho
        trace[j] = np.trace(rho)
        for k, op in enumerate(out_ops):
            values[j, k] = np.trace(op @ rho)

    def apply_sys_events(j: int):
        nonlocal state
        for sup in sys_events.get(j, ()):
            state = _apply_factors(state, sup, [0], hd)

    record(0)
    apply_sys_events(0)

    for l in range(1, grid.n + 1):
        t0 = grid.ta + (l - 1) * grid.dt
        if propagate_alternate:
            if (l - 1) % 2 == 0:
                state = _apply_factors(state, sys_prop(t0, grid.dt), [0], hd)
                env_step(l, t0)
            else:
                env_step(l, t0, reverse=True)
                state = _apply_factors(state, sys_prop(t0, grid.dt), [0], hd)
        elif use_symmetric_trotter:
            state = _apply_factors(state, sys_prop(t0, grid.dt / 2), [0], hd)
            env_step(l, t0)
            state = _apply_factors(state, sys_prop(t0 + grid.dt / 2, grid.dt / 2),
                                   [0], hd)
        else:
            state = _apply_factors(state, sys_prop(t0, grid.dt), [0], hd)
            env_step(l, t0)
        record(l)
        apply_sys_events(l)

    return PropagationResult(grid.times, values, states, trace,
                             [o.label for o in outputs])


def path_sum(coeffs: np.ndarray, avals: np.ndarray, system: SystemLiouvillian,
             grid: TimeGrid, initial: np.ndarray,
             use_symmetric_trotter: bool = True,
             counter_phase: float = 0.0) -> np.ndarray:
    """Reduced dynamics by explicit summation over all Liouville paths.

    The influence weight of a path (s_1, ..., s_n), s = nu*D + mu, is

        prod_{l} prod_{l' <= l} exp(-(a_nu_l - a_mu_l)
                                    (c_{l-l'} a_nu_{l'} - conj(c_{l-l'}) a_mu_{l'}))

    with ``coeffs`` the discretized memory kernel (lags beyond its length
    contribute nothing) and ``avals`` the diagonal of the coupling
    operator.  ``counter_phase`` (the polaron shift times dt) adds the
    counter-term phase exp(-i phase (a_nu^2 - a_mu^2)) per step.  System
    propagators act between consecutive path indices with the requested
    splitting.  Returns the (n+1, D, D) array of reduced density matrices.
    """
    d = system.dim
    ldim = d * d
    if ldim ** grid.n > _MAX_PATHS:
        raise ValueError(f"{ldim ** grid.n} paths exceed the oracle guard "
                         f"{_MAX_PATHS}")
    a = np.asarray(avals, dtype=float)
    if a.shape != (d,):
        raise ValueError("path_sum needs one coupling eigenvalue per level")
    coeffs = np.asarray(coeffs, dtype=complex)

    nu = np.repeat(a, d)
    mu = np.tile(a, d)
    diff = nu - mu
    lag = [np.exp(-np.outer(diff, c * nu - np.conj(c) * mu)) for c in coeffs]
    w0 = np.exp(-diff * (coeffs[0] * nu - np.conj(coeffs[0]) * mu))
    w0 = w0 * np.exp(-1j * counter_phase * (nu * nu - mu * mu))

    dt = grid.dt
    times = [grid.ta + (l - 1) * dt for l in range(1, grid.n + 1)]
    if use_symmetric_trotter:
        half_in = [system.step_propagator(t, dt / 2) for t in times]
        half_out = [system.step_propagator(t + dt / 2, dt / 2) for t in times]
        mids = [half_in[l] @ half_out[l - 1] for l in range(1, grid.n)]
        pre = half_in[0]
    else:
        full = [system.step_propagator(t, dt) for t in times]
        mids = full[1:]
        pre = full[0]
        half_out = None

    initial = np.asarray(initial, dtype=complex)
    states = np.zeros((grid.n + 1, d, d), dtype=complex)
    states[0] = initial

    def readout(l: int, amps: np.ndarray, last: np.ndarray) -> np.ndarray:
        r = np.zeros(ldim, dtype=complex)
        np.add.at(r, last, amps)
        if half_out is not None:
            r = half_out[l - 1] @ r
        return r.reshape(d, d)

    v = pre @ initial.reshape(-1)
    amps = v * w0
    paths = np.arange(ldim, dtype=np.intp)[:, None]
    states[1] = readout(1, amps, paths[:, -1])

    for l in range(2, grid.n + 1):
        p = len(amps)
        step = mids[l - 2]
        grown = (amps[:, None] * step[:, paths[:, -1]].T) * w0[None, :]
        for j in range(paths.shape[1]):
            delta = l - (j + 1)
            if delta < len(coeffs):
                grown = grown * lag[delta][:, paths[:, j]].T
        paths = np.column_stack([np.repeat(paths, ldim, axis=0),
                                 np.tile(np.arange(ldim, dtype=np.intp), p)])
        amps = grown.reshape(-1)
        states[l] = readout(l, amps, paths[:, -1])

    return states


def system_ode(system: SystemLiouvillian, grid: TimeGrid, initial: np.ndarray,
               rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """Bare-system master equation by adaptive ODE integration.

    Unlike the stepped engine this resolves the Liouvillian continuously
    in time, so it is an independent reference for driven systems.
    Returns the (n+1, D, D) state series on the grid.
    """
    d = system.dim
    y0 = np.asarray(initial, dtype=complex).reshape(-1)

    def rhs(t, y):
        return system.liouvillian(t) @ y

    sol = solve_ivp(rhs, (grid.ta, grid.times[-1]), y0, t_eval=grid.times,
                    rtol=rtol, atol=atol, method="DOP853")
    if not sol.success:
        raise RuntimeError(f"ODE reference failed: {sol.message}")
    return sol.y.T.reshape(grid.n + 1, d, d)


def independent_boson_exact(J: Callable, temperature: float, times,
                            omega_max: float = np.inf,
                            limit: int = 500) -> np.ndarray:
    """Pure-dephasing coherence of the independent-boson model.

    For H_S = 0, coupling |1><1| and initial coherence 1, the polaron
    transformation gives the closed form

        <sx(t)> = exp( int_0^inf dw J(w)/w^2 [ (cos wt - 1) coth(hw/2kT)
                                               - i sin wt ] )

    evaluated here by adaptive quadrature.  Matches runs with the
    polaron-shift counter-term enabled (without it the result picks up
    an extra linear phase).  Returns complex values, one per time.
    """
    if temperature > 0.0:
        scale = HBAR / (2.0 * KB * temperature)

        def thermal(w):
            return 1.0 / math.tanh(scale * w)
    else:
        def thermal(w):
            return 1.0

    out = np.empty(len(times), dtype=complex)
    for i, t in enumerate(times):
        if t == 0.0:
            out[i] = 1.0
            continue

        def re_part(w):
            if w == 0.0:
                return 0.0
            return J(w) * thermal(w) * (math.cos(w * t) - 1.0) / (w * w)

        def im_part(w):
            if w == 0.0:
                return 0.0
            return -J(w) * math.sin(w * t) / (w * w)

        re, _ = quad(re_part, 0.0, omega_max, limit=limit)
        im, _ = quad(im_part, 0.0, omega_max, limit=limit)
        out[i] = np.exp(re + 1j * im)
    return out
