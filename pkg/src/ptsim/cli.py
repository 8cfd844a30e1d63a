"""Command-line drivers.

Three binaries are exposed: ``ACE`` (the main workflow: read a
configuration file, generate or load process tensors, propagate, write
the output table), ``PTB_analyze`` (inspect a stored process-tensor
file) and ``readexpression`` (evaluate an operator expression and print
the matrix).

The ``ACE`` invocation is ``ACE [configfile] -key value ...``; an
optional leading non-dash token names the configuration file and every
``-key value ...`` group is appended after the file's entries, so
command-line values override the file for scalar parameters.
"""

from __future__ import annotations

import sys
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import (ConfigError, MODE_FILE_COMMANDS, ParameterMap,
                     apply_cli_overrides, matrix_arg, parse_config_file,
                     scalar_arg, strip_braces)
from .expressions import ExpressionError, matrix_from_expression
from .methods import (BathSpec, CompressionParams, PeriodicProcessTensor,
                      SingleModeSpec, ace_sequential, ace_tree,
                      apply_final_sweeps, discretize_continuum, gaussian_pt,
                      pt_from_single_mode, qd_phonon_J,
                      read_spectral_density_file, flat_spectral_density)
from .process_tensor import (MAGIC, _HEADER, ProcessTensor, expand_outer,
                             load_pt, save_pt, stack)
from .propagate import Event, Output, TimeGrid, propagate, snap_to_grid
from .system import GaussPulse, SystemLiouvillian, read_pulse_file

__all__ = ["RunPlan", "build_plan", "execute_plan", "main_ACE",
           "main_PTB_analyze", "main_readexpression"]


DEFAULT_BOSON_SYSOP = "|1><1|_2"
DEFAULT_FERMION_SYSOP = "|0><1|_2"


@dataclass
class RunPlan:
    """Everything one ``ACE`` invocation resolved to."""

    grid: TimeGrid
    system: SystemLiouvillian
    initial: np.ndarray
    outputs: list[Output]
    events: list[Event]
    method: str                       # none | ace_sequential | ace_tree |
                                      # gaussian_jp | gaussian_dnc | gaussian_periodic
    comp: CompressionParams
    n_mem: Optional[int] = None
    modes: list = field(default_factory=list)
    bath: Optional[BathSpec] = None
    add_pt: list = field(default_factory=list)      # (path, dim_left, dim_right)
    initial_pt: Optional[str] = None
    write_pt: Optional[str] = None
    buffer_blocksize: Optional[int] = None
    outfile: Optional[str] = None
    precision: int = 8
    use_symmetric_trotter: bool = True
    propagate_alternate: bool = False


def _pt_file_dim(path: str) -> int:
    """System dimension from a PT file header (without loading the body)."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise ConfigError(f"{path}: truncated PT file")
    magic, _, sysdim, *_ = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise ConfigError(f"{path}: not a PT file")
    return sysdim


def _infer_dimension(pmap: ParameterMap, modes: list,
                     loaded_dims: list[int]) -> int:
    """System dimension from the first constraining command."""
    m = pmap.get_matrix("initial")
    if m is not None:
        return m.shape[0]
    for name in ("add_Hamiltonian", "add_Lindblad", "add_Output"):
        for e in pmap.all(name):
            mat = matrix_arg(e.args[-1], f"{e.origin}: {name}")
            return mat.shape[0]
    for e in pmap.all("add_Pulse"):
        mat = matrix_arg(e.args[-1], f"{e.origin}: add_Pulse")
        return mat.shape[0]
    if modes:
        return modes[0].sysdim
    if loaded_dims:
        return loaded_dims[0]
    return 2


def _compression(pmap: ParameterMap) -> CompressionParams:
    return CompressionParams(
        threshold=pmap.get_float("threshold", 0.0),
        forward_ratio=pmap.get_float("forward_threshold_ratio", 1.0),
        backward_ratio=pmap.get_float("backward_threshold_ratio", 1.0),
        select_ratio=pmap.get_float("select_threshold_ratio", 1.0),
        range_factor=pmap.get_float("threshold_range_factor", 1.0),
        final_sweep_n=pmap.get_int("final_sweep_n", 0),
        final_sweep_threshold=pmap.get_float("final_sweep_threshold"),
    )


def _memory_steps(pmap: ParameterMap, dt: float) -> Optional[int]:
    n_mem = pmap.get_int("n_mem")
    if n_mem is not None:
        return n_mem
    t_mem = pmap.get_float("t_mem")
    if t_mem is not None:
        return max(1, int(round(t_mem / dt)))
    return None


def _spectral_density(pmap: ParameterMap, prefix: str):
    """Spectral density from <prefix>_J_from_file / _J_type / _rate."""
    path = pmap.get_str(f"{prefix}_J_from_file")
    if path is not None:
        return read_spectral_density_file(path)
    e = pmap.last(f"{prefix}_J_type")
    if e is not None:
        if not e.args or strip_braces(e.args[0]) != "QDPhonon":
            raise ConfigError(f"{e.origin}: unknown spectral density type "
                              f"{e.args[0] if e.args else '?'!r}")
        a_e = pmap.get_float(f"{prefix}_J_a_e", 4.0)
        a_h = pmap.get_float(f"{prefix}_J_a_h", a_e / 1.15)
        return lambda w: qd_phonon_J(w, a_e, a_h)
    rate = pmap.get_float(f"{prefix}_rate")
    if rate is not None:
        return flat_spectral_density(rate / (2.0 * np.pi))
    return None


def _generator_bath(pmap: ParameterMap, prefix: str, default_op: str) -> BathSpec:
    op = pmap.get_matrix(f"{prefix}_SysOp",
                         matrix_from_expression(default_op))
    j = _spectral_density(pmap, prefix)
    return BathSpec(
        J=j,
        coupling_op=op,
        omega_min=pmap.get_float(f"{prefix}_omega_min", 0.0),
        omega_max=pmap.get_float(f"{prefix}_omega_max", 0.0),
        temperature=pmap.get_float(f"{prefix}_temperature", 0.0),
        subtract_polaron_shift=pmap.get_bool(f"{prefix}_subtract_polaron_shift",
                                             True),
    )


def _generator_modes(pmap: ParameterMap, prefix: str, default_op: str,
                     fermionic: bool) -> list:
    n_modes = pmap.get_int(f"{prefix}_N_modes")
    if not n_modes:
        return []
    bath = _generator_bath(pmap, prefix, default_op)
    mode_dim = 2 if fermionic else pmap.get_int(f"{prefix}_M", 2)
    coupling = pmap.get_float(f"{prefix}_g")
    rate = pmap.get_float(f"{prefix}_rate")
    if coupling is None and rate is not None:
        # fixed coupling reproducing the Markovian decay rate of a flat
        # continuum: g = sqrt(rate * window / (2 pi N))
        coupling = np.sqrt(rate * (bath.omega_max - bath.omega_min)
                           / (2.0 * np.pi * n_modes))
    if coupling is None and bath.J is None:
        raise ConfigError(f"{prefix} generator needs {prefix}_g, {prefix}_rate "
                          f"or a spectral density")
    e_fermi = pmap.get_float("Fermion_EFermi", -1e6) if fermionic else None
    return discretize_continuum(bath, n_modes, mode_dim, fermionic=fermionic,
                                e_fermi=e_fermi, coupling=coupling)


def _mode_events(pmap: ParameterMap, grid: TimeGrid, dim: int) -> list:
    """(step, superop) insertions for a mode sub-configuration."""
    eye = np.eye(dim)
    out = []
    for name, left in (("apply_Operator_left", True),
                       ("apply_Operator_right", False)):
        for e in pmap.all(name):
            if len(e.args) != 2:
                raise ConfigError(f"{e.origin}: {name} expects time and operator")
            t = scalar_arg(e.args[0], f"{e.origin}: {name}")
            op = matrix_arg(e.args[1], f"{e.origin}: {name}")
            step = snap_to_grid(t, grid)
            if step >= grid.n:
                warnings.warn(f"{e.origin}: {name} at t={t} has no following "
                              f"step; dropped")
                continue
            sup = np.kron(op, eye) if left else np.kron(eye, op.T)
            out.append((step, sup))
    return out


def _single_modes(pmap: ParameterMap, grid: TimeGrid) -> list:
    specs = []
    for e in pmap.entries:
        if e.name == "add_single_mode":
            if len(e.args) != 2:
                raise ConfigError(f"{e.origin}: add_single_mode expects the "
                                  f"joint Hamiltonian and the mode state")
            h = matrix_arg(e.args[0], f"{e.origin}: add_single_mode")
            rho = matrix_arg(e.args[1], f"{e.origin}: add_single_mode")
            dm = rho.shape[0]
            if h.shape[0] % dm:
                raise ConfigError(f"{e.origin}: Hamiltonian dimension "
                                  f"{h.shape[0]} is not a multiple of the mode "
                                  f"dimension {dm}")
            joint = SystemLiouvillian(h.shape[0])
            joint.add_hamiltonian(h)
            specs.append(SingleModeSpec(h.shape[0] // dm, dm, joint, rho))
        elif e.name == "add_single_mode_from_file":
            if len(e.args) != 2:
                raise ConfigError(f"{e.origin}: add_single_mode_from_file "
                                  f"expects a file name and the mode state")
            sub = parse_config_file(strip_braces(e.args[0]),
                                    known=MODE_FILE_COMMANDS)
            rho = matrix_arg(e.args[1], f"{e.origin}: add_single_mode_from_file")
            dm = rho.shape[0]
            joint, _ = _build_system(sub, dim=None)
            if joint.dim % dm:
                raise ConfigError(f"{e.origin}: mode file dimension {joint.dim} "
                                  f"is not a multiple of the mode dimension {dm}")
            spec = SingleModeSpec(joint.dim // dm, dm, joint, rho)
            spec.events.extend(_mode_events(sub, grid, joint.dim))
            specs.append(spec)
    return specs


def _build_system(pmap: ParameterMap, dim: Optional[int]):
    """System Liouvillian plus initial state from a parameter map.

    With ``dim=None`` the dimension is taken from the first operator
    (used for mode sub-configurations, which have no ``initial``).
    """
    h_entries = pmap.all("add_Hamiltonian")
    if dim is None:
        if not h_entries:
            raise ConfigError("mode file needs at least one add_Hamiltonian")
        dim = matrix_arg(h_entries[0].args[0]).shape[0]
    sys = SystemLiouvillian(dim)
    for e in h_entries:
        if len(e.args) != 1:
            raise ConfigError(f"{e.origin}: add_Hamiltonian expects one operator")
        sys.add_hamiltonian(matrix_arg(e.args[0], f"{e.origin}: add_Hamiltonian"))
    for e in pmap.all("add_Lindblad"):
        if len(e.args) != 2:
            raise ConfigError(f"{e.origin}: add_Lindblad expects rate and operator")
        rate = scalar_arg(e.args[0], f"{e.origin}: add_Lindblad")
        op = matrix_arg(e.args[1], f"{e.origin}: add_Lindblad")
        sys.add_lindblad(rate, op)
    for e in pmap.all("add_Pulse"):
        if not e.args:
            raise ConfigError(f"{e.origin}: add_Pulse expects a pulse type")
        kind = strip_braces(e.args[0])
        ctx = f"{e.origin}: add_Pulse"
        if kind == "Gauss":
            if len(e.args) != 6:
                raise ConfigError(f"{ctx} Gauss expects t_c, FWHM, area, "
                                  f"detuning and the coupling operator")
            t_c, fwhm, area, det = (scalar_arg(a, ctx) for a in e.args[1:5])
            coupling = matrix_arg(e.args[5], ctx)
            sys.add_pulse(GaussPulse(t_c, fwhm, area, det), coupling)
        elif kind == "file":
            if len(e.args) != 3:
                raise ConfigError(f"{ctx} file expects a file name and the "
                                  f"coupling operator")
            sys.add_pulse(read_pulse_file(strip_braces(e.args[1])),
                          matrix_arg(e.args[2], ctx))
        else:
            raise ConfigError(f"{ctx}: unknown pulse type {kind!r}")
    initial = pmap.get_matrix("initial")
    return sys, initial


def _resolve_method(pmap: ParameterMap, have_modes: bool) -> str:
    flags = [(name, pmap.get_bool(name, False)) for name in
             ("use_Gaussian_periodic", "use_Gaussian_divide_and_conquer",
              "use_Gaussian")]
    active = [name for name, on in flags if on]
    if len(active) > 1:
        warnings.warn(f"multiple Gaussian methods requested "
                      f"({', '.join(active)}); using {active[0]}")
    if active:
        return {"use_Gaussian_periodic": "gaussian_periodic",
                "use_Gaussian_divide_and_conquer": "gaussian_dnc",
                "use_Gaussian": "gaussian_jp"}[active[0]]
    if have_modes:
        return "ace_tree" if pmap.get_bool("use_combine_tree", False) else \
            "ace_sequential"
    return "none"


def build_plan(pmap: ParameterMap) -> RunPlan:
    ta = pmap.get_float("ta", 0.0)
    te = pmap.get_float("te", 10.0)
    dt = pmap.get_float("dt", 0.01)
    grid = TimeGrid.from_interval(ta, te, dt)

    modes = _generator_modes(pmap, "Boson", DEFAULT_BOSON_SYSOP, False) + \
        _generator_modes(pmap, "Fermion", DEFAULT_FERMION_SYSOP, True) + \
        _single_modes(pmap, grid)
    method = _resolve_method(pmap, bool(modes))

    bath = None
    if method.startswith("gaussian"):
        if modes:
            warnings.warn("explicit environment modes are ignored when a "
                          "Gaussian method is selected")
            modes = []
        bath = _generator_bath(pmap, "Boson", DEFAULT_BOSON_SYSOP)
        if bath.J is None:
            raise ConfigError("Gaussian methods need a spectral density "
                              "(Boson_J_from_file, Boson_J_type or Boson_rate)")
        if not bath.omega_max > bath.omega_min:
            raise ConfigError("Gaussian methods need Boson_omega_max > "
                              "Boson_omega_min")

    add_pt = []
    for e in pmap.all("add_PT"):
        if not 1 <= len(e.args) <= 3:
            raise ConfigError(f"{e.origin}: add_PT expects a file name and "
                              f"optional left/right dimensions")
        dl = int(scalar_arg(e.args[1], e.origin)) if len(e.args) > 1 else 1
        dr = int(scalar_arg(e.args[2], e.origin)) if len(e.args) > 2 else 1
        add_pt.append((strip_braces(e.args[0]), dl, dr))
    initial_pt = pmap.get_str("initial_PT")
    if initial_pt is not None and add_pt:
        raise ConfigError("add_PT and initial_PT cannot be combined in one run")
    if initial_pt is not None and method.startswith("gaussian"):
        raise ConfigError("initial_PT can only be extended with environment "
                          "modes, not with Gaussian methods")
    if len(pmap.all("initial_PT")) > 1:
        raise ConfigError("at most one initial_PT is allowed")

    loaded_dims = [dl * _pt_file_dim(p) * dr for p, dl, dr in add_pt]
    if initial_pt is not None:
        loaded_dims.append(_pt_file_dim(initial_pt))
    dim = _infer_dimension(pmap, modes, loaded_dims)
    system, initial = _build_system(pmap, dim)
    if initial is None:
        initial = np.zeros((dim, dim), dtype=complex)
        initial[0, 0] = 1.0

    outputs = []
    for e in pmap.all("add_Output"):
        if len(e.args) != 1:
            raise ConfigError(f"{e.origin}: add_Output expects one operator")
        outputs.append(Output(matrix_arg(e.args[0], f"{e.origin}: add_Output"),
                              label=strip_braces(e.args[0])))

    events = []
    for name, side in (("apply_Operator_left", "left"),
                       ("apply_Operator_right", "right")):
        for e in pmap.all(name):
            if len(e.args) != 2:
                raise ConfigError(f"{e.origin}: {name} expects time and operator")
            t = scalar_arg(e.args[0], f"{e.origin}: {name}")
            events.append(Event(t, matrix_arg(e.args[1], f"{e.origin}: {name}"),
                                side))

    return RunPlan(
        grid=grid, system=system, initial=initial, outputs=outputs,
        events=events, method=method, comp=_compression(pmap),
        n_mem=_memory_steps(pmap, dt), modes=modes, bath=bath,
        add_pt=add_pt, initial_pt=initial_pt,
        write_pt=pmap.get_str("write_PT"),
        buffer_blocksize=pmap.get_int("buffer_blocksize"),
        outfile=pmap.get_str("outfile"),
        precision=pmap.get_int("set_precision", 8),
        use_symmetric_trotter=pmap.get_bool("use_symmetric_Trotter", True),
        propagate_alternate=pmap.get_bool("propagate_alternate", False),
    )


def _generate_pt(plan: RunPlan) -> Optional[ProcessTensor]:
    if plan.method.startswith("gaussian"):
        kind = plan.method.split("_", 1)[1]
        if kind == "periodic" and plan.n_mem is None:
            raise ConfigError("use_Gaussian_periodic needs t_mem or n_mem")
        return gaussian_pt(plan.bath, plan.grid, plan.comp, method=kind,
                           n_mem=plan.n_mem)
    if plan.initial_pt is not None:
        acc = load_pt(plan.initial_pt)
        eps = plan.comp.threshold
        for spec in plan.modes:
            acc = stack(pt_from_single_mode(spec, plan.grid), acc,
                        plan.comp.forward(eps), plan.comp.backward(eps))
        if not plan.modes and eps > 0.0:
            acc.compress(plan.comp.forward(eps), plan.comp.backward(eps))
        apply_final_sweeps(acc, plan.comp)
        return acc
    if plan.method == "ace_tree":
        return ace_tree(plan.modes, plan.grid, plan.comp)
    if plan.method == "ace_sequential":
        return ace_sequential(plan.modes, plan.grid, plan.comp)
    return None


def _write_outfile(path: str, result, labels: list[str], precision: int):
    cols = ["t"]
    for label in labels:
        cols += [f"Re<{label}>", f"Im<{label}>"]
    lines = ["# " + "  ".join(cols)]
    for j, t in enumerate(result.times):
        row = [f"{t:.{precision}g}"]
        for k in range(result.values.shape[1]):
            v = result.values[j, k]
            row += [f"{v.real:.{precision}g}", f"{v.imag:.{precision}g}"]
        lines.append(" ".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def execute_plan(plan: RunPlan) -> int:
    pts = []
    for path, dl, dr in plan.add_pt:
        pt = load_pt(path)
        if dl > 1 or dr > 1:
            pt = expand_outer(pt, dl, dr)
        pts.append(pt)

    generated = _generate_pt(plan)
    if generated is not None:
        print(f"PT-MPO: {generated.n} steps, max inner bond "
              f"{generated.max_bond()}")
        if plan.write_pt:
            to_save = generated.materialize() \
                if isinstance(generated, PeriodicProcessTensor) else generated
            names = save_pt(to_save, plan.write_pt, plan.buffer_blocksize)
            print(f"PT-MPO written to {', '.join(names)}")
        pts.append(generated)

    outfile = plan.outfile
    if outfile is None and plan.outputs:
        outfile = "ACE.out"
        warnings.warn("no outfile given; writing to ACE.out")
    if outfile is None:
        if generated is None and not pts:
            warnings.warn("nothing to do: no outfile, no outputs, no PT")
        return 0

    if plan.initial.shape[0] != plan.system.dim:
        raise ConfigError(f"initial state dimension {plan.initial.shape[0]} "
                          f"does not match the system ({plan.system.dim})")
    result = propagate(plan.system, plan.grid, plan.initial, pts=pts,
                       outputs=plan.outputs, events=plan.events,
                       use_symmetric_trotter=plan.use_symmetric_trotter,
                       propagate_alternate=plan.propagate_alternate)
    _write_outfile(outfile, result, [o.label for o in plan.outputs],
                   plan.precision)
    print(f"{outfile}: {plan.grid.n + 1} rows, "
          f"max trace deviation {result.max_trace_deviation:.2e}")
    return 0


def _split_cli(argv: list[str]) -> ParameterMap:
    pmap = ParameterMap()
    rest = argv
    if argv and not argv[0].startswith("-"):
        pmap = parse_config_file(argv[0])
        rest = argv[1:]
    apply_cli_overrides(pmap, rest)
    return pmap


def main_ACE(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            # warnings go to stderr by default; data only to the outfile
            plan = build_plan(_split_cli(argv))
            return execute_plan(plan)
    except (ConfigError, ExpressionError, OSError, ValueError) as err:
        print(f"ACE: {err}", file=sys.stderr)
        return 1


def main_PTB_analyze(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    pmap = ParameterMap()
    try:
        apply_cli_overrides(pmap, argv)
        path = pmap.get_str("read_PT")
        if path is None:
            raise ConfigError("usage: PTB_analyze -read_PT FILE")
        pt = load_pt(path)
    except (ConfigError, OSError, ValueError) as err:
        print(f"PTB_analyze: {err}", file=sys.stderr)
        return 1
    print("# step  bond  outer_entries")
    for l in range(pt.n):
        blk = pt.blocks[l]
        print(f"{l + 1} {blk.dim_out} {len(blk.entries)}")
    print(f"max bond dimension: {pt.max_bond()}")
    return 0


def main_readexpression(argv: Optional[list[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if not argv:
        print("usage: readexpression EXPRESSION...", file=sys.stderr)
        return 1
    for text in argv:
        try:
            mat = matrix_from_expression(strip_braces(text))
        except ExpressionError as err:
            print(f"readexpression: {text!r}: {err}", file=sys.stderr)
            return 1
        for row in mat:
            print("  ".join(f"({v.real:g},{v.imag:g})" for v in row))
    return 0
