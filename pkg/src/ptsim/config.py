"""Configuration-file and command-line parameter handling.

A configuration file holds one command per line::

    dt      0.01
    te      20
    add_Hamiltonian {hbar/2*(|0><1|_2+|1><0|_2)}
    add_Output {|1><1|_2}          # occupation

``#`` starts a comment, and ``{...}`` groups whitespace-containing text
(typically an operator expression) into a single argument.  Command-line
arguments of the form ``-key value ...`` are appended after the file
entries, so they override file values for scalar parameters (the last
occurrence wins) and accumulate for repeatable commands.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .expressions import matrix_from_expression, scalar_from_expression

__all__ = [
    "ConfigError",
    "ParameterMap",
    "parse_config_file",
    "parse_config_line",
    "apply_cli_overrides",
    "KNOWN_COMMANDS",
]


class ConfigError(ValueError):
    pass


#: Commands understood by the driver.  Anything else parses fine but
#: triggers a warning when the file is read.
KNOWN_COMMANDS = frozenset([
    # grid / propagation
    "dt", "ta", "te", "use_symmetric_Trotter", "propagate_alternate",
    # system
    "initial", "add_Hamiltonian", "add_Pulse", "add_Lindblad",
    "apply_Operator_left", "apply_Operator_right",
    # output
    "outfile", "add_Output", "set_precision",
    # compression
    "threshold", "t_mem", "n_mem", "threshold_range_factor",
    "forward_threshold_ratio", "backward_threshold_ratio",
    "select_threshold_ratio", "final_sweep_n", "final_sweep_threshold",
    # process-tensor files
    "write_PT", "add_PT", "initial_PT", "buffer_blocksize",
    # method selection
    "use_Gaussian", "use_Gaussian_divide_and_conquer", "use_Gaussian_periodic",
    "use_combine_tree",
    # explicit environment modes
    "add_single_mode", "add_single_mode_from_file",
    # microscopic generators
    "Boson_N_modes", "Boson_M", "Boson_SysOp", "Boson_J_from_file",
    "Boson_J_type", "Boson_J_a_e", "Boson_J_a_h", "Boson_g", "Boson_rate",
    "Boson_omega_min", "Boson_omega_max", "Boson_temperature",
    "Boson_subtract_polaron_shift",
    "Fermion_N_modes", "Fermion_SysOp", "Fermion_J_from_file", "Fermion_g",
    "Fermion_rate", "Fermion_omega_min", "Fermion_omega_max",
    "Fermion_temperature", "Fermion_EFermi",
])

#: Commands allowed inside add_single_mode_from_file sub-configurations.
MODE_FILE_COMMANDS = frozenset([
    "add_Hamiltonian", "add_Pulse", "add_Lindblad", "initial",
    "apply_Operator_left", "apply_Operator_right",
])


@dataclass
class Entry:
    name: str
    args: list[str]
    origin: str = "?"


def _split_line(line: str, origin: str) -> list[str]:
    """Split one line into tokens; ``{...}`` is a single token, ``#`` comments."""
    tokens: list[str] = []
    i, n = 0, len(line)
    while i < n:
        ch = line[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "#":
            break
        if ch == "{":
            depth = 1
            j = i + 1
            while j < n and depth:
                if line[j] == "{":
                    depth += 1
                elif line[j] == "}":
                    depth -= 1
                j += 1
            if depth:
                raise ConfigError(f"{origin}: unterminated '{{'")
            tokens.append(line[i:j])
            i = j
            continue
        j = i
        while j < n and not line[j].isspace() and line[j] not in "{#":
            j += 1
        tokens.append(line[i:j])
        i = j
    return tokens


def parse_config_line(line: str, origin: str = "<line>") -> Optional[Entry]:
    """Parse a single configuration line; returns None for blank/comment lines."""
    tokens = _split_line(line, origin)
    if not tokens:
        return None
    return Entry(tokens[0], tokens[1:], origin)


def strip_braces(token: str) -> str:
    if token.startswith("{") and token.endswith("}"):
        return token[1:-1]
    return token


class ParameterMap:
    """Ordered multimap of configuration commands with typed getters."""

    def __init__(self, entries: Iterable[Entry] = ()):
        self.entries: list[Entry] = list(entries)

    def add(self, name: str, args: list[str], origin: str = "?"):
        self.entries.append(Entry(name, [str(a) for a in args], origin))

    def has(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    def last(self, name: str) -> Optional[Entry]:
        for e in reversed(self.entries):
            if e.name == name:
                return e
        return None

    def all(self, name: str) -> list[Entry]:
        return [e for e in self.entries if e.name == name]

    # -- typed access -----------------------------------------------------
    def get_str(self, name: str, default: Optional[str] = None) -> Optional[str]:
        e = self.last(name)
        if e is None:
            return default
        if len(e.args) != 1:
            raise ConfigError(f"{e.origin}: {name} expects one argument")
        return strip_braces(e.args[0])

    def get_float(self, name: str, default: Optional[float] = None) -> Optional[float]:
        e = self.last(name)
        if e is None:
            return default
        if len(e.args) != 1:
            raise ConfigError(f"{e.origin}: {name} expects one value")
        return scalar_arg(e.args[0], f"{e.origin}: {name}")

    def get_int(self, name: str, default: Optional[int] = None) -> Optional[int]:
        value = self.get_float(name)
        if value is None:
            return default
        rounded = int(round(value))
        if abs(value - rounded) > 1e-9:
            raise ConfigError(f"{name}: expected an integer, got {value}")
        return rounded

    def get_bool(self, name: str, default: bool = False) -> bool:
        e = self.last(name)
        if e is None:
            return default
        if not e.args:
            return True     # bare flag form
        token = e.args[0].lower()
        if token == "true":
            return True
        if token == "false":
            return False
        raise ConfigError(f"{e.origin}: {name} expects true/false, got {e.args[0]!r}")

    def get_matrix(self, name: str, default: Optional[np.ndarray] = None) -> Optional[np.ndarray]:
        e = self.last(name)
        if e is None:
            return default
        if len(e.args) != 1:
            raise ConfigError(f"{e.origin}: {name} expects one operator argument")
        return matrix_arg(e.args[0], f"{e.origin}: {name}")

    def warn_unknown(self, known: frozenset = KNOWN_COMMANDS):
        for e in self.entries:
            if e.name not in known:
                warnings.warn(f"{e.origin}: unknown command {e.name!r} ignored")


def scalar_arg(token: str, context: str = "") -> float:
    """Convert an argument token (number or {expression}) to a float."""
    try:
        return scalar_from_expression(strip_braces(token))
    except ValueError as err:
        raise ConfigError(f"{context}: {err}") from err


def matrix_arg(token: str, context: str = "") -> np.ndarray:
    try:
        return matrix_from_expression(strip_braces(token))
    except ValueError as err:
        raise ConfigError(f"{context}: {err}") from err


def parse_config_file(path: str, known: Optional[frozenset] = KNOWN_COMMANDS) -> ParameterMap:
    """Read a configuration file into a ParameterMap.

    Unknown commands are kept (and warned about) so that downstream code
    sees the file exactly as written.
    """
    pmap = ParameterMap()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            entry = parse_config_line(line, origin=f"{path}:{lineno}")
            if entry is not None:
                pmap.entries.append(entry)
    if known is not None:
        pmap.warn_unknown(known)
    return pmap


def apply_cli_overrides(pmap: ParameterMap, argv: list[str]) -> ParameterMap:
    """Append ``-key value ...`` command-line arguments to ``pmap``.

    A token starting with ``-`` opens a new command unless it looks like a
    negative number; all following value tokens belong to it.
    """
    key = None
    args: list[str] = []
    entries: list[Entry] = []

    def flush():
        if key is not None:
            entries.append(Entry(key, list(args), "<cli>"))

    for token in argv:
        if token.startswith("-") and len(token) > 1 and not _looks_numeric(token):
            flush()
            key = token[1:]
            args = []
        else:
            if key is None:
                raise ConfigError(f"stray command-line token {token!r}")
            args.append(token)
    flush()
    pmap.entries.extend(entries)
    return pmap


def _looks_numeric(token: str) -> bool:
    return len(token) > 1 and (token[1].isdigit() or token[1] == ".")
