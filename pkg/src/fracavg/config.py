"""Strict parsing of JSON run configurations.

Unknown keys, ragged matrices and inconsistent dimensions are rejected with a
:class:`ConfigError` naming the offending key path. Parsed configs convert
back to plain dictionaries with :meth:`RunConfig.to_dict`; parsing that
dictionary again gives an equal config.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import numpy as np

from fracavg.ensemble import (
    DistributionSpec,
    Entry,
    Gaussian,
    ParameterEnsemble,
    PointMasses,
    Uniform,
    sample_ensemble,
)
from fracavg.errors import ConfigError, EnsembleError, NumericalDomainError
from fracavg.gramian import DEFAULT_NQ
from fracavg.linfrac import FractionalOrder, SystemRealization, TimeGrid

Matrix = tuple[tuple[float, ...], ...]
Vector = tuple[float, ...]

SAMPLED_KINDS = ("gaussian", "uniform", "point-masses")


def _keys(d: Any, path: str, required: set[str], optional: set[str] = frozenset()) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    for k in d:
        if k not in required and k not in optional:
            raise ConfigError(f"{path}.{k}: unknown key")
    for k in required:
        if k not in d:
            raise ConfigError(f"{path}.{k}: missing required key")
    return d


def _real(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{path}: expected a finite number, got {v!r}")
    return float(v)


def _int(v: Any, path: str, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {v}")
    return v


def _vector(v: Any, path: str) -> Vector:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{path}: expected a non-empty array of numbers")
    return tuple(_real(x, f"{path}[{i}]") for i, x in enumerate(v))


def _matrix(v: Any, path: str) -> Matrix:
    if not isinstance(v, list) or not v or not all(isinstance(r, list) for r in v):
        raise ConfigError(f"{path}: expected a nested array of rows")
    rows = tuple(_vector(r, f"{path}[{i}]") for i, r in enumerate(v))
    if len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: matrix rows have unequal lengths")
    return rows


def _check_pair(A: Matrix, B: Matrix, path: str) -> None:
    n = len(A)
    if len(A[0]) != n:
        raise ConfigError(f"{path}.A: must be square, got {n}x{len(A[0])}")
    if len(B) != n:
        raise ConfigError(f"{path}.B: needs {n} rows to match A, got {len(B)}")


@dataclass(frozen=True)
class MemberConfig:
    A: Matrix
    B: Matrix
    weight: float


@dataclass(frozen=True)
class SampledSpecConfig:
    A: Matrix
    B: Matrix
    entries: tuple[tuple[str, int, int], ...]
    mode: str = "set"
    mean: float | None = None
    variance: float | None = None
    lo: float | None = None
    hi: float | None = None
    values: Vector | None = None
    probs: Vector | None = None


@dataclass(frozen=True)
class SystemConfig:
    kind: str  # "deterministic" | "discrete" | one of SAMPLED_KINDS
    A: Matrix | None = None
    B: Matrix | None = None
    members: tuple[MemberConfig, ...] | None = None
    spec: SampledSpecConfig | None = None
    M: int | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        if self.kind == "deterministic":
            return len(self.A)
        if self.kind == "discrete":
            return len(self.members[0].A)
        return len(self.spec.A)

    @property
    def size(self) -> int:
        if self.kind == "deterministic":
            return 1
        if self.kind == "discrete":
            return len(self.members)
        return self.M


@dataclass(frozen=True)
class ControlConfig:
    target: Vector
    cg_tol: float = 1e-10
    cg_max_iter: int | None = None


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "."
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class RunConfig:
    alpha: float
    T: float
    system: SystemConfig
    N: int
    initial_state: Vector | tuple[Vector, ...] | None = None
    Nq: int = DEFAULT_NQ
    control: ControlConfig | None = None
    output: OutputConfig = OutputConfig()

    @property
    def order(self) -> FractionalOrder:
        return FractionalOrder(self.alpha, self.T)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.N)

    def to_dict(self) -> dict:
        s = self.system
        if s.kind == "deterministic":
            system = {"deterministic": {"A": _lists(s.A), "B": _lists(s.B)}}
        elif s.kind == "discrete":
            system = {
                "ensemble": {
                    "kind": "discrete",
                    "members": [
                        {"A": _lists(m.A), "B": _lists(m.B), "weight": m.weight} for m in s.members
                    ],
                }
            }
        else:
            sp = s.spec
            spec = {"A": _lists(sp.A), "B": _lists(sp.B), "entries": [list(e) for e in sp.entries], "mode": sp.mode}
            for key in ("mean", "variance", "lo", "hi"):
                if getattr(sp, key) is not None:
                    spec[key] = getattr(sp, key)
            for key in ("values", "probs"):
                if getattr(sp, key) is not None:
                    spec[key] = list(getattr(sp, key))
            system = {"ensemble": {"kind": s.kind, "spec": spec, "M": s.M, "seed": s.seed}}
        d: dict = {
            "order": {"alpha": self.alpha, "T": self.T},
            "system": system,
            "grid": {"N": self.N},
            "quadrature": {"Nq": self.Nq},
            "output": {"dir": self.output.dir, "formats": list(self.output.formats)},
        }
        if self.initial_state is not None:
            d["initial_state"] = _lists(self.initial_state)
        if self.control is not None:
            c = {"target": list(self.control.target), "cg_tol": self.control.cg_tol}
            if self.control.cg_max_iter is not None:
                c["cg_max_iter"] = self.control.cg_max_iter
            d["control"] = c
        return d

    def ensemble(self) -> ParameterEnsemble:
        """Build the (deterministic, discrete or sampled) ensemble."""
        s = self.system
        x0 = None if self.initial_state is None else np.array(self.initial_state, dtype=float)
        try:
            if s.kind == "deterministic":
                return ParameterEnsemble.deterministic(s.A, s.B, x0)
            if s.kind == "discrete":
                systems = [SystemRealization(m.A, m.B) for m in s.members]
                return ParameterEnsemble.discrete(systems, [m.weight for m in s.members], x0)
            return sample_ensemble(self.distribution(), s.M, s.seed, x0)
        except (EnsembleError, NumericalDomainError) as exc:
            raise ConfigError(f"system: {exc}") from exc

    def distribution(self) -> DistributionSpec:
        sp = self.system.spec
        kind = self.system.kind
        if kind == "gaussian":
            law = Gaussian(sp.mean, sp.variance)
        elif kind == "uniform":
            law = Uniform(sp.lo, sp.hi)
        else:
            law = PointMasses(sp.values, sp.probs)
        entries = tuple(Entry(*e) for e in sp.entries)
        return DistributionSpec(np.array(sp.A), np.array(sp.B), law, entries, sp.mode)


def _lists(t):
    return [_lists(x) for x in t] if isinstance(t, tuple) else t


def _parse_system(d: Any) -> SystemConfig:
    _keys(d, "system", set(), {"deterministic", "ensemble"})
    if len(d) != 1:
        raise ConfigError("system: give exactly one of 'deterministic' or 'ensemble'")
    if "deterministic" in d:
        det = _keys(d["deterministic"], "system.deterministic", {"A", "B"})
        A = _matrix(det["A"], "system.deterministic.A")
        B = _matrix(det["B"], "system.deterministic.B")
        _check_pair(A, B, "system.deterministic")
        return SystemConfig("deterministic", A=A, B=B)

    ens = d["ensemble"]
    if not isinstance(ens, dict) or "kind" not in ens:
        raise ConfigError("system.ensemble.kind: missing required key")
    kind = ens["kind"]
    if kind == "discrete":
        _keys(ens, "system.ensemble", {"kind", "members"})
        if not isinstance(ens["members"], list) or not ens["members"]:
            raise ConfigError("system.ensemble.members: expected a non-empty array")
        members = []
        for i, m in enumerate(ens["members"]):
            path = f"system.ensemble.members[{i}]"
            _keys(m, path, {"A", "B"}, {"weight"})
            A = _matrix(m["A"], f"{path}.A")
            B = _matrix(m["B"], f"{path}.B")
            _check_pair(A, B, path)
            w = _real(m["weight"], f"{path}.weight") if "weight" in m else 1.0 / len(ens["members"])
            members.append(MemberConfig(A, B, w))
        shapes = {(len(m.A), len(m.B[0])) for m in members}
        if len(shapes) != 1:
            raise ConfigError("system.ensemble.members: members differ in (n, m)")
        return SystemConfig("discrete", members=tuple(members))
    if kind not in SAMPLED_KINDS:
        raise ConfigError(f"system.ensemble.kind: unknown kind {kind!r}")

    _keys(ens, "system.ensemble", {"kind", "spec", "M", "seed"})
    law_keys = {"gaussian": {"mean", "variance"}, "uniform": {"lo", "hi"}, "point-masses": {"values", "probs"}}[kind]
    sp = _keys(ens["spec"], "system.ensemble.spec", {"A", "B", "entries"} | law_keys, {"mode"})
    A = _matrix(sp["A"], "system.ensemble.spec.A")
    B = _matrix(sp["B"], "system.ensemble.spec.B")
    _check_pair(A, B, "system.ensemble.spec")
    if not isinstance(sp["entries"], list) or not sp["entries"]:
        raise ConfigError("system.ensemble.spec.entries: expected a non-empty array")
    entries = []
    for i, e in enumerate(sp["entries"]):
        path = f"system.ensemble.spec.entries[{i}]"
        if not (isinstance(e, list) and len(e) == 3 and e[0] in ("A", "B")):
            raise ConfigError(f'{path}: expected ["A"|"B", row, col]')
        entries.append((e[0], _int(e[1], f"{path}[1]", 0), _int(e[2], f"{path}[2]", 0)))
    mode = sp.get("mode", "set")
    if mode not in ("set", "scale"):
        raise ConfigError(f"system.ensemble.spec.mode: expected 'set' or 'scale', got {mode!r}")
    fields: dict = {}
    for key in law_keys:
        path = f"system.ensemble.spec.{key}"
        fields[key] = _vector(sp[key], path) if key in ("values", "probs") else _real(sp[key], path)
    spec = SampledSpecConfig(A, B, tuple(entries), mode, **fields)
    M = _int(ens["M"], "system.ensemble.M", 1)
    seed = _int(ens["seed"], "system.ensemble.seed", 0)
    if seed >= 2**64:
        raise ConfigError("system.ensemble.seed: must fit in 64 bits")
    return SystemConfig(kind, spec=spec, M=M, seed=seed)


def parse_config(d: Any) -> RunConfig:
    """Validate a decoded JSON document into a :class:`RunConfig`."""
    _keys(d, "config", {"order", "system", "grid"}, {"initial_state", "quadrature", "control", "output"})
    order = _keys(d["order"], "order", {"alpha", "T"})
    alpha = _real(order["alpha"], "order.alpha")
    T = _real(order["T"], "order.T")
    if not 0 < alpha <= 1:
        raise ConfigError(f"order.alpha: must lie in (0, 1], got {alpha}")
    if not T > 0:
        raise ConfigError(f"order.T: must be positive, got {T}")
    system = _parse_system(d["system"])
    n = system.n

    N = _int(_keys(d["grid"], "grid", {"N"})["N"], "grid.N", 1)
    Nq = DEFAULT_NQ
    if "quadrature" in d:
        Nq = _int(_keys(d["quadrature"], "quadrature", {"Nq"})["Nq"], "quadrature.Nq", 1)

    x0 = None
    if "initial_state" in d:
        raw = d["initial_state"]
        if isinstance(raw, list) and raw and all(isinstance(r, list) for r in raw):
            x0 = _matrix(raw, "initial_state")
            if len(x0) != system.size or len(x0[0]) != n:
                raise ConfigError(
                    f"initial_state: per-member states must be {system.size}x{n}, "
                    f"got {len(x0)}x{len(x0[0])}"
                )
        else:
            x0 = _vector(raw, "initial_state")
            if len(x0) != n:
                raise ConfigError(f"initial_state: expected length {n}, got {len(x0)}")

    control = None
    if "control" in d:
        c = _keys(d["control"], "control", {"target"}, {"cg_tol", "cg_max_iter"})
        target = _vector(c["target"], "control.target")
        if len(target) != n:
            raise ConfigError(f"control.target: expected length {n}, got {len(target)}")
        cg_tol = _real(c.get("cg_tol", 1e-10), "control.cg_tol")
        if not cg_tol > 0:
            raise ConfigError("control.cg_tol: must be positive")
        kmax = _int(c["cg_max_iter"], "control.cg_max_iter", 1) if "cg_max_iter" in c else None
        control = ControlConfig(target, cg_tol, kmax)

    output = OutputConfig()
    if "output" in d:
        o = _keys(d["output"], "output", set(), {"dir", "formats"})
        out_dir = o.get("dir", ".")
        if not isinstance(out_dir, str):
            raise ConfigError("output.dir: expected a string")
        formats = o.get("formats", ["csv", "json"])
        if not isinstance(formats, list) or any(f not in ("csv", "json") for f in formats):
            raise ConfigError("output.formats: expected a subset of ['csv', 'json']")
        output = OutputConfig(out_dir, tuple(formats))

    return RunConfig(alpha, T, system, N, x0, Nq, control, output)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)


def with_overrides(
    cfg: RunConfig,
    *,
    seed: int | None = None,
    grid: int | None = None,
    quadrature: int | None = None,
    samples: int | None = None,
    tol: float | None = None,
    output: str | None = None,
) -> RunConfig:
    """Apply command-line overrides; seed and samples only affect sampled ensembles."""
    system = cfg.system
    if seed is not None or samples is not None:
        if system.kind not in SAMPLED_KINDS:
            raise ConfigError("--seed/--samples need a sampled ensemble in system.ensemble")
        system = replace(
            system,
            seed=system.seed if seed is None else seed,
            M=system.M if samples is None else samples,
        )
        if isinstance(cfg.initial_state, tuple) and cfg.initial_state and isinstance(cfg.initial_state[0], tuple):
            if len(cfg.initial_state) != system.M:
                raise ConfigError("--samples conflicts with per-member initial_state")
    cfg = replace(cfg, system=system)
    if grid is not None:
        cfg = replace(cfg, N=grid)
    if quadrature is not None:
        cfg = replace(cfg, Nq=quadrature)
    if tol is not None:
        if cfg.control is None:
            raise ConfigError("--tol needs a control section in the config")
        cfg = replace(cfg, control=replace(cfg.control, cg_tol=tol))
    if output is not None:
        cfg = replace(cfg, output=replace(cfg.output, dir=output))
    return cfg
