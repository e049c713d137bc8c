"""Locale-independent CSV/JSON writers with 17-significant-digit floats."""

from __future__ import annotations

import json
import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


def fmt(x: float) -> str:
    return "%.17g" % float(x)


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # non-finite values have no JSON literal
        return fmt(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _emit(obj.tolist(), indent, level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_emit(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in obj) + "]"
        items = [f"{pad}{_emit(v, indent, level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float written to 17 significant digits."""
    return _emit(obj, indent, 0) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def state_labels(n: int) -> list[str]:
    return ["x", "y", "z"][:n] if n <= 3 else [f"x{i + 1}" for i in range(n)]


def input_labels(m: int) -> list[str]:
    return ["u"] if m == 1 else [f"u{i + 1}" for i in range(m)]


def trajectories_csv(nodes: np.ndarray, member_states: Sequence[np.ndarray], mean_states: np.ndarray) -> str:
    """Rows ``t, sample_id, states...`` per member, then the ``mean`` rows."""
    n = mean_states.shape[1]
    header = ["t", "sample_id", *state_labels(n)]
    ts = [fmt(t) for t in nodes]
    lines = [",".join(header)]
    for k, states in enumerate(member_states):
        sid = str(k)
        for t, row in zip(ts, states.tolist()):
            lines.append(",".join([t, sid, *map(fmt, row)]))
    for t, row in zip(ts, mean_states.tolist()):
        lines.append(",".join([t, "mean", *map(fmt, row)]))
    return "\n".join(lines) + "\n"


def control_csv(midpoints: np.ndarray, values: np.ndarray) -> str:
    return csv_text(["t_mid", *input_labels(values.shape[1])], ([t, *row] for t, row in zip(midpoints, values)))


def params_csv(params: np.ndarray) -> str:
    return csv_text(["sample_id", "value"], ([str(k), v] for k, v in enumerate(params)))


class AtomicOutput:
    """Stage files in a temporary directory and move them into *outdir* on success.

    Nothing is written to *outdir* if the block raises.
    """

    def __init__(self, outdir) -> None:
        self.outdir = Path(outdir)
        self._staged: dict[str, Path] = {}
        self._tmp: Path | None = None

    def __enter__(self) -> AtomicOutput:
        self.outdir.mkdir(parents=True, exist_ok=True)
        self._tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=self.outdir))
        return self

    def write_text(self, name: str, text: str) -> Path:
        assert self._tmp is not None
        path = self._tmp / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self._staged[name] = path
        return self.outdir / name

    def __exit__(self, exc_type, exc, tb) -> None:
        assert self._tmp is not None
        try:
            if exc_type is None:
                for name, path in self._staged.items():
                    os.replace(path, self.outdir / name)
        finally:
            shutil.rmtree(self._tmp, ignore_errors=True)
