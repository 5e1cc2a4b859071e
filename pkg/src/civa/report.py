"""Run reports and their line-delimited JSON serialization.

A report file holds one JSON object per line: a ``report`` header with all
scalar fields, then one ``array`` line per stored array. Python's JSON
encoder writes floats with ``repr`` so the round-trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

_ARRAY_FIELDS = (
    "W",
    "Sigma",
    "objective_trace",
    "eta_trace",
    "eps_final",
    "constraint_satisfied",
    "ordering_satisfied",
    "mu_trace",
    "rho_trace",
    "scheme_trace",
)


@dataclass
class RunReport:
    variant: str
    seed: int
    iterations: int
    converged: bool
    status: str
    W: np.ndarray
    Sigma: np.ndarray
    objective_trace: np.ndarray
    eta_trace: np.ndarray
    decay_events: List[int] = field(default_factory=list)
    final_objective: float = float("nan")
    wall_time: float = 0.0
    cache_time: float = 0.0
    time_per_iter: float = 0.0
    backend: str = ""
    ridge_events: int = 0
    switch_events: int = 0
    eps_final: Optional[np.ndarray] = None
    constraint_satisfied: Optional[np.ndarray] = None
    ordering_satisfied: Optional[np.ndarray] = None
    mu_trace: Optional[np.ndarray] = None
    rho_trace: Optional[np.ndarray] = None
    scheme_trace: Optional[np.ndarray] = None
    metrics: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    paths: Dict[str, str] = field(default_factory=dict)

    # -- serialization -----------------------------------------------------

    def to_lines(self) -> List[str]:
        header = {"kind": "report"}
        for f in fields(self):
            if f.name not in _ARRAY_FIELDS:
                header[f.name] = getattr(self, f.name)
        lines = [json.dumps(header, sort_keys=True)]
        for name in _ARRAY_FIELDS:
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr)
            lines.append(
                json.dumps(
                    {
                        "kind": "array",
                        "name": name,
                        "dtype": arr.dtype.str,
                        "shape": list(arr.shape),
                        "data": arr.ravel().tolist(),
                    }
                )
            )
        return lines

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(self.to_lines()) + "\n")
        return path

    @classmethod
    def from_lines(cls, lines) -> "RunReport":
        kwargs: Dict[str, Any] = {name: None for name in _ARRAY_FIELDS}
        for line in lines:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "report":
                kwargs.update(rec)
            elif kind == "array":
                kwargs[rec["name"]] = np.array(rec["data"], dtype=np.dtype(rec["dtype"])).reshape(
                    rec["shape"]
                )
        return cls(**kwargs)

    @classmethod
    def read(cls, path) -> "RunReport":
        return cls.from_lines(Path(path).read_text().splitlines())

    def summary(self) -> Dict[str, Any]:
        out = {
            "variant": self.variant,
            "seed": self.seed,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_objective": self.final_objective,
            "runtime_s": self.wall_time,
        }
        out.update(self.metrics)
        return out


def reports_equal(a: RunReport, b: RunReport) -> bool:
    for f in fields(RunReport):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if f.name in _ARRAY_FIELDS:
            if (x is None) != (y is None):
                return False
            if x is not None and not (
                np.asarray(x).dtype == np.asarray(y).dtype and np.array_equal(x, y, equal_nan=True)
            ):
                return False
        elif x != y and not (isinstance(x, float) and np.isnan(x) and np.isnan(y)):
            return False
    return True
