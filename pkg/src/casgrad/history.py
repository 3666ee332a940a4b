"""Append-only evaluation history and its CSV representation.

CSV layout: a mandatory header ``step,x_1,...,x_d,y`` followed by one row per
record, UTF-8, every real written with 17 significant digits so that a
round trip is lossless.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .errors import ConfigError


class EvaluationHistory:
    """Ordered record of ``(x, y, step)`` triples with strictly increasing steps.

    Records can only be appended. ``copy`` gives an independent history that
    can be extended without touching the original.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = int(dim)
        self._x: list[np.ndarray] = []
        self._y: list[float] = []
        self._step: list[int] = []

    @classmethod
    def from_arrays(cls, X, y, steps=None) -> "EvaluationHistory":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y lengths differ")
        hist = cls(X.shape[1])
        if steps is None:
            steps = np.arange(1, len(y) + 1)
        for xi, yi, si in zip(X, y, steps):
            hist.append(xi, yi, int(si))
        return hist

    def __len__(self) -> int:
        return len(self._y)

    def __iter__(self):
        return iter(zip(self._x, self._y, self._step))

    @property
    def last_step(self) -> int:
        return self._step[-1] if self._step else 0

    def append(self, x, y, step: int | None = None) -> int:
        x = np.array(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"expected a point of dimension {self.dim}, got {x.shape[0]}")
        if step is None:
            step = self.last_step + 1
        elif step <= self.last_step:
            raise ValueError(f"step {step} does not increase past {self.last_step}")
        x.setflags(write=False)
        self._x.append(x)
        self._y.append(float(y))
        self._step.append(int(step))
        return int(step)

    def extend(self, other: "EvaluationHistory") -> None:
        """Append every record of ``other``, renumbering steps after ours."""
        for x, y, _ in other:
            self.append(x, y)

    def copy(self) -> "EvaluationHistory":
        new = EvaluationHistory(self.dim)
        new._x = list(self._x)
        new._y = list(self._y)
        new._step = list(self._step)
        return new

    @property
    def X(self) -> np.ndarray:
        if not self._x:
            return np.empty((0, self.dim))
        return np.vstack(self._x)

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self._y, dtype=float)

    @property
    def steps(self) -> np.ndarray:
        return np.asarray(self._step, dtype=np.int64)

    def subset(self, indices) -> "EvaluationHistory":
        """History restricted to ``indices`` (kept in original order, steps preserved)."""
        new = EvaluationHistory(self.dim)
        for i in sorted(int(i) for i in indices):
            new.append(self._x[i], self._y[i], self._step[i])
        return new

    # -- CSV ---------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step"] + [f"x_{i + 1}" for i in range(self.dim)] + ["y"])
        for x, y, s in self:
            writer.writerow([str(s)] + [_fmt(v) for v in x] + [_fmt(y)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def from_csv(cls, text: str) -> "EvaluationHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ConfigError("history CSV is empty (header row is mandatory)")
        header = [c.strip() for c in rows[0]]
        d = len(header) - 2
        expected = ["step"] + [f"x_{i + 1}" for i in range(d)] + ["y"]
        if d < 1 or header != expected:
            raise ConfigError(f"bad history header {header!r}")
        hist = cls(d)
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ConfigError(f"line {lineno}: expected {d + 2} fields, got {len(row)}")
            try:
                step = int(row[0])
                vals = [float(v) for v in row[1:]]
                hist.append(vals[:-1], vals[-1], step)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: {exc}") from exc
        return hist

    @classmethod
    def read_csv(cls, path) -> "EvaluationHistory":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))


def _fmt(v: float) -> str:
    return format(float(v), ".17g")
