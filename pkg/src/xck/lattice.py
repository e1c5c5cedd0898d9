"""Finitely supported densities on the integer lattice.

A :class:`Density` stores its values densely on the symmetric window
``{-n, ..., n}``; site ``k`` lives at array offset ``k + n``. Moment sums are
evaluated with :func:`math.fsum` in ascending index order so diagnostics are
reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NegativeDensityError, WindowMismatchError

NEG_TOLERANCE = 1e-12


@dataclass(frozen=True)
class Window:
    """The lattice window ``S_n = {k : |k| <= n}``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"window half-width must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def size(self) -> int:
        return 2 * self.n + 1

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.n, self.n + 1)

    def offset(self, k: int) -> int:
        if abs(k) > self.n:
            raise IndexError(f"site {k} outside window of half-width {self.n}")
        return k + self.n

    def contains(self, k: int) -> bool:
        return abs(k) <= self.n


@dataclass(frozen=True)
class MomentSet:
    mass: float
    charge: float
    abs_charge: float
    l1: float
    l11: float


class Density:
    """Nonnegative lattice function on a window. Immutable once built.

    Entries in ``(-neg_tolerance, 0)`` are clamped to zero; anything more
    negative raises :class:`NegativeDensityError`.
    """

    __slots__ = ("window", "values", "clamped")

    def __init__(self, window: Window | int, values, neg_tolerance: float = NEG_TOLERANCE):
        if not isinstance(window, Window):
            window = Window(window)
        arr = np.array(values, dtype=float)
        if arr.shape != (window.size,):
            raise ValueError(f"expected {window.size} values for window n={window.n}, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("density values must be finite")
        if arr.size and arr.min() < -neg_tolerance:
            k = int(np.argmin(arr)) - window.n
            raise NegativeDensityError(f"density entry at k={k} is {arr.min():.3e}")
        small = arr < 0
        clamped = int(np.count_nonzero(small))
        if clamped:
            arr[small] = 0.0
        arr.setflags(write=False)
        object.__setattr__(self, "window", window)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "clamped", clamped)

    def __setattr__(self, name, value):
        raise AttributeError("Density is immutable")

    def __repr__(self):
        return f"Density(n={self.window.n}, mass={self.mass:.6g}, charge={self.charge:.6g})"

    def __getitem__(self, k: int) -> float:
        if abs(k) > self.window.n:
            return 0.0
        return float(self.values[k + self.window.n])

    @property
    def n(self) -> int:
        return self.window.n

    @property
    def indices(self) -> np.ndarray:
        return self.window.indices

    @classmethod
    def delta(cls, n: int, k: int = 0, weight: float = 1.0) -> "Density":
        w = Window(n)
        v = np.zeros(w.size)
        v[w.offset(k)] = weight
        return cls(w, v)

    @classmethod
    def zeros(cls, n: int) -> "Density":
        w = Window(n)
        return cls(w, np.zeros(w.size))

    @classmethod
    def from_function(cls, n: int, func) -> "Density":
        w = Window(n)
        return cls(w, [func(int(k)) for k in w.indices])

    # moments --------------------------------------------------------------

    @property
    def mass(self) -> float:
        return math.fsum(self.values)

    @property
    def charge(self) -> float:
        return math.fsum(self.indices * self.values)

    @property
    def abs_charge(self) -> float:
        return math.fsum(np.abs(self.indices) * self.values)

    @property
    def l1(self) -> float:
        return math.fsum(np.abs(self.values))

    @property
    def l11(self) -> float:
        return math.fsum((1 + np.abs(self.indices)) * np.abs(self.values))

    def normalized(self) -> "Density":
        m = self.mass
        if m <= 0:
            raise ValueError("cannot normalize a density with zero mass")
        return Density(self.window, self.values / m)

    def is_symmetric(self, atol: float = 0.0) -> bool:
        return bool(np.all(np.abs(self.values - self.values[::-1]) <= atol))

    # serialization --------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "values": [float(x) for x in self.values]})

    @classmethod
    def from_json(cls, text: str) -> "Density":
        obj = json.loads(text)
        return cls(Window(obj["n"]), obj["values"])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "value"])
            for k, v in zip(self.indices, self.values):
                w.writerow([int(k), f"{v:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "Density":
        rows = []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["k", "value"]:
                raise ValueError(f"{path}: expected header 'k,value'")
            for row in reader:
                rows.append((int(row["k"]), float(row["value"])))
        if not rows:
            raise ValueError(f"{path}: no rows")
        ks = [k for k, _ in rows]
        if ks != sorted(ks) or len(set(ks)) != len(ks):
            raise ValueError(f"{path}: rows must be sorted ascending in k without repeats")
        n = max(abs(ks[0]), abs(ks[-1]), 1)
        values = np.zeros(2 * n + 1)
        for k, v in rows:
            values[k + n] = v
        return cls(Window(n), values)


def moments(f: Density) -> MomentSet:
    return MomentSet(mass=f.mass, charge=f.charge, abs_charge=f.abs_charge, l1=f.l1, l11=f.l11)


def tail_mass(f: Density, m0: int) -> float:
    """Weighted tail ``sum_{|k| > m0} (1 + |k|) f(k)``."""
    if not 0 <= m0 <= f.n:
        raise ValueError(f"tail cutoff must lie in [0, {f.n}], got {m0}")
    idx = np.abs(f.indices)
    sel = idx > m0
    return math.fsum((1 + idx[sel]) * f.values[sel])


def embed(f: Density, new_window: Window | int) -> Density:
    """Copy ``f`` onto another window, zero-filling or truncating as needed."""
    if not isinstance(new_window, Window):
        new_window = Window(new_window)
    out = np.zeros(new_window.size)
    m = min(f.n, new_window.n)
    out[new_window.n - m:new_window.n + m + 1] = f.values[f.n - m:f.n + m + 1]
    return Density(new_window, out)


def l11_norm(values: np.ndarray) -> float:
    """Weighted norm of a signed array laid out on a symmetric window."""
    values = np.asarray(values, dtype=float)
    n = (values.size - 1) // 2
    return math.fsum((1 + np.abs(np.arange(-n, n + 1))) * np.abs(values))


def l1_norm(values: np.ndarray) -> float:
    return math.fsum(np.abs(np.asarray(values, dtype=float)))


def as_array(f, n: int | None = None) -> np.ndarray:
    """Values of a Density or a raw array, checked against an expected window."""
    arr = f.values if isinstance(f, Density) else np.asarray(f, dtype=float)
    if arr.ndim != 1 or arr.size % 2 != 1:
        raise ValueError("lattice arrays must be one-dimensional with odd length")
    if n is not None and arr.size != 2 * n + 1:
        raise WindowMismatchError(f"expected window n={n}, got n={(arr.size - 1) // 2}")
    return arr

