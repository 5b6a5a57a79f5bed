"""Switched linear plants, words over the mode alphabet and switching signals.

Modes are numbered ``1..M`` everywhere. A word is a plain tuple of ints and
the empty tuple ``()`` plays the role of the empty word.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

EMPTY = ()

Word = tuple


class SystemFormatError(ValueError):
    """Raised when a system file or matrix family is malformed."""


def _as_matrix(value, rows, cols, what, index):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise SystemFormatError(f"mode {index}: {what} is not a numeric matrix") from exc
    if arr.ndim == 1 and cols == 1 and arr.shape[0] == rows:
        arr = arr.reshape(rows, 1)
    if arr.ndim != 2 or arr.shape != (rows, cols):
        raise SystemFormatError(
            f"mode {index}: {what} has shape {arr.shape}, expected ({rows}, {cols})"
        )
    if not np.all(np.isfinite(arr)):
        raise SystemFormatError(f"mode {index}: {what} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SwitchedSystem:
    """Discrete-time plant ``x+ = A_i x + B_i u`` with ``i`` chosen by the switching.

    ``A`` and ``B`` are tuples of read-only arrays; ``A[i-1]`` is the matrix of
    mode ``i``.
    """

    A: tuple
    B: tuple

    def __post_init__(self):
        if len(self.A) == 0 or len(self.A) != len(self.B):
            raise SystemFormatError("need at least one mode and as many B as A matrices")
        A0 = np.asarray(self.A[0], dtype=float)
        B0 = np.asarray(self.B[0], dtype=float)
        if A0.ndim != 2 or A0.shape[0] != A0.shape[1] or A0.shape[0] < 1:
            raise SystemFormatError("mode 1: A must be a non-empty square matrix")
        n = A0.shape[0]
        if B0.ndim == 1:
            B0 = B0.reshape(n, 1)
        if B0.ndim != 2 or B0.shape[0] != n or B0.shape[1] < 1:
            raise SystemFormatError(f"mode 1: B must have {n} rows and at least one column")
        m = B0.shape[1]
        A = tuple(_as_matrix(a, n, n, "A", i + 1) for i, a in enumerate(self.A))
        B = tuple(_as_matrix(b, n, m, "B", i + 1) for i, b in enumerate(self.B))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A[0].shape[0]

    @property
    def m(self) -> int:
        return self.B[0].shape[1]

    @property
    def M(self) -> int:
        return len(self.A)

    @property
    def modes(self):
        return list(zip(self.A, self.B))

    def mode(self, i):
        """Return ``(A_i, B_i)`` for the 1-based mode index ``i``."""
        if not 1 <= i <= self.M:
            raise IndexError(f"mode {i} outside 1..{self.M}")
        return self.A[i - 1], self.B[i - 1]

    def max_norm(self) -> float:
        """Largest spectral norm among the ``A_i``."""
        return max(float(np.linalg.norm(a, 2)) for a in self.A)

    def allclose(self, other, rtol=0.0, atol=0.0) -> bool:
        if (self.n, self.m, self.M) != (other.n, other.m, other.M):
            return False
        return all(
            np.allclose(a, b, rtol=rtol, atol=atol) for a, b in zip(self.A + self.B, other.A + other.B)
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "modes": [{"A": a.tolist(), "B": b.tolist()} for a, b in self.modes],
        }

    def __repr__(self):
        return f"SwitchedSystem(n={self.n}, m={self.m}, M={self.M})"


def system_from_dict(data: dict) -> SwitchedSystem:
    """Build a system from the JSON layout ``{"n", "m", "modes": [{"A", "B"}]}``."""
    if not isinstance(data, dict):
        raise SystemFormatError("system document must be a JSON object")
    try:
        n = int(data["n"])
        m = int(data["m"])
        modes = data["modes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SystemFormatError(f"missing or invalid field: {exc}") from exc
    if n < 1 or m < 1:
        raise SystemFormatError("n and m must be positive")
    if not isinstance(modes, list) or not modes:
        raise SystemFormatError("'modes' must be a non-empty list")
    A, B = [], []
    for i, mode in enumerate(modes, start=1):
        if not isinstance(mode, dict) or "A" not in mode or "B" not in mode:
            raise SystemFormatError(f"mode {i}: expected an object with 'A' and 'B'")
        A.append(_as_matrix(mode["A"], n, n, "A", i))
        B.append(_as_matrix(mode["B"], n, m, "B", i))
    return SwitchedSystem(tuple(A), tuple(B))


def load_system(path) -> SwitchedSystem:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SystemFormatError(f"{path}: not valid JSON ({exc})") from exc
    return system_from_dict(data)


def save_system(system: SwitchedSystem, path) -> None:
    Path(path).write_text(json.dumps(system.to_dict(), indent=2) + "\n", encoding="utf-8")


def scale_system(system: SwitchedSystem, gamma: float) -> SwitchedSystem:
    """Return the family ``{(A_i / gamma, B_i / gamma)}``.

    Stabilizing the scaled family with a certified contraction is the same as
    stabilizing the original one at growth rate ``gamma``.
    """
    gamma = float(gamma)
    if not np.isfinite(gamma) or gamma <= 0:
        raise ValueError(f"gamma must be positive and finite, got {gamma}")
    return SwitchedSystem(
        tuple(a / gamma for a in system.A), tuple(b / gamma for b in system.B)
    )


def check_word(word, M) -> Word:
    word = tuple(int(s) for s in word)
    for s in word:
        if not 1 <= s <= M:
            raise ValueError(f"symbol {s} outside 1..{M}")
    return word


def word_to_str(word) -> str:
    return "".join(str(s) for s in word)


def word_from_str(text: str) -> Word:
    if not text.isdigit() and text != "":
        raise ValueError(f"not a word: {text!r}")
    return tuple(int(c) for c in text)


@dataclass(frozen=True)
class SwitchingSignal:
    """Finite prefix ``sigma(0), ..., sigma(N-1)`` of a switching signal."""

    values: tuple
    M: int | None = None

    def __post_init__(self):
        vals = tuple(int(v) for v in self.values)
        top = self.M if self.M is not None else max(vals, default=1)
        if any(v < 1 or v > top for v in vals):
            raise ValueError(f"switching values must lie in 1..{top}")
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def __getitem__(self, k):
        return self.values[k]

    def __iter__(self):
        return iter(self.values)

    @classmethod
    def random(cls, M, N, rng=None):
        rng = np.random.default_rng(rng)
        return cls(tuple(int(v) for v in rng.integers(1, M + 1, size=N)), M)


def restrict_signal(sigma: Sequence[int], a: int, b: int) -> Word:
    """Return ``(sigma(a), ..., sigma(b))``; ``a == b + 1`` gives the empty word."""
    N = len(sigma)
    if a < 0 or a > b + 1 or b >= N:
        raise IndexError(f"restriction [{a}, {b}] out of range for a signal of length {N}")
    return tuple(sigma[a : b + 1])


@dataclass(frozen=True)
class PerturbationModel:
    """Disturbances bounded by ``rho(x) = rho_scale * |x|``."""

    rho_scale: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.rho_scale >= 0:
            raise ValueError("rho_scale must be nonnegative")


def fixture_path(name: str) -> Path:
    """Path of a bundled system file (``ex1.json``, ``ex2.json``, ``scalar.json``)."""
    return Path(__file__).with_name("data") / name


def load_fixture(name: str) -> SwitchedSystem:
    if not name.endswith(".json"):
        name += ".json"
    return load_system(fixture_path(name))
