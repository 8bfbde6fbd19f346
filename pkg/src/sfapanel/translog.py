"""Translog production kernel: design rows, output elasticities, returns to
scale and technical change.

Column order for inputs (K, L, F)::

     0 ln K         5 ½(ln L)²     10 ½t²
     1 ln L         6 ½(ln F)²     11 t·ln K
     2 ln F         7 ln K·ln L    12 t·ln L
     3 t            8 ln K·ln F    13 t·ln F
     4 ½(ln K)²     9 ln L·ln F

For N inputs the blocks are: N first-order logs, t, N halved squares,
N(N-1)/2 cross products (row-major over i < j), ½t², N time interactions.
There is no intercept; the firm effect absorbs it.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .errors import DataError

TECHNICAL_CHANGE_VARIANTS = ("time_only", "full")


@dataclass(frozen=True)
class TranslogLayout:
    inputs: tuple[str, ...] = ("K", "L", "F")

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def size(self) -> int:
        n = self.n_inputs
        return 3 * n + 2 + n * (n - 1) // 2

    @cached_property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        return tuple(combinations(range(self.n_inputs), 2))

    # column positions
    def first(self, n: int) -> int:
        return n

    @property
    def t(self) -> int:
        return self.n_inputs

    def square(self, n: int) -> int:
        return self.n_inputs + 1 + n

    def cross(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return 2 * self.n_inputs + 1 + self.pairs.index((i, j))

    @property
    def tt(self) -> int:
        return 2 * self.n_inputs + 1 + len(self.pairs)

    def time_inter(self, n: int) -> int:
        return self.tt + 1 + n

    def second_order(self, i: int, j: int) -> int:
        """Position of beta_ij (i == j gives the halved-square coefficient)."""
        return self.square(i) if i == j else self.cross(i, j)

    @cached_property
    def column_names(self) -> tuple[str, ...]:
        x = self.inputs
        return (
            tuple(f"ln_{a}" for a in x) + ("t",)
            + tuple(f"half_ln_{a}_sq" for a in x)
            + tuple(f"ln_{x[i]}_ln_{x[j]}" for i, j in self.pairs)
            + ("half_t_sq",)
            + tuple(f"t_ln_{a}" for a in x)
        )

    @cached_property
    def coefficient_names(self) -> tuple[str, ...]:
        x = self.inputs
        return (
            tuple(f"beta_{a}" for a in x) + ("beta_t",)
            + tuple(f"beta_{a}{a}" for a in x)
            + tuple(f"beta_{x[i]}{x[j]}" for i, j in self.pairs)
            + ("beta_tt",)
            + tuple(f"beta_{a}t" for a in x)
        )

    def cobb_douglas_mask(self) -> np.ndarray:
        """True on first-order input coefficients only."""
        mask = np.zeros(self.size, dtype=bool)
        mask[: self.n_inputs] = True
        return mask


DEFAULT_LAYOUT = TranslogLayout()


def design_matrix(log_inputs: np.ndarray, t: np.ndarray, layout: TranslogLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Regressor rows for log inputs of shape (n, N) and time offsets (n,)."""
    lx = np.atleast_2d(np.asarray(log_inputs, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    if lx.shape[1] != layout.n_inputs:
        raise ValueError(f"expected {layout.n_inputs} log inputs per row, got {lx.shape[1]}")
    if lx.shape[0] != t.shape[0]:
        raise ValueError("log_inputs and t have different lengths")
    cols = [lx, t[:, None], 0.5 * lx ** 2]
    cols += [(lx[:, i] * lx[:, j])[:, None] for i, j in layout.pairs]
    cols += [0.5 * t[:, None] ** 2, t[:, None] * lx]
    return np.hstack(cols)


def build_design(obs, t: float, layout: TranslogLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Single regressor row for an :class:`~sfapanel.panel.Observation`."""
    values = np.array([obs.inputs[name] for name in layout.inputs], dtype=float)
    if np.any(values <= 0):
        raise DataError("log of non-positive input")
    return design_matrix(np.log(values)[None, :], np.array([t]), layout)[0]


def log_kernel(beta: np.ndarray, log_inputs: np.ndarray, t: np.ndarray,
               layout: TranslogLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """ln f(x, t) without the firm intercept."""
    return design_matrix(log_inputs, t, layout) @ np.asarray(beta, dtype=float)


def elasticities(beta: np.ndarray, log_inputs: np.ndarray, t: np.ndarray,
                 layout: TranslogLayout = DEFAULT_LAYOUT) -> np.ndarray:
    """Output elasticities gamma_n = d ln f / d ln x_n, shape (n, N)."""
    beta = np.asarray(beta, dtype=float)
    lx = np.atleast_2d(np.asarray(log_inputs, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    N = layout.n_inputs
    B = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            B[i, j] = beta[layout.second_order(i, j)]
    first = beta[:N]
    time_inter = beta[layout.time_inter(0): layout.time_inter(0) + N]
    return first[None, :] + lx @ B.T + t[:, None] * time_inter[None, :]


def returns_to_scale(gamma: np.ndarray) -> np.ndarray:
    """Gamma = sum of elasticities (last axis)."""
    return np.sum(gamma, axis=-1)


def technical_change(beta: np.ndarray, t, log_inputs: Optional[np.ndarray] = None,
                     variant: str = "time_only", layout: TranslogLayout = DEFAULT_LAYOUT):
    """Frontier shift over time.

    ``time_only`` is beta_t + beta_tt * t.  ``full`` is the complete
    d ln f / d t, adding sum_n beta_nt ln x_n, and needs ``log_inputs``.
    """
    beta = np.asarray(beta, dtype=float)
    t = np.asarray(t, dtype=float)
    dT = beta[layout.t] + beta[layout.tt] * t
    if variant == "time_only":
        return dT
    if variant != "full":
        raise ValueError(f"unknown technical change variant {variant!r}")
    if log_inputs is None:
        raise ValueError("full technical change needs log inputs")
    lx = np.asarray(log_inputs, dtype=float)
    ti = beta[layout.time_inter(0): layout.time_inter(0) + layout.n_inputs]
    return dT + lx @ ti


def coefficient_index(names: Sequence[str], layout: TranslogLayout = DEFAULT_LAYOUT) -> list[int]:
    lookup = {n: i for i, n in enumerate(layout.coefficient_names)}
    return [lookup[n] for n in names]
