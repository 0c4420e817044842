"""Generators for the two packaged test problems.

Both problems freeze their model parameters from a named seed (on a stream
disjoint from sample draws) so that experiments are replayable; the frozen
draws ship with every run log.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import (
    ConstraintSet,
    Halfspace,
    Intersection,
    NonNegativeOrthant,
    UnitSimplex,
)
from .model import STREAM_PARAMS, StochasticProblem, stream_rng

__all__ = [
    "BasicExample",
    "PortfolioProblem",
    "basic_optimum",
    "make_basic_example",
    "make_portfolio",
    "write_param_table",
    "read_param_table",
]

BASIC_DIM = 20
PORTFOLIO_DIM = 100
RETURN_THRESHOLD = 1.05


def basic_optimum(a, b) -> np.ndarray:
    """Closed-form minimizer of the quadratic expectation problem:
    componentwise max(0, b/2). Independent of a."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("a and b must have equal length")
    return np.maximum(0.0, b / 2.0)


@dataclass(frozen=True, eq=False)
class BasicExample:
    """Separable quadratic f(x; xi) = sum_l a_l (x_l - b_l xi_l)^2 with
    xi ~ Unif(0,1)^20 on the nonnegative orthant. a ~ Unif(1,2) and
    b ~ Unif(-1,1) are frozen at generation time."""

    a: np.ndarray
    b: np.ndarray
    seed: int

    @classmethod
    def generate(cls, seed: int) -> "BasicExample":
        rng = stream_rng(seed, STREAM_PARAMS, 0)
        a = rng.uniform(1.0, 2.0, size=BASIC_DIM)
        b = rng.uniform(-1.0, 1.0, size=BASIC_DIM)
        return cls(a, b, int(seed))

    def build(self) -> Tuple[StochasticProblem, ConstraintSet]:
        a, b = self.a, self.b
        x_star = basic_optimum(a, b)
        # E[(x - b xi)^2] = x^2 - b x + b^2/3 for xi ~ Unif(0,1)
        f_star = float(np.sum(a * (x_star**2 - b * x_star + b**2 / 3.0)))
        problem = StochasticProblem(
            dim=BASIC_DIM,
            sampler=lambda rng, n: rng.random((n, BASIC_DIM)),
            value=lambda x, xi: float(np.sum(a * (x - b * xi) ** 2)),
            grad=lambda x, xi: 2.0 * a * (x - b * xi),
            value_many=lambda x, xis: ((x - b * xis) ** 2) @ a,
            grad_many=lambda x, xis: 2.0 * a * (x - b * xis),
            known_optimum=x_star,
            known_optimal_value=f_star,
            params={"a": a, "b": b, "seed": self.seed},
        )
        return problem, NonNegativeOrthant(BASIC_DIM)

    def to_table(self, path) -> None:
        write_param_table(path, {"a": self.a, "b": self.b})

    @classmethod
    def from_table(cls, path, seed: int = -1) -> "BasicExample":
        cols = read_param_table(path)
        return cls(cols["a"], cols["b"], seed)


def _max_return_infeasible(A: np.ndarray) -> bool:
    # the best single-asset portfolio must clear the return threshold,
    # otherwise the admissible set could be empty for this draw
    return float(np.max(A)) < RETURN_THRESHOLD


_CORRELATE_BLOCK = 512


def _correlate(u: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Rows of u @ B.T, computed in fixed-shape blocks.

    BLAS accumulation order depends on operand shapes, so a plain matmul
    makes row i of the product vary (at the last ulp) with the number of
    rows drawn; fixed-shape blocks keep realization i a function of row i
    alone, which the sampling contract (prefix stability) requires.
    """
    n = u.shape[0]
    out = np.empty((n, B.shape[0]))
    for start in range(0, n, _CORRELATE_BLOCK):
        block = u[start:start + _CORRELATE_BLOCK]
        if block.shape[0] < _CORRELATE_BLOCK:
            padded = np.zeros((_CORRELATE_BLOCK, u.shape[1]))
            padded[: block.shape[0]] = block
            out[start:] = (padded @ B.T)[: block.shape[0]]
        else:
            out[start:start + _CORRELATE_BLOCK] = block @ B.T
    return out


@dataclass(frozen=True, eq=False)
class PortfolioProblem:
    """Linear loss f(x; xi) = -<xi, x> with xi = A + B u, u ~ N(0, I), over
    normalized portfolios with expected return at least 1.05. A ~ Unif(0.9,1.2)
    and B ~ Unif(0,0.1) entrywise are frozen at generation time; ``redraws``
    counts how many seeds were skipped before the feasibility witness held."""

    A: np.ndarray
    B: np.ndarray
    seed: int
    redraws: int = 0

    @classmethod
    def generate(cls, seed: int) -> "PortfolioProblem":
        redraws = 0
        while True:
            rng = stream_rng(seed + redraws, STREAM_PARAMS, 0)
            A = rng.uniform(0.9, 1.2, size=PORTFOLIO_DIM)
            B = rng.uniform(0.0, 0.1, size=(PORTFOLIO_DIM, PORTFOLIO_DIM))
            if not _max_return_infeasible(A):
                return cls(A, B, int(seed + redraws), redraws)
            redraws += 1
            if redraws > 1000:
                raise RuntimeError("could not draw a feasible portfolio model")

    def build(self) -> Tuple[StochasticProblem, ConstraintSet]:
        A, B = self.A, self.B
        problem = StochasticProblem(
            dim=PORTFOLIO_DIM,
            sampler=lambda rng, n: A + _correlate(rng.standard_normal((n, PORTFOLIO_DIM)), B),
            value=lambda x, xi: float(-(xi @ x)),
            grad=lambda x, xi: -np.asarray(xi, dtype=float),
            value_many=lambda x, xis: -(xis @ x),
            grad_many=lambda x, xis: -xis,
            params={"A": A, "B": B, "seed": self.seed, "redraws": self.redraws},
        )
        cset = Intersection(
            (UnitSimplex(PORTFOLIO_DIM), Halfspace(A, RETURN_THRESHOLD))
        )
        return problem, cset

    def to_table(self, path) -> None:
        write_param_table(path, {"A": self.A, "B": self.B.ravel()})

    @classmethod
    def from_table(cls, path, seed: int = -1) -> "PortfolioProblem":
        cols = read_param_table(path)
        return cls(cols["A"], cols["B"].reshape(PORTFOLIO_DIM, PORTFOLIO_DIM), seed)


def make_basic_example(seed: int) -> Tuple[StochasticProblem, ConstraintSet]:
    return BasicExample.generate(seed).build()


def make_portfolio(seed: int) -> Tuple[StochasticProblem, ConstraintSet]:
    return PortfolioProblem.generate(seed).build()


def write_param_table(path, columns: dict) -> None:
    """Write named parameter vectors as a flat text table: name index value.

    %.17g formatting round-trips float64 exactly.
    """
    with open(path, "w") as fh:
        for name, values in columns.items():
            flat = np.asarray(values, dtype=float).ravel()
            for i, v in enumerate(flat):
                fh.write("%s %d %.17g\n" % (name, i, v))


def read_param_table(path) -> dict:
    """Inverse of write_param_table; returns {name: 1-d array}."""
    raw: dict = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, idx, val = line.split()
            raw.setdefault(name, []).append((int(idx), float(val)))
    out = {}
    for name, pairs in raw.items():
        pairs.sort()
        out[name] = np.array([v for _, v in pairs])
    return out
