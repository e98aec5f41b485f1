"""Small dense two-phase simplex solver.

Solves ``maximise c.x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  0 <= x <= ub``
with a full tableau and Bland's anti-cycling rule.  Finite upper bounds are
added as ordinary rows.  Intended for problems with a few hundred variables
and constraints, where determinism matters more than speed.

A solved phase 1 can be reused for several objectives over the same
feasible set via :class:`SimplexProblem`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LPError(RuntimeError):
    pass


class InfeasibleError(LPError):
    """The constraint set is empty."""


class UnboundedError(LPError):
    """The objective is unbounded above on the feasible set."""


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    iterations: int


class SimplexProblem:
    """Feasible region in standard form, ready for repeated maximisation."""

    def __init__(self, n_vars: int, A_ub=None, b_ub=None, A_eq=None, b_eq=None,
                 ub=None, tol: float = 1e-9, max_iter: int = 50000):
        self.n = int(n_vars)
        self.tol = tol
        self.max_iter = max_iter
        rows, rhs, kinds = [], [], []

        def add(A, b, kind):
            if A is None:
                return
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if A.shape[1] != self.n or A.shape[0] != b.shape[0]:
                raise ValueError("constraint shapes do not match")
            for a_row, bi in zip(A, b):
                rows.append(a_row)
                rhs.append(bi)
                kinds.append(kind)

        add(A_ub, b_ub, "le")
        add(A_eq, b_eq, "eq")
        if ub is not None:
            ub = np.broadcast_to(np.asarray(ub, dtype=float), (self.n,))
            for j in np.flatnonzero(np.isfinite(ub)):
                r = np.zeros(self.n)
                r[j] = 1.0
                rows.append(r)
                rhs.append(ub[j])
                kinds.append("le")
        self._build(rows, rhs, kinds)
        self._phase1()

    def _build(self, rows, rhs, kinds):
        m = len(rows)
        A = np.array(rows, dtype=float).reshape(m, self.n)
        b = np.array(rhs, dtype=float)
        # equilibrate rows so tolerances mean the same thing everywhere
        scale = np.max(np.abs(A), axis=1) if m else np.ones(0)
        scale[scale == 0] = 1.0
        A /= scale[:, None]
        b /= scale
        n_slack = sum(k == "le" for k in kinds)
        slack = np.zeros((m, n_slack))
        si = 0
        for i, k in enumerate(kinds):
            if k == "le":
                slack[i, si] = 1.0
                si += 1
        A = np.hstack([A, slack])
        neg = b < 0
        A[neg] *= -1
        b[neg] *= -1
        self.m = m
        self.n_struct = A.shape[1]
        # one artificial per row keeps phase 1 uniform
        self.T = np.zeros((m + 1, self.n_struct + m + 1))
        self.T[:m, : self.n_struct] = A
        self.T[:m, self.n_struct : self.n_struct + m] = np.eye(m)
        self.T[:m, -1] = b
        self.basis = list(range(self.n_struct, self.n_struct + m))
        self.iterations = 0

    def _pivot(self, r: int, c: int) -> None:
        T = self.T
        T[r] /= T[r, c]
        col = T[:, c].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        self.basis[r] = c
        self.iterations += 1

    def _run(self, allowed: int) -> None:
        """Minimise the objective in the last row over the first ``allowed`` columns."""
        T, tol = self.T, self.tol
        for _ in range(self.max_iter):
            red = T[-1, :allowed]
            cand = np.flatnonzero(red < -tol)
            if len(cand) == 0:
                return
            c = int(cand[0])  # Bland: lowest index enters
            col = T[:-1, c]
            pos = np.flatnonzero(col > tol)
            if len(pos) == 0:
                raise UnboundedError("objective unbounded")
            ratios = T[pos, -1] / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + tol * max(1.0, abs(best))]
            r = int(min(ties, key=lambda i: self.basis[i]))  # Bland: lowest basic index leaves
            self._pivot(r, c)
        raise LPError("simplex iteration limit reached")

    def _phase1(self) -> None:
        T = self.T
        m, ns = self.m, self.n_struct
        T[-1, :] = 0.0
        T[-1, :ns] = -T[:m, :ns].sum(axis=0)
        T[-1, -1] = -T[:m, -1].sum()
        self._run(ns + m)
        if -T[-1, -1] > 1e-7 * max(1.0, np.abs(T[:m, -1]).max(initial=0.0)):
            raise InfeasibleError("constraints are infeasible")
        # drive remaining artificials out of the basis
        for r, bv in enumerate(list(self.basis)):
            if bv >= ns:
                nz = np.flatnonzero(np.abs(T[r, :ns]) > self.tol)
                if len(nz):
                    self._pivot(r, int(nz[0]))
        keep = [r for r, bv in enumerate(self.basis) if bv < ns]
        self.T = np.vstack([T[keep][:, list(range(ns)) + [T.shape[1] - 1]], np.zeros((1, ns + 1))])
        self.basis = [self.basis[r] for r in keep]
        self.m = len(keep)
        self._feasible = (self.T.copy(), list(self.basis))

    def maximise(self, c) -> LPResult:
        c = np.asarray(c, dtype=float)
        if c.shape != (self.n,):
            raise ValueError("objective has wrong length")
        T0, b0 = self._feasible
        self.T = T0.copy()
        self.basis = list(b0)
        start = self.iterations
        T = self.T
        cost = np.zeros(self.n_struct)
        cost[: self.n] = -c
        T[-1, :-1] = cost
        T[-1, -1] = 0.0
        for r, bv in enumerate(self.basis):
            if cost[bv] != 0.0:
                T[-1] -= cost[bv] * T[r]
        self._run(self.n_struct)
        x = np.zeros(self.n_struct)
        for r, bv in enumerate(self.basis):
            x[bv] = T[r, -1]
        x = x[: self.n]
        return LPResult(x=x, fun=float(c @ x), iterations=self.iterations - start)


def maximise(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, ub=None, tol: float = 1e-9) -> LPResult:
    """One-shot maximisation; see :class:`SimplexProblem`."""
    c = np.asarray(c, dtype=float)
    return SimplexProblem(len(c), A_ub, b_ub, A_eq, b_eq, ub, tol=tol).maximise(c)
