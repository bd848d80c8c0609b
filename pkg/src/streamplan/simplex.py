"""A small dense linear-program solver (two-phase primal simplex).

The solver is deliberately self-contained and deterministic: identical input
produces an identical pivot sequence, so predictions are reproducible across
runs. Pivoting uses Dantzig's rule for speed and permanently falls back to
Bland's rule when the objective stalls, which guarantees termination on
degenerate programs.

Variables are nonnegative. Constraints carry a name, a kind and a subject so
callers can map binding constraints back to domain objects (bottlenecks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from streamplan.errors import LpInfeasibleError, LpUnboundedError

LE = "<="
GE = ">="
EQ = "=="

PIVOT_TOL = 1e-9
# a constraint counts as tight when its slack is below this, relative to rhs
TIGHT_RTOL = 1e-6
# consecutive non-improving Dantzig pivots before switching to Bland's rule
STALL_LIMIT = 30


@dataclass
class Constraint:
    name: str
    coeffs: dict[int, float]
    sense: str
    rhs: float
    kind: str = ""
    subject: str = ""


@dataclass
class LinearProgram:
    """maximize objective . x subject to the constraints, x >= 0."""

    var_names: list[str]
    objective: dict[int, float]
    constraints: list[Constraint] = field(default_factory=list)

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    def add(
        self,
        name: str,
        coeffs: dict[int, float],
        sense: str,
        rhs: float,
        kind: str = "",
        subject: str = "",
    ) -> None:
        if sense not in (LE, GE, EQ):
            raise ValueError(f"bad sense {sense!r}")
        self.constraints.append(Constraint(name, coeffs, sense, rhs, kind, subject))

    def to_text(self) -> str:
        """Human-readable constraint listing for debugging."""

        def term(idx: int, coef: float) -> str:
            return f"{coef:+.6g}*{self.var_names[idx]}"

        lines = [
            "maximize "
            + " ".join(term(i, c) for i, c in sorted(self.objective.items()))
        ]
        for c in self.constraints:
            expr = " ".join(term(i, v) for i, v in sorted(c.coeffs.items())) or "0"
            lines.append(f"{c.name}: {expr} {c.sense} {c.rhs:.6g}")
        return "\n".join(lines)


@dataclass
class LpSolution:
    objective: float
    x: np.ndarray
    tight: list[str]
    activities: dict[str, float]
    iterations: int

    def value(self, idx: int) -> float:
        return float(self.x[idx])


class _Tableau:
    """Dense simplex tableau: rows are constraints, plus a cost row."""

    def __init__(self, body: np.ndarray, rhs: np.ndarray, basis: list[int]):
        self.body = body
        self.rhs = rhs
        self.basis = basis

    def reduced_costs(self, cost: np.ndarray) -> tuple[np.ndarray, float]:
        lam = cost[self.basis]
        reduced = cost - lam @ self.body
        return reduced, float(lam @ self.rhs)

    def pivot(self, row: int, col: int) -> None:
        piv = self.body[row, col]
        self.body[row] /= piv
        self.rhs[row] /= piv
        for r in range(self.body.shape[0]):
            if r != row and abs(self.body[r, col]) > 0:
                factor = self.body[r, col]
                self.body[r] -= factor * self.body[row]
                self.rhs[r] -= factor * self.rhs[row]
        self.rhs[self.rhs < 0] = np.where(
            self.rhs[self.rhs < 0] > -PIVOT_TOL, 0.0, self.rhs[self.rhs < 0]
        )
        self.basis[row] = col


def _run_simplex(tab: _Tableau, cost: np.ndarray, max_iter: int) -> int:
    """Minimize cost over the tableau in place. Returns iteration count."""
    iterations = 0
    stall = 0
    bland = False
    reduced, obj = tab.reduced_costs(cost)
    while True:
        candidates = np.nonzero(reduced < -PIVOT_TOL)[0]
        if candidates.size == 0:
            return iterations
        if bland:
            col = int(candidates[0])
        else:
            col = int(candidates[np.argmin(reduced[candidates])])
        column = tab.body[:, col]
        rows = np.nonzero(column > PIVOT_TOL)[0]
        if rows.size == 0:
            raise LpUnboundedError("objective is unbounded")
        ratios = tab.rhs[rows] / column[rows]
        best = ratios.min()
        ties = rows[np.nonzero(ratios <= best + PIVOT_TOL)[0]]
        if ties.size > 1:
            # Bland-style: leave the variable with the smallest index
            row = int(ties[np.argmin(np.asarray(tab.basis)[ties])])
        else:
            row = int(ties[0])
        tab.pivot(row, col)
        iterations += 1
        if iterations > max_iter:
            raise RuntimeError("simplex iteration limit exceeded")
        new_reduced, new_obj = tab.reduced_costs(cost)
        if not bland:
            stall = stall + 1 if new_obj >= obj - PIVOT_TOL else 0
            if stall >= STALL_LIMIT:
                bland = True
        reduced, obj = new_reduced, new_obj


def solve_lp(lp: LinearProgram) -> LpSolution:
    """Solve the LP exactly; raises LpInfeasibleError / LpUnboundedError."""
    n = lp.n_vars
    rows: list[np.ndarray] = []
    rhs: list[float] = []
    senses: list[str] = []
    for c in lp.constraints:
        row = np.zeros(n)
        for idx, coef in c.coeffs.items():
            row[idx] += coef
        if not np.any(np.abs(row) > PIVOT_TOL):
            # constant constraint: feasible or trivially infeasible
            ok = (
                (c.sense == LE and c.rhs >= -PIVOT_TOL)
                or (c.sense == GE and c.rhs <= PIVOT_TOL)
                or (c.sense == EQ and abs(c.rhs) <= PIVOT_TOL)
            )
            if not ok:
                raise LpInfeasibleError(f"constraint {c.name!r} is unsatisfiable")
            continue
        rows.append(row)
        rhs.append(c.rhs)
        senses.append(c.sense)

    m = len(rows)
    if m == 0:
        # only nonnegativity: bounded iff no positive objective coefficient
        if any(v > PIVOT_TOL for v in lp.objective.values()):
            raise LpUnboundedError("no constraints bound a maximized variable")
        x = np.zeros(n)
        return LpSolution(0.0, x, [], _activities(lp, x), 0)

    a = np.vstack(rows)
    b = np.asarray(rhs, dtype=float)

    # equality form: append one signed slack column per inequality
    slack_cols = np.zeros((m, m))
    for i, sense in enumerate(senses):
        if sense == LE:
            slack_cols[i, i] = 1.0
        elif sense == GE:
            slack_cols[i, i] = -1.0
    full = np.hstack([a, slack_cols])
    # normalize to b >= 0 so artificials can start basic
    for i in range(m):
        if b[i] < 0:
            full[i] *= -1.0
            b[i] *= -1.0

    # rows whose slack column survived normalization with +1 start basic;
    # everything else gets an artificial variable
    basis: list[int] = [-1] * m
    art_rows: list[int] = []
    for i in range(m):
        if senses[i] != EQ and full[i, n + i] == 1.0:
            basis[i] = n + i
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    if n_art:
        art_cols = np.zeros((m, n_art))
        for j, i in enumerate(art_rows):
            art_cols[i, j] = 1.0
            basis[i] = n + m + j
        full = np.hstack([full, art_cols])

    tab = _Tableau(full, b, basis)
    total_cols = full.shape[1]
    max_iter = 200 * (m + total_cols) + 2000
    iterations = 0

    if n_art:
        phase1 = np.zeros(total_cols)
        phase1[n + m :] = 1.0
        iterations += _run_simplex(tab, phase1, max_iter)
        _, residual = tab.reduced_costs(phase1)
        if residual > 1e-7:
            raise LpInfeasibleError(f"no feasible point (phase-1 residual {residual:.3g})")
        # pivot remaining artificials out of the basis; drop redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if tab.basis[i] < n + m:
                continue
            pivot_col = next(
                (j for j in range(n + m) if abs(tab.body[i, j]) > 1e-7), None
            )
            if pivot_col is None:
                keep[i] = False
            else:
                tab.pivot(i, pivot_col)
        if not keep.all():
            tab.body = tab.body[keep]
            tab.rhs = tab.rhs[keep]
            tab.basis = [bv for bv, k in zip(tab.basis, keep) if k]
        tab.body = tab.body[:, : n + m]

    cost = np.zeros(n + m)
    for idx, coef in lp.objective.items():
        cost[idx] = -coef  # maximize -> minimize the negation
    iterations += _run_simplex(tab, cost, max_iter)

    x = np.zeros(n + m)
    for row, col in enumerate(tab.basis):
        x[col] = tab.rhs[row]
    x = x[:n]
    x[np.abs(x) < PIVOT_TOL] = 0.0
    objective = float(sum(coef * x[idx] for idx, coef in lp.objective.items()))
    activities = _activities(lp, x)
    tight = []
    for c in lp.constraints:
        if c.sense == EQ:
            continue
        act = activities[c.name]
        slack = (c.rhs - act) if c.sense == LE else (act - c.rhs)
        if slack <= max(PIVOT_TOL, TIGHT_RTOL * max(1.0, abs(c.rhs))):
            tight.append(c.name)
    return LpSolution(objective, x, tight, activities, iterations)


def _activities(lp: LinearProgram, x: np.ndarray) -> dict[str, float]:
    return {
        c.name: float(sum(coef * x[idx] for idx, coef in c.coeffs.items()))
        for c in lp.constraints
    }
