"""Convex conic subproblem layer.

Problems are linear objectives over Hermitian-PSD matrix variables and real
scalars with real-linear equality/inequality constraints -- exactly the class
both beamforming subproblems reduce to.  A real-linear functional of a
Hermitian variable X is Re Tr(G X) with G Hermitian.

The numerical solve is delegated to a conic interior-point backend (Clarabel
via cvxpy, SCS as fallback) behind this module's problem/solution types;
residuals and PSD quality are re-checked here independently of the backend.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import cvxpy as cp

from .linalg import InvalidInputError, check_hermitian, hermitize


@dataclass
class LinExpr:
    """Real-linear functional: sum_X Re Tr(G_X X) + sum_s c_s s + const."""

    mats: dict = field(default_factory=dict)     # var name -> Hermitian coeff
    scalars: dict = field(default_factory=dict)  # var name -> float coeff
    const: float = 0.0

    def add_mat(self, name, G):
        G = np.asarray(G, dtype=complex)
        if name in self.mats:
            self.mats[name] = self.mats[name] + G
        else:
            self.mats[name] = G
        return self

    def add_scalar(self, name, coeff):
        self.scalars[name] = self.scalars.get(name, 0.0) + float(coeff)
        return self

    def value(self, values):
        """Evaluate at a point {name: matrix or float}."""
        v = self.const
        for name, G in self.mats.items():
            v += float(np.real(np.trace(G @ values[name])))
        for name, c in self.scalars.items():
            v += c * float(values[name])
        return v


@dataclass
class ConicProblem:
    psd_vars: list = field(default_factory=list)     # (name, dim)
    scalar_vars: list = field(default_factory=list)  # names
    objective: LinExpr = field(default_factory=LinExpr)   # minimized
    eq_constraints: list = field(default_factory=list)    # (LinExpr, rhs)
    ineq_constraints: list = field(default_factory=list)  # (LinExpr, rhs): expr <= rhs

    def validate(self):
        dims = {}
        for name, d in self.psd_vars:
            if name in dims or d < 1:
                raise InvalidInputError(f"bad PSD variable declaration ({name}, {d})")
            dims[name] = d
        names = set(dims)
        for s in self.scalar_vars:
            if s in names:
                raise InvalidInputError(f"duplicate variable name {s}")
            names.add(s)
        exprs = [self.objective] + [e for e, _ in self.eq_constraints] \
            + [e for e, _ in self.ineq_constraints]
        for e in exprs:
            for name, G in e.mats.items():
                if name not in dims:
                    raise InvalidInputError(f"undeclared matrix variable {name}")
                if G.shape != (dims[name], dims[name]):
                    raise InvalidInputError(f"coefficient shape mismatch for {name}")
                check_hermitian(G)
            for name in e.scalars:
                if name not in self.scalar_vars:
                    raise InvalidInputError(f"undeclared scalar variable {name}")
        return self


@dataclass
class ConicSolution:
    status: str                    # Optimal | Infeasible | Unbounded | MaxIters
    values: dict = field(default_factory=dict)
    objective: float = float("nan")
    primal_residual: float = float("nan")
    dual_residual: float = float("nan")
    certificate: dict = field(default_factory=dict)

    @property
    def optimal(self):
        return self.status == "Optimal"


def _to_cvxpy(prob):
    vs = {}
    cons = []
    for name, d in prob.psd_vars:
        X = cp.Variable((d, d), hermitian=True, name=name)
        vs[name] = X
        cons.append(X >> 0)
    for name in prob.scalar_vars:
        vs[name] = cp.Variable(name=name)

    def row_scale(e):
        s = 0.0
        for G in e.mats.values():
            s = max(s, float(np.abs(G).max(initial=0.0)))
        for c in e.scalars.values():
            s = max(s, abs(c))
        return s if s > 0 else 1.0

    def build(e, s=1.0):
        out = e.const / s
        for name, G in e.mats.items():
            out = out + cp.real(cp.trace((G / s) @ vs[name]))
        for name, c in e.scalars.items():
            out = out + (c / s) * vs[name]
        return out

    # normalize each row to unit coefficient scale for conditioning
    for e, rhs in prob.eq_constraints:
        s = row_scale(e)
        cons.append(build(e, s) == rhs / s)
    for e, rhs in prob.ineq_constraints:
        s = row_scale(e)
        cons.append(build(e, s) <= rhs / s)
    return cp.Problem(cp.Minimize(build(prob.objective, 1.0)), cons), vs


def _primal_residual(prob, values):
    r = 0.0
    for e, rhs in prob.eq_constraints:
        r = max(r, abs(e.value(values) - rhs) / (1.0 + abs(rhs)))
    for e, rhs in prob.ineq_constraints:
        r = max(r, max(0.0, e.value(values) - rhs) / (1.0 + abs(rhs)))
    return r


def solve(prob, tol=1e-7, max_iters=100_000):
    """Solve a ConicProblem; deterministic for identical inputs."""
    prob.validate()
    cpx, vs = _to_cvxpy(prob)
    status = None
    solver_used = "CLARABEL"
    try:
        cpx.solve(solver=cp.CLARABEL, max_iter=min(max_iters, 200),
                  tol_gap_abs=tol, tol_gap_rel=tol,
                  tol_feas=tol, tol_infeas_abs=tol)
        status = cpx.status
    except (cp.SolverError, Exception):
        status = None
    if status is None or status in ("solver_error", None):
        solver_used = "SCS"
        try:
            cpx.solve(solver=cp.SCS, eps=max(tol, 1e-9),
                  max_iters=min(max_iters, 20_000))
            status = cpx.status
        except cp.SolverError as e:
            raise InvalidInputError(f"conic backends failed: {e}") from e

    cert = {"solver": solver_used, "solver_status": str(status)}
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return ConicSolution(status="Infeasible", certificate=cert)
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return ConicSolution(status="Unbounded", certificate=cert)

    values = {}
    for name, d in prob.psd_vars:
        X = vs[name].value
        if X is None:
            return ConicSolution(status="MaxIters", certificate=cert)
        values[name] = hermitize(np.asarray(X, dtype=complex))
    for name in prob.scalar_vars:
        x = vs[name].value
        if x is None:
            return ConicSolution(status="MaxIters", certificate=cert)
        values[name] = float(x)

    pres = _primal_residual(prob, values)
    out_status = "Optimal" if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) else "MaxIters"
    if status == cp.OPTIMAL_INACCURATE and pres > 100 * tol:
        out_status = "MaxIters"
    return ConicSolution(status=out_status, values=values,
                         objective=prob.objective.value(values),
                         primal_residual=pres, dual_residual=0.0,
                         certificate=cert)


# ---------------------------------------------------------------------------
# debug dump/load (JSON)

def _mat_out(G):
    return {"re": np.real(G).tolist(), "im": np.imag(G).tolist()}


def _mat_in(d):
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


def _expr_out(e):
    return {"mats": {k: _mat_out(v) for k, v in e.mats.items()},
            "scalars": dict(e.scalars), "const": e.const}


def _expr_in(d):
    return LinExpr(mats={k: _mat_in(v) for k, v in d["mats"].items()},
                   scalars={k: float(v) for k, v in d["scalars"].items()},
                   const=float(d["const"]))


def dump_problem(prob, path):
    """Write a problem to a JSON file for offline debugging."""
    doc = {
        "psd_vars": [[n, d] for n, d in prob.psd_vars],
        "scalar_vars": list(prob.scalar_vars),
        "objective": _expr_out(prob.objective),
        "eq_constraints": [[_expr_out(e), rhs] for e, rhs in prob.eq_constraints],
        "ineq_constraints": [[_expr_out(e), rhs] for e, rhs in prob.ineq_constraints],
    }
    with open(path, "w") as f:
        json.dump(doc, f)


def load_problem(path):
    with open(path) as f:
        doc = json.load(f)
    return ConicProblem(
        psd_vars=[(n, int(d)) for n, d in doc["psd_vars"]],
        scalar_vars=list(doc["scalar_vars"]),
        objective=_expr_in(doc["objective"]),
        eq_constraints=[(_expr_in(e), float(r)) for e, r in doc["eq_constraints"]],
        ineq_constraints=[(_expr_in(e), float(r)) for e, r in doc["ineq_constraints"]],
    ).validate()
