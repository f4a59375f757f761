"""Conic solver adapter and the bounding helpers shared by the subproblems.

Every subproblem is written as a parametrised cvxpy problem and handed to
solve_conic, which runs an interior-point conic solver (Clarabel by default,
SCS as a fallback) and reports a status instead of raising. Problems are
compiled once per shape and re-solved with new parameter values.

Bounds used by the successive convex approximations:

* log-ratio bound, tight at (xi_n, psi_n), with a = xi_n / psi_n:
      ln(1 + xi/psi) >= ln(1 + a) + a/(1 + a) * (2 - xi_n/xi - psi/psi_n)
* quadratic bounds of a twice-differentiable f with curvature bound delta:
      f(p_n) + g^T (p - p_n) -/+ delta/2 ||p - p_n||^2
* linear minorant of a convex quadratic form:
      v^H M v >= 2 Re{v_n^H M v} - v_n^H M v_n
"""

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

SOLVER_TOL = 1e-7
CLARABEL_REG = 1e-7     # static KKT regularisation; the default 1e-8 breaks down on the beam SDPs
SCA_TOL = 1e-3          # relative stop for SCA / MM loops
DINKELBACH_TOL = 1e-1   # relative stop for Dinkelbach ratio updates


@dataclass
class ConicProblem:
    """A compiled cvxpy problem together with handles to its variables and parameters."""

    problem: cp.Problem
    variables: dict
    params: dict = field(default_factory=dict)

    def set(self, **values):
        for k, v in values.items():
            self.params[k].value = v
        return self


@dataclass
class ConicSolution:
    status: str          # "optimal", "infeasible", "max_iter" or "error"
    objective: float
    values: dict
    solver: str = ""

    @property
    def ok(self):
        return self.status == "optimal"


_STATUS = {
    cp.OPTIMAL: "optimal",
    cp.OPTIMAL_INACCURATE: "optimal",
    cp.INFEASIBLE: "infeasible",
    cp.INFEASIBLE_INACCURATE: "infeasible",
    cp.UNBOUNDED: "infeasible",
    cp.UNBOUNDED_INACCURATE: "infeasible",
    cp.USER_LIMIT: "max_iter",
}


def solve_conic(problem: ConicProblem, solver="CLARABEL", max_iter=200, fallback=True) -> ConicSolution:
    """Solve and return (status, values). Never raises on solver failure."""
    opts = {}
    if solver == "CLARABEL":
        opts = dict(tol_gap_abs=SOLVER_TOL, tol_gap_rel=SOLVER_TOL, tol_feas=SOLVER_TOL, max_iter=max_iter,
                    direct_solve_method="qdldl", static_regularization_constant=CLARABEL_REG)
    elif solver == "SCS":
        opts = dict(eps=SOLVER_TOL, max_iters=50 * max_iter)
    try:
        with warnings.catch_warnings():
            # inaccurate solutions are mapped by status; every caller re-checks candidates exactly
            warnings.filterwarnings("ignore", message="Solution may be inaccurate")
            # no solver reuse between calls: results must not depend on what was solved before
            problem.problem.solve(solver=solver, warm_start=False, **opts)
        status = _STATUS.get(problem.problem.status, "error")
    except (cp.error.SolverError, ValueError, ArithmeticError, np.linalg.LinAlgError):
        status = "error"
    if status in ("error", "max_iter") and fallback and solver != "SCS":
        return solve_conic(problem, solver="SCS", max_iter=max_iter, fallback=False)
    values = {}
    if status == "optimal":
        values = {k: (None if v.value is None else np.array(v.value)) for k, v in problem.variables.items()}
        if any(v is None for v in values.values()):
            status = "error"
    obj = problem.problem.value if status == "optimal" else np.nan
    return ConicSolution(status, float(np.real(obj)) if obj is not None else np.nan, values, solver)


def dump_problem(problem: ConicProblem, path, solver="CLARABEL"):
    """Write the standard-form data (c, A, b, cone sizes) to a plain text file."""
    data, _, _ = problem.problem.get_problem_data(solver)
    A = data["A"].tocoo()
    with open(path, "w") as fh:
        fh.write("# minimize c^T x  s.t.  A x + s = b, s in K\n")
        fh.write(f"n {A.shape[1]}\nm {A.shape[0]}\ncones {data['dims']}\n")
        fh.write("c " + " ".join(repr(float(x)) for x in data["c"]) + "\n")
        fh.write("b " + " ".join(repr(float(x)) for x in data["b"]) + "\n")
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"A {i} {j} {v!r}\n")


def complex_embed(H):
    """Real symmetric embedding [[Re, -Im], [Im, Re]] of a Hermitian matrix."""
    H = np.asarray(H)
    if H.ndim != 2 or H.shape[0] != H.shape[1] or not np.allclose(H, H.conj().T, atol=1e-12):
        raise ValueError("matrix is not Hermitian")
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def complex_unembed(S):
    n = S.shape[0] // 2
    return S[:n, :n] + 1j * S[n:, :n]


def log_ratio_coefficients(xi_n, psi_n):
    """(const, a, b) with  ln(1 + xi/psi) >= const - a/xi - b*psi, tight at (xi_n, psi_n)."""
    xi_n, psi_n = np.asarray(xi_n, dtype=float), np.asarray(psi_n, dtype=float)
    if np.any(xi_n <= 0) or np.any(psi_n <= 0):
        raise ValueError("expansion point must be positive")
    r = xi_n / psi_n
    c = r / (1 + r)
    return np.log1p(r) + 2 * c, c * xi_n, c / psi_n


def log_ratio_lower_bound(xi, psi, xi_n, psi_n):
    xi, psi = np.asarray(xi, dtype=float), np.asarray(psi, dtype=float)
    if np.any(xi <= 0) or np.any(psi <= 0):
        raise ValueError("arguments must be positive")
    const, a, b = log_ratio_coefficients(xi_n, psi_n)
    return const - a / xi - b * psi


def quad_lower_taylor(f_n, grad, p, p_n, delta):
    if delta < 0:
        raise ValueError("curvature bound must be non-negative")
    d = np.asarray(p, dtype=float) - np.asarray(p_n, dtype=float)
    return f_n + grad @ d - delta / 2 * d @ d


def quad_upper_taylor(f_n, grad, p, p_n, delta):
    if delta < 0:
        raise ValueError("curvature bound must be non-negative")
    d = np.asarray(p, dtype=float) - np.asarray(p_n, dtype=float)
    return f_n + grad @ d + delta / 2 * d @ d


def curvature_cap(hessian):
    """Frobenius norm of a Hessian, used as the curvature bound delta."""
    return float(np.linalg.norm(hessian, "fro"))


def linearize_affine_quadratic(M, v_n):
    """Coefficients (g, c) of the minorant v^H M v >= 2 Re{g^H v} + c, tight at v_n.

    Here g = M v_n and c = -v_n^H M v_n. M must be Hermitian PSD.
    """
    M = np.asarray(M)
    if not np.allclose(M, M.conj().T, atol=1e-12) or np.linalg.eigvalsh(M).min() < -1e-10 * max(1.0, np.abs(M).max()):
        raise ValueError("matrix must be Hermitian positive semidefinite")
    g = M @ v_n
    return g, -float(np.real(v_n.conj() @ g))


def square_minorant(z_n):
    """|z|^2 >= 2 Re{conj(z_n) z} - |z_n|^2 for scalar or vector z."""
    return np.conj(z_n), -np.abs(z_n) ** 2


def dinkelbach_update(C, D):
    if D <= 0:
        raise ValueError("denominator must be positive")
    return C / D
