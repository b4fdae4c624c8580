"""
Block LMI assembly and a solver-agnostic semidefinite-programming contract.

Programs are written directly in cvxpy expressions. ``Variable`` tags a
``cp.Variable`` with its bound class (PSD, positive, unit interval, ...),
``BlockLMI`` assembles a symmetric block matrix from its lower triangle with
``cp.bmat``, and ``solve`` returns an ``SdpSolution`` whose status is
re-verified against the assembled constraints, so callers never depend on
backend-specific status codes.

Example:
    P = Variable.psd("P", 2)
    lmi = BlockLMI("upper", [[P.expr - np.eye(2)]], sense=Sense.NSD)
    problem = SdpProblem("maxdet", [P], [lmi], Objective.neg_logdet("P"))
    solution = solve(problem)          # P = I, objective 0
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import cvxpy as cp
import numpy as np
from tqdm import tqdm

from .errors import ConfigError, InfeasibleGridError, NumericalFailure, ProblemDefinitionError

logger = logging.getLogger(__name__)

DEFAULT_FEAS_TOL = 1e-6
DEFAULT_OPT_TOL = 1e-6

# Lower bound used to turn strict inequalities (P > 0, s > 0, a in (0,1)) into closed ones.
STRICT_FLOOR = 1e-8

SOLVER_PREFERENCE = ("CLARABEL", "SCS")

Number = Union[float, np.ndarray]
Block = Optional[Union[cp.Expression, np.ndarray]]


class VarKind(str, Enum):
    PSD = "psd"
    SYMMETRIC = "symmetric"
    FULL = "full"
    SCALAR = "scalar"
    POSITIVE = "positive"
    UNIT = "unit"


class Sense(str, Enum):
    PSD = "psd"
    NSD = "nsd"


class Status(str, Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True, eq=False)
class Variable:
    """A named cvxpy decision variable together with its bound class."""

    name: str
    kind: VarKind
    expr: cp.Variable

    @classmethod
    def psd(cls, name: str, n: int) -> "Variable":
        return cls(name, VarKind.PSD, cp.Variable((n, n), symmetric=True, name=name))

    @classmethod
    def symmetric(cls, name: str, n: int) -> "Variable":
        return cls(name, VarKind.SYMMETRIC, cp.Variable((n, n), symmetric=True, name=name))

    @classmethod
    def full(cls, name: str, rows: int, cols: int) -> "Variable":
        return cls(name, VarKind.FULL, cp.Variable((rows, cols), name=name))

    @classmethod
    def scalar(cls, name: str) -> "Variable":
        return cls(name, VarKind.SCALAR, cp.Variable(name=name))

    @classmethod
    def positive(cls, name: str) -> "Variable":
        return cls(name, VarKind.POSITIVE, cp.Variable(name=name))

    @classmethod
    def unit(cls, name: str) -> "Variable":
        return cls(name, VarKind.UNIT, cp.Variable(name=name))

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.expr.shape

    @property
    def is_scalar(self) -> bool:
        return self.shape == ()

    @property
    def is_symmetric(self) -> bool:
        return self.kind in (VarKind.PSD, VarKind.SYMMETRIC)

    def constraints(self) -> List[cp.Constraint]:
        """Closed versions of the strict bounds implied by ``kind``."""
        x = self.expr
        if self.kind == VarKind.PSD:
            return [x >> STRICT_FLOOR * np.eye(self.shape[0])]
        if self.kind == VarKind.POSITIVE:
            return [x >= STRICT_FLOOR]
        if self.kind == VarKind.UNIT:
            return [x >= STRICT_FLOOR, x <= 1.0 - STRICT_FLOOR]
        return []

    def bound_violation(self, value: Number) -> float:
        if self.kind == VarKind.PSD:
            return -float(np.linalg.eigvalsh(np.asarray(value))[0])
        if self.kind == VarKind.POSITIVE:
            return -float(value)
        if self.kind == VarKind.UNIT:
            return max(-float(value), float(value) - 1.0)
        return 0.0


def coefficient_norm(expr: cp.Expression) -> float:
    """Largest Frobenius norm among the numeric data an expression was built from."""
    return max((float(np.linalg.norm(np.asarray(c.value, dtype=float)))
                for c in expr.constants()), default=1.0)


def assign(expr: cp.Expression, values: Mapping[str, Number]) -> None:
    """Load ``values`` (keyed by variable name) into the variables of ``expr``."""
    for x in expr.variables():
        name = x.name()
        if name not in values:
            raise ProblemDefinitionError(f"no value given for variable {name!r}")
        value = np.asarray(values[name], dtype=float)
        if x.attributes["symmetric"]:
            value = 0.5 * (value + value.T)
        x.value = float(value) if x.shape == () else value


def evaluate(expr: cp.Expression, values: Mapping[str, Number]) -> np.ndarray:
    assign(expr, values)
    return np.asarray(expr.value, dtype=float)


def _shape(block) -> Tuple[int, ...]:
    return tuple(block.shape) if isinstance(block, cp.Expression) else np.shape(block)


@dataclass
class BlockLMI:
    """
    Symmetric block matrix given by its lower triangle; row i lists blocks (i, 0..i).

    Blocks are cvxpy expressions or numpy arrays; ``None`` marks a zero block.
    Diagonal blocks must be present and square.
    """

    name: str
    blocks: Sequence[Sequence[Block]]
    sense: Sense = Sense.PSD

    def __post_init__(self):
        for i, row in enumerate(self.blocks):
            if len(row) != i + 1:
                raise ProblemDefinitionError(f"{self.name}: row {i} must hold {i + 1} blocks")
            if row[i] is None:
                raise ProblemDefinitionError(f"{self.name}: diagonal block {i} missing")

    def sizes(self) -> List[int]:
        sizes = []
        for i, row in enumerate(self.blocks):
            shape = _shape(row[i])
            if len(shape) != 2 or shape[0] != shape[1]:
                raise ProblemDefinitionError(f"{self.name}: diagonal block {i} not square")
            sizes.append(shape[0])
        return sizes

    def matrix(self) -> cp.Expression:
        """The assembled symmetric matrix as one cvxpy expression."""
        sizes = self.sizes()
        grid: List[List] = [[None] * len(sizes) for _ in sizes]
        for i, row in enumerate(self.blocks):
            for j, block in enumerate(row):
                if block is None:
                    block = np.zeros((sizes[i], sizes[j]))
                if _shape(block) != (sizes[i], sizes[j]):
                    raise ProblemDefinitionError(
                        f"{self.name}: block ({i},{j}) has shape {_shape(block)}, "
                        f"expected {(sizes[i], sizes[j])}")
                if i == j:
                    grid[i][i] = (block + block.T) * 0.5
                else:
                    grid[i][j] = block
                    grid[j][i] = block.T
        return cp.bmat(grid)

    def evaluate(self, values: Mapping[str, Number]) -> np.ndarray:
        M = evaluate(self.matrix(), values)
        return 0.5 * (M + M.T)

    def violation(self, values: Mapping[str, Number]) -> float:
        """How far the evaluated matrix is from its sense, relative to max(1, ||M||)."""
        assembled = self.matrix()
        M = evaluate(assembled, values)
        M = 0.5 * (M + M.T) / max(coefficient_norm(assembled), 1e-12)
        eig = np.linalg.eigvalsh(M)
        raw = max(0.0, -eig[0]) if self.sense == Sense.PSD else max(0.0, eig[-1])
        return raw / max(1.0, float(np.max(np.abs(eig))))


@dataclass(frozen=True)
class LinearInequality:
    """lower <= expr <= upper for a scalar cvxpy expression."""

    name: str
    expr: cp.Expression
    lower: float = -math.inf
    upper: float = math.inf

    def constraints(self) -> List[cp.Constraint]:
        out = []
        if math.isfinite(self.lower):
            out.append(self.expr >= self.lower)
        if math.isfinite(self.upper):
            out.append(self.expr <= self.upper)
        return out


@dataclass(frozen=True)
class Objective:
    kind: str = "linear"
    weights: Mapping[str, float] = field(default_factory=dict)
    variable: Optional[str] = None

    @classmethod
    def minimize(cls, **weights: float) -> "Objective":
        return cls("linear", dict(weights))

    @classmethod
    def feasibility(cls) -> "Objective":
        return cls("linear", {})

    @classmethod
    def neg_logdet(cls, name: str) -> "Objective":
        return cls("neg_logdet", {}, name)

    def expression(self, variables: Mapping[str, "Variable"]) -> cp.Expression:
        if self.kind == "neg_logdet":
            return -cp.log_det(variables[self.variable].expr)
        terms = [w * (x.expr if x.is_scalar else cp.trace(x.expr))
                 for x, w in ((variables[name], w) for name, w in self.weights.items())]
        return sum(terms) if terms else cp.Constant(0.0)

    def value(self, values: Mapping[str, Number]) -> float:
        if self.kind == "neg_logdet":
            sign, logdet = np.linalg.slogdet(np.asarray(values[self.variable]))
            return -logdet if sign > 0 else math.inf
        total = 0.0
        for name, w in self.weights.items():
            v = np.asarray(values[name])
            total += w * (float(v) if v.ndim == 0 else float(np.trace(v)))
        return total


@dataclass
class SdpProblem:
    name: str
    variables: Sequence[Variable]
    lmis: Sequence[BlockLMI]
    objective: Objective
    inequalities: Sequence[LinearInequality] = ()

    def variable_map(self) -> Dict[str, Variable]:
        return {v.name: v for v in self.variables}

    def validate(self) -> None:
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ProblemDefinitionError(f"{self.name}: duplicate variable names")
        variables = self.variable_map()
        declared = {id(v.expr) for v in self.variables}
        exprs = [lmi.matrix() for lmi in self.lmis]
        for ineq in self.inequalities:
            if ineq.expr.shape != ():
                raise ProblemDefinitionError(f"{ineq.name}: linear inequalities must be scalar")
            exprs.append(ineq.expr)
        for expr in exprs:
            if not expr.is_affine():
                raise ProblemDefinitionError(f"{self.name}: constraint is not affine")
            for x in expr.variables():
                if id(x) not in declared:
                    raise ProblemDefinitionError(f"{self.name}: undeclared variable {x.name()!r}")
        obj = self.objective
        if obj.kind not in ("linear", "neg_logdet"):
            raise ProblemDefinitionError(f"{self.name}: unknown objective {obj.kind!r}")
        referenced = set(obj.weights) | ({obj.variable} if obj.variable else set())
        unknown = referenced - set(variables)
        if unknown:
            raise ProblemDefinitionError(f"{self.name}: objective references {sorted(unknown)}")
        if obj.kind == "neg_logdet" and variables[obj.variable].kind != VarKind.PSD:
            raise ProblemDefinitionError(
                f"{self.name}: -logdet requires a PSD variable, {obj.variable!r} is "
                f"{variables[obj.variable].kind.value}")

    def constraints(self) -> List[cp.Constraint]:
        """Bounds, LMIs (each divided by its coefficient norm) and linear inequalities."""
        out: List[cp.Constraint] = []
        for var in self.variables:
            out += var.constraints()
        for lmi in self.lmis:
            M = lmi.matrix()
            M = M / max(coefficient_norm(M), 1e-12)
            out.append(M >> 0 if lmi.sense == Sense.PSD else M << 0)
        for ineq in self.inequalities:
            out += ineq.constraints()
        return out

    def to_cvxpy(self, feasibility: bool = False) -> cp.Problem:
        self.validate()
        cost = cp.Constant(0.0) if feasibility else \
            self.objective.expression(self.variable_map())
        return cp.Problem(cp.Minimize(cost), self.constraints())


@dataclass
class SdpSolution:
    status: Status
    values: Dict[str, Number] = field(default_factory=dict)
    objective_value: float = math.inf
    solver: str = ""
    max_violation: float = math.nan

    @property
    def ok(self) -> bool:
        return self.status == Status.OPTIMAL

    def __getitem__(self, name: str) -> Number:
        return self.values[name]


def _solver_options(solver: str) -> Dict:
    # CLARABEL keeps its own defaults; SCS is first-order and needs tighter settings
    if solver == "SCS":
        return {"eps_abs": 1e-7, "eps_rel": 1e-7, "max_iters": 200000}
    return {}


def _solver_chain(solver: Optional[str]) -> List[str]:
    installed = set(cp.installed_solvers())
    if solver:
        if solver.upper() not in installed:
            raise NumericalFailure(f"solver {solver!r} is not installed ({sorted(installed)})")
        return [solver.upper()]
    chain = [s for s in SOLVER_PREFERENCE if s in installed]
    if not chain:
        raise NumericalFailure(f"no SDP-capable solver installed ({sorted(installed)})")
    return chain


def _extract(problem: SdpProblem) -> Dict[str, Number]:
    values: Dict[str, Number] = {}
    for var in problem.variables:
        raw = var.expr.value
        if raw is None:
            return {}
        if var.is_scalar:
            values[var.name] = float(raw)
        else:
            arr = np.array(raw, dtype=float)
            values[var.name] = 0.5 * (arr + arr.T) if var.is_symmetric else arr
    return values


def max_violation(problem: SdpProblem, values: Mapping[str, Number]) -> float:
    """Largest relative constraint violation of ``values`` over all LMIs and bounds."""
    worst = 0.0
    for lmi in problem.lmis:
        worst = max(worst, lmi.violation(values))
    for var in problem.variables:
        worst = max(worst, var.bound_violation(values[var.name]))
    for ineq in problem.inequalities:
        x = float(evaluate(ineq.expr, values))
        scale = max(1.0, abs(x))
        worst = max(worst, (ineq.lower - x) / scale, (x - ineq.upper) / scale)
    return worst


def solve(problem: SdpProblem, feas_tol: float = DEFAULT_FEAS_TOL,
          opt_tol: float = DEFAULT_OPT_TOL, solver: Optional[str] = None) -> SdpSolution:
    """
    Solve ``problem`` and verify the answer.

    Each LMI is divided by its largest coefficient norm before it reaches the
    backend. An "optimal" answer is only reported when every LMI, once rescaled,
    violates its sense by at most ``feas_tol``; otherwise the next backend is tried
    and, failing all, ``numerical_failure`` is returned (never raised). A backend
    objective further than ``opt_tol`` (relative) from the recomputed objective is
    logged.
    """
    prob = problem.to_cvxpy()
    obj = problem.objective

    last = SdpSolution(Status.NUMERICAL_FAILURE)
    for name in _solver_chain(solver):
        try:
            prob.solve(solver=name, **_solver_options(name))
        except cp.error.SolverError as exc:
            logger.debug("%s: solver %s failed: %s", problem.name, name, exc)
            continue
        status = prob.status
        if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SdpSolution(Status.INFEASIBLE, solver=name)
        if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            logger.debug("%s: solver %s returned %s", problem.name, name, status)
            continue
        values = _extract(problem)
        if not values:
            continue
        violation = max_violation(problem, values)
        objective = obj.value(values)
        solution = SdpSolution(Status.OPTIMAL, values, objective, name, violation)
        if violation <= feas_tol:
            if status == cp.OPTIMAL_INACCURATE:
                logger.warning("%s: %s reported an inaccurate optimum that passed the "
                               "residual check (violation %.2e)", problem.name, name, violation)
            if abs(objective - prob.value) > opt_tol * max(1.0, abs(objective)):
                logger.debug("%s: %s objective %.8g differs from recomputed %.8g",
                             problem.name, name, prob.value, objective)
            return solution
        logger.debug("%s: %s answer violates constraints by %.2e", problem.name, name, violation)
        last = SdpSolution(Status.NUMERICAL_FAILURE, values, objective, name, violation)
    return last


@dataclass(frozen=True)
class ScalarGrid:
    """Inclusive grid lo, lo+step, ..., <= hi."""

    lo: float = 0.01
    hi: float = 0.99
    step: float = 0.01

    def __post_init__(self):
        if not self.step > 0:
            raise ConfigError("grid.step", f"must be > 0, got {self.step!r}")
        if not self.lo < self.hi:
            raise ConfigError("grid.lo", f"must be < hi ({self.lo} >= {self.hi})")

    def points(self) -> np.ndarray:
        count = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return np.round(self.lo + self.step * np.arange(count), 12)


def line_search_scalar(obj: Callable[[float], SdpSolution], grid: ScalarGrid,
                       key: Optional[Callable[[SdpSolution], float]] = None,
                       workers: int = 1, progress: bool = False,
                       name: str = "grid search") -> Tuple[float, SdpSolution]:
    """
    Solve one SDP per grid point and return the best optimal one.

    Ties are broken toward the smaller scalar. Raises InfeasibleGridError with the
    per-point statuses when no point is optimal.
    """
    key = key or (lambda sol: sol.objective_value)
    points = [float(p) for p in grid.points()]
    bar = tqdm(total=len(points), desc=name, disable=not progress, leave=False)

    def run(point: float) -> SdpSolution:
        try:
            return obj(point)
        finally:
            bar.update(1)

    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                solutions = list(pool.map(run, points))
        else:
            solutions = [run(p) for p in points]
    finally:
        bar.close()

    best: Optional[Tuple[float, SdpSolution, float]] = None
    statuses: Dict[float, str] = {}
    for point, sol in zip(points, solutions):
        statuses[point] = sol.status.value
        logger.debug("%s: %.4f -> %s %.6g", name, point, sol.status.value, sol.objective_value)
        if not sol.ok:
            continue
        score = key(sol)
        if best is None or score < best[2]:
            best = (point, sol, score)
    if best is None:
        raise InfeasibleGridError(name, statuses)
    logger.info("%s: best point %.4f (score %.6g, %d/%d optimal)", name, best[0], best[2],
                sum(s == Status.OPTIMAL.value for s in statuses.values()), len(points))
    return best[0], best[1]


def _unvec(v: np.ndarray, n: int) -> np.ndarray:
    """Symmetric matrix from its scaled lower-triangular (column-major) vector."""
    M = np.zeros((n, n))
    M[np.triu_indices(n)] = v
    M = M + M.T
    M[np.diag_indices(n)] *= 0.5
    M[~np.eye(n, dtype=bool)] /= math.sqrt(2.0)
    return M


def to_sdpa(problem: SdpProblem, path: Union[str, Path]) -> Path:
    """
    Write ``problem`` in SDPA sparse format (min c'x s.t. sum x_i F_i - F_0 >= 0).

    Coefficients come from cvxpy's conic form (slack b - A x in zero, nonnegative
    and PSD cones), so the unknowns are cvxpy's own stacked variables. Equality
    and nonnegative rows share one diagonal block placed last. A -logdet objective
    has no SDPA form; it is exported as a feasibility problem and noted in the
    header comment.
    """
    logdet = problem.objective.kind == "neg_logdet"
    data, _, _ = problem.to_cvxpy(feasibility=logdet).get_problem_data(cp.SCS)
    dims = data["dims"]
    if dims.soc or dims.exp or dims.p3d:
        raise ProblemDefinitionError(f"{problem.name}: only LP and PSD cones export to SDPA")
    A = data["A"].toarray()
    # column 0 is the constant b; F_k = -mat(G[:, k]) for every k
    G = np.column_stack([np.asarray(data["b"], dtype=float), A])
    zero, nonneg = dims.zero, dims.nonneg
    lp = np.vstack([G[:zero], -G[:zero], G[zero:zero + nonneg]])

    psd = []
    offset = zero + nonneg
    for n in dims.psd:
        width = n * (n + 1) // 2
        psd.append((slice(offset, offset + width), n))
        offset += width

    sizes = [n for _, n in psd] + ([-lp.shape[0]] if lp.shape[0] else [])
    lines = [f'"{problem.name}: objective {problem.objective.kind}'
             + (" exported as feasibility" if logdet else "") + '"',
             str(A.shape[1]), str(len(sizes)), " ".join(str(s) for s in sizes),
             " ".join(f"{v:.17g}" for v in np.asarray(data["c"], dtype=float))]

    for k in range(G.shape[1]):
        mats = [-_unvec(G[rows, k], n) for rows, n in psd]
        if lp.shape[0]:
            mats.append(np.diag(-lp[:, k]))
        for blk, M in enumerate(mats, start=1):
            for i, j in zip(*np.nonzero(np.triu(M))):
                lines.append(f"{k} {blk} {i + 1} {j + 1} {M[i, j]:.17g}")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    logger.debug("wrote SDPA dump of %s to %s", problem.name, path)
    return path
