# forward_series.py

"""
Forward problem for (Delta + k^2) u + k^2 (alpha u + beta u^3) = 0 with a
boundary point source: the fixed-point map T, a Newton solver, the contraction
checks, and the multilinear forward operators K_n with Born partial sums.

Sign convention: op_A(v, alpha) = G(alpha v) with G(v) = -k^2 int G(x, y) v dy,
so T(v) = u0 + op_A(v, alpha) + op_B(v^3, beta) and K_1 = A K_0 + B K_0^3.
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import asdict, dataclass, field
from multiprocessing.pool import ThreadPool

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from discretization import BackgroundField, GreenSolver
from errors import DimensionError, DomainError, NonConvergenceError

logger = logging.getLogger(__name__)


# ------------------------------------------------------------------
# 1. SUSCEPTIBILITY + OPERATORS A, B, T
# ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Susceptibility:
    """zeta = (alpha, beta) sampled at grid nodes."""
    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        beta = np.array(self.beta, dtype=float)
        if alpha.ndim != 1 or alpha.shape != beta.shape:
            raise DimensionError(f"alpha {alpha.shape} and beta {beta.shape} must be matching 1-d arrays")
        if not (np.isfinite(alpha).all() and np.isfinite(beta).all()):
            raise DomainError("susceptibility must be finite")
        alpha.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls, n: int) -> "Susceptibility":
        return cls(np.zeros(n), np.zeros(n))

    @property
    def size(self) -> int:
        return self.alpha.size

    def sup_norm(self) -> float:
        if self.size == 0:
            return 0.0
        return float(max(np.abs(self.alpha).max(), np.abs(self.beta).max()))

    def is_zero(self) -> bool:
        return not (self.alpha.any() or self.beta.any())

    def __add__(self, other: "Susceptibility") -> "Susceptibility":
        return Susceptibility(self.alpha + other.alpha, self.beta + other.beta)

    def __sub__(self, other: "Susceptibility") -> "Susceptibility":
        return Susceptibility(self.alpha - other.alpha, self.beta - other.beta)

    def __mul__(self, c: float) -> "Susceptibility":
        return Susceptibility(c * self.alpha, c * self.beta)

    __rmul__ = __mul__

    def __neg__(self) -> "Susceptibility":
        return Susceptibility(-self.alpha, -self.beta)


def _check_shapes(solver: GreenSolver, v, coef, name: str):
    v = solver.grid.check_field(v, "v")
    coef = solver.grid.check_field(coef, name)
    return v, coef


def op_A(v, alpha, solver: GreenSolver) -> np.ndarray:
    """-k^2 int G(x, y) alpha(y) v(y) dy."""
    v, alpha = _check_shapes(solver, v, alpha, "alpha")
    if not alpha.any():
        return np.zeros_like(v)
    return solver.apply_green(alpha * v)


def op_B(v, beta, solver: GreenSolver) -> np.ndarray:
    """Same kernel as op_A; `v` is the triple product supplied by the caller."""
    v, beta = _check_shapes(solver, v, beta, "beta")
    if not beta.any():
        return np.zeros_like(v)
    return solver.apply_green(beta * v)


def apply_T(v, zeta: Susceptibility, background: BackgroundField) -> np.ndarray:
    solver = background.solver
    v = solver.grid.check_field(v, "v")
    return background.values + op_A(v, zeta.alpha, solver) + op_B(v ** 3, zeta.beta, solver)


# ------------------------------------------------------------------
# 2. FORWARD SOLVERS
# ------------------------------------------------------------------

@dataclass
class FixedPointReport:
    method: str
    converged: bool
    iterations: int
    residual: float                 # ||u - T(u)||_inf at the returned u
    step: float                     # last ||v_{m+1} - v_m||_inf
    q: float                        # empirical contraction quotient
    gamma: float
    r: float
    R: float
    contraction_bound: float | None
    residual_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _sup(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0


def empirical_quotient(steps: list, scale: float) -> float:
    """max ratio of successive steps, ignoring steps already at round-off."""
    floor = 100.0 * np.finfo(float).eps * max(scale, 1.0)
    ratios = [b / a for a, b in zip(steps, steps[1:]) if a > floor]
    return float(max(ratios)) if ratios else 0.0


def fixed_point_solve(
    zeta: Susceptibility,
    background: BackgroundField,
    tol: float = 1e-10,
    max_iter: int = 200,
    gamma: float = 1.0,
    mu: float | None = None,
) -> tuple[np.ndarray, FixedPointReport]:
    """Iterate v <- T(v) from u0 until successive iterates differ by <= tol."""
    if not tol > 0:
        raise DomainError(f"tol must be positive, got {tol!r}")
    if int(max_iter) < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter!r}")

    u0 = background.values
    nu0 = _sup(u0)
    history: list[float] = []
    v = u0
    converged = False
    for it in range(1, int(max_iter) + 1):
        new = apply_T(v, zeta, background)
        step = _sup(new - v)
        history.append(step)
        if not np.isfinite(step):
            raise NonConvergenceError(
                f"fixed-point iterate became non-finite at iteration {it}",
                residual_history=history, source=background.source,
            )
        logger.debug("fixed-point it=%d step=%.3e", it, step)
        v = new
        if step <= tol:
            converged = True
            break

    if not converged:
        raise NonConvergenceError(
            f"fixed-point iteration did not reach tol={tol:g} in {max_iter} iterations "
            f"(last step {history[-1]:.3e}); contraction conditions are likely violated",
            residual_history=history, source=background.source,
        )

    r = gamma * nu0
    R = nu0 + r
    bound = None
    if mu is not None:
        bound = mu * (_sup(zeta.alpha) + 3.0 * R * R * _sup(zeta.beta))
    report = FixedPointReport(
        method="fixed-point",
        converged=True,
        iterations=it,
        residual=_sup(v - apply_T(v, zeta, background)),
        step=history[-1],
        q=empirical_quotient(history, nu0),
        gamma=gamma,
        r=r,
        R=R,
        contraction_bound=bound,
        residual_history=history,
    )
    logger.info("fixed point converged in %d iterations (q=%.3g)", it, report.q)
    return v, report


def newton_solve(
    zeta: Susceptibility,
    background: BackgroundField,
    tol: float = 1e-10,
    max_iter: int = 50,
) -> tuple[np.ndarray, FixedPointReport]:
    """
    Newton iteration on F(u) = A (u - u0) + k^2 M (alpha u + beta u^3) = 0.

    F(u) = 0 is the same fixed point as u = T(u) but is not restricted to the
    contraction regime, which synthesis relies on at high contrast.
    """
    solver = background.solver
    grid = solver.grid
    k2 = solver.k ** 2
    u0 = background.values
    w = grid.weights
    alpha, beta = zeta.alpha, zeta.beta

    u = u0.copy()
    history: list[float] = []
    converged = False
    for it in range(1, int(max_iter) + 1):
        F = solver.matrix @ (u - u0) + k2 * w * (alpha * u + beta * u ** 3)
        J = solver.matrix + sp.diags(k2 * w * (alpha + 3.0 * beta * u ** 2))
        du = spsolve(J.tocsc(), -F)
        step = _sup(du)
        history.append(step)
        if not np.isfinite(step):
            raise NonConvergenceError(
                f"Newton iterate became non-finite at iteration {it}",
                residual_history=history, source=background.source,
            )
        u = u + du
        logger.debug("newton it=%d step=%.3e", it, step)
        if step <= tol:
            converged = True
            break

    if not converged:
        raise NonConvergenceError(
            f"Newton iteration did not reach tol={tol:g} in {max_iter} iterations",
            residual_history=history, source=background.source,
        )

    nu0 = _sup(u0)
    report = FixedPointReport(
        method="newton",
        converged=True,
        iterations=it,
        residual=_sup(u - apply_T(u, zeta, background)),
        step=history[-1],
        q=empirical_quotient(history, nu0),
        gamma=1.0,
        r=nu0,
        R=2.0 * nu0,
        contraction_bound=None,
        residual_history=history,
    )
    return u, report


@dataclass
class ContractionConditions:
    mu: float
    gamma: float
    alpha_norm: float
    beta_norm: float
    u0_norm: float
    r: float
    R: float
    self_mapping_lhs: float
    self_mapping: bool
    contraction_q: float
    contraction: bool
    linear_bound: float
    linear_criterion: bool
    cubic_bound: float
    cubic_criterion: bool
    general_alpha_bound: float
    general_beta_bound: float
    general_criterion: bool
    strict_criterion: bool          # q < r / R implies self-mapping and contraction

    def to_dict(self) -> dict:
        return asdict(self)


def check_contraction_conditions(
    zeta: Susceptibility, background: BackgroundField, mu: float, gamma: float = 1.0
) -> ContractionConditions:
    """Sufficient conditions for T to be a contraction of the ball |u - u0| <= gamma |u0|."""
    if not gamma > 0.5:
        raise DomainError(f"gamma must exceed 1/2, got {gamma!r}")
    if not mu > 0:
        raise DomainError(f"mu must be positive, got {mu!r}")

    a = _sup(zeta.alpha)
    b = _sup(zeta.beta)
    n0 = _sup(background.values)
    r = gamma * n0
    R = n0 + r
    lhs = mu * R * (a + R * R * b)
    q = mu * (a + 3.0 * R * R * b)

    linear_bound = 1.0 / mu
    cubic_bound = 4.0 / (27.0 * mu * n0 * n0) if n0 > 0 else np.inf
    ga = (2.0 * gamma - 1.0) / (2.0 * mu * (1.0 + gamma))
    gb = 1.0 / (2.0 * mu * n0 * n0 * (1.0 + gamma) ** 3) if n0 > 0 else np.inf

    out = ContractionConditions(
        mu=mu, gamma=gamma, alpha_norm=a, beta_norm=b, u0_norm=n0, r=r, R=R,
        self_mapping_lhs=lhs,
        self_mapping=bool(lhs < r) or (a == 0 and b == 0),
        contraction_q=q,
        contraction=bool(q < 1.0),
        linear_bound=linear_bound,
        linear_criterion=bool(b == 0 and a < linear_bound),
        cubic_bound=float(cubic_bound),
        cubic_criterion=bool(a == 0 and b < cubic_bound),
        general_alpha_bound=ga,
        general_beta_bound=float(gb),
        general_criterion=bool(a < ga and b < gb),
        strict_criterion=bool(R > 0 and q < r / R) or q == 0,
    )
    if not (out.self_mapping and out.contraction):
        logger.warning(
            "contraction conditions not met: mu R(|a| + R^2|b|) = %.3g vs r = %.3g, q = %.3g",
            lhs, r, q,
        )
    return out


# ------------------------------------------------------------------
# 3. MULTILINEAR FORWARD OPERATORS K_n
# ------------------------------------------------------------------

def triple_count(n: int) -> int:
    """Ordered triples of nonnegative integers summing to n."""
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n!r}")
    return n * (n + 1) // 2 + n + 1


def ordered_triples(n: int) -> list[tuple[int, int, int]]:
    """(i1, i2, i3) with i1 + i2 + i3 = n, i1 outer loop, i2 inner loop."""
    return [(i1, i2, n - i1 - i2) for i1 in range(n + 1) for i2 in range(n - i1 + 1)]


class ForwardTermCache:
    """
    Insert-once memo of K_n evaluations keyed by (background, argument slice).

    Keys use object identity. Every keyed object is pinned for the lifetime of
    the cache so an id can never be recycled into a stale hit.
    """

    def __init__(self):
        self._table: dict[tuple, np.ndarray] = {}
        self._pinned: dict[int, object] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.branch_terms: Counter = Counter()

    def key(self, background: BackgroundField, args) -> tuple:
        with self._lock:
            self._pinned.setdefault(id(background), background)
            for z in args:
                self._pinned.setdefault(id(z), z)
        return (id(background), tuple(id(z) for z in args))

    def get(self, key: tuple):
        with self._lock:
            value = self._table.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def put(self, key: tuple, value: np.ndarray) -> np.ndarray:
        """Store value unless present; returns the stored entry."""
        with self._lock:
            existing = self._table.get(key)
            if existing is not None:
                return existing
            value = np.array(value, copy=True)
            value.setflags(write=False)
            self._table[key] = value
            return value

    def __len__(self) -> int:
        return len(self._table)

    def stats(self) -> dict:
        return {"entries": len(self), "hits": self.hits, "misses": self.misses}


def compute_K(
    n: int,
    zeta_args,
    background: BackgroundField,
    cache: ForwardTermCache | None = None,
) -> np.ndarray:
    """
    K_n(zeta_1, ..., zeta_n) for one background field.

    Evaluated bottom-up over contiguous argument slices: the slice [a, b) of
    length m uses its last argument for the outer A/B application and the
    first m - 1 arguments split into ordered triples for the B branch.
    """
    args = list(zeta_args)
    if len(args) != n:
        raise DimensionError(f"K_{n} needs exactly {n} arguments, got {len(args)}")
    u0 = background.values
    if n == 0:
        return u0
    solver = background.solver

    def ids(a, b):
        return tuple(id(z) for z in args[a:b])

    memo: dict[tuple, np.ndarray] = {(): u0}

    def evaluate(a: int, b: int) -> np.ndarray:
        m = b - a
        last = args[b - 1]
        if cache is not None:
            key = cache.key(background, args[a:b])
            hit = cache.get(key)
            if hit is not None:
                return hit
        v_alpha = memo[ids(a, b - 1)]
        out = op_A(v_alpha, last.alpha, solver)
        if last.beta.any():
            triples = ordered_triples(m - 1)
            v_beta = np.zeros_like(u0)
            for i1, i2, _ in triples:
                s1, s2 = a + i1, a + i1 + i2
                v_beta = v_beta + memo[ids(a, s1)] * memo[ids(s1, s2)] * memo[ids(s2, b - 1)]
            if cache is not None:
                cache.branch_terms[m] = len(triples)
            out = out + op_B(v_beta, last.beta, solver)
        if cache is not None:
            out = cache.put(key, out)
        return out

    for m in range(1, n):
        for a in range(0, n - m):
            key = ids(a, a + m)
            if key not in memo:
                memo[key] = evaluate(a, a + m)
    return evaluate(0, n)


def born_partial_sum(
    zeta: Susceptibility,
    background: BackgroundField,
    N: int,
    cache: ForwardTermCache | None = None,
    reference: np.ndarray | None = None,
) -> tuple[np.ndarray, pd.DataFrame]:
    """
    U_N = u0 + sum_{n=1..N} K_n(zeta, ..., zeta) with per-term norms.

    `reference` (typically the fixed-point field) adds the cumulative residual
    column ||U_n - reference||_inf.
    """
    if N < 0:
        raise DomainError(f"N must be >= 0, got {N!r}")
    cache = ForwardTermCache() if cache is None else cache
    u0 = background.values
    boundary = background.grid.boundary
    U = u0.copy()
    rows: list[dict] = []

    def row(order, term):
        rec = {"order": order, "field_norm": _sup(term), "data_norm": _sup(term[boundary])}
        if reference is not None:
            rec["residual_vs_reference"] = _sup(U - reference)
        return rec

    rows.append(row(0, u0))
    for n in range(1, N + 1):
        term = compute_K(n, [zeta] * n, background, cache)
        U = U + term
        rows.append(row(n, term))
    return U, pd.DataFrame(rows)


def map_ordered(func, items, threads: int = 1) -> list:
    """map() over items with up to `threads` workers, results in input order."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ThreadPool(min(threads, len(items))) as pool:
        return pool.map(func, items)
