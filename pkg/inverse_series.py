# inverse_series.py

"""
Inverse Born series: the linearized forward map K_1 as a matrix, its
truncated-SVD pseudoinverse, and the recursion

    z_1 = K1+ phi,
    z_m = -sum_{n=2..m} sum_{i_1+...+i_n=m} K1+ K_n(z_i1, ..., z_in),

reusing forward_series.compute_K for every K_n.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from discretization import BackgroundField, Grid
from errors import ConfigurationError, ConvergenceRadiusWarning, DimensionError, DomainError
from forward_series import ForwardTermCache, Susceptibility, compute_K, map_ordered

logger = logging.getLogger(__name__)

UNKNOWNS = ("alpha", "beta", "both")
MAX_ORDER = 12
DEFAULT_TAU = 1e-3


# ------------------------------------------------------------------
# 1. DATA + LINEARIZED MAP
# ------------------------------------------------------------------

@dataclass(eq=False)
class ScatteringData:
    """phi[s, r] = (u - u0) at receiver r for source s."""
    phi: np.ndarray
    sources: list
    receivers: np.ndarray            # receiver coordinates, (n_receivers, dimension)

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if self.phi.shape != (len(self.sources), len(self.receivers)):
            raise DimensionError(
                f"phi has shape {self.phi.shape}, expected ({len(self.sources)}, {len(self.receivers)})"
            )

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    def vector(self) -> np.ndarray:
        """Source-major flattening, matching the rows of K_1."""
        return self.phi.ravel()

    def norm(self) -> float:
        """Uniformly weighted l2 (RMS) over source x receiver."""
        if self.phi.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(self.phi ** 2)))


@dataclass(eq=False)
class LinearizedMap:
    matrix: np.ndarray
    cells: np.ndarray                # node indices carrying unknowns
    unknowns: str
    n_nodes: int
    receivers: np.ndarray            # boundary node indices (rows within a source)
    sources: list = field(default_factory=list)

    @property
    def blocks(self) -> tuple[str, ...]:
        return ("alpha", "beta") if self.unknowns == "both" else (self.unknowns,)

    def columns(self) -> pd.DataFrame:
        """Per-column provenance: block and node."""
        return pd.DataFrame(
            [{"column": i * self.cells.size + j, "block": b, "node": int(c)}
             for i, b in enumerate(self.blocks) for j, c in enumerate(self.cells)]
        )

    def to_vector(self, zeta: Susceptibility) -> np.ndarray:
        return np.concatenate([getattr(zeta, b)[self.cells] for b in self.blocks])

    def to_susceptibility(self, x) -> Susceptibility:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.matrix.shape[1],):
            raise DimensionError(f"parameter vector has shape {x.shape}, expected ({self.matrix.shape[1]},)")
        parts = {"alpha": np.zeros(self.n_nodes), "beta": np.zeros(self.n_nodes)}
        for i, b in enumerate(self.blocks):
            parts[b][self.cells] = x[i * self.cells.size:(i + 1) * self.cells.size]
        return Susceptibility(parts["alpha"], parts["beta"])

    def apply(self, zeta: Susceptibility) -> np.ndarray:
        return self.matrix @ self.to_vector(zeta)


def assemble_K1(
    grid: Grid,
    backgrounds: list,
    cells=None,
    unknowns: str = "both",
) -> LinearizedMap:
    """
    Matrix of zeta -> boundary trace of K_1(zeta), rows source-major.

    Uses reciprocity of the symmetric kernel: with Z = A^{-1}[:, receivers],
    the receiver-r entry of op_A(u0, e_j) is -k^2 Z[j, r] w_j u0(j); one block
    solve per wavenumber replaces one solve per cell and source.
    """
    if not backgrounds:
        raise ConfigurationError("assemble_K1 needs at least one source")
    if unknowns not in UNKNOWNS:
        raise ConfigurationError(f"unknowns must be one of {UNKNOWNS}, got {unknowns!r}")
    for bg in backgrounds:
        if bg.grid is not grid:
            raise DimensionError("every background field must live on the inversion grid")

    cells = np.asarray(grid.interior if cells is None else cells, dtype=int)
    if np.isin(cells, grid.boundary).any():
        raise ConfigurationError("unknown cells must be interior nodes; zeta vanishes on the boundary")
    receivers = np.asarray(grid.boundary)
    n_recv = receivers.size

    reciprocal: dict[int, np.ndarray] = {}
    for bg in backgrounds:
        if id(bg.solver) not in reciprocal:
            unit = np.zeros((grid.n_nodes, n_recv))
            unit[receivers, np.arange(n_recv)] = 1.0
            reciprocal[id(bg.solver)] = bg.solver.solve(unit)

    ncol = cells.size * (2 if unknowns == "both" else 1)
    matrix = np.zeros((len(backgrounds) * n_recv, ncol))
    w = grid.weights[cells]
    for s, bg in enumerate(backgrounds):
        Z = reciprocal[id(bg.solver)][cells, :].T          # (n_recv, n_cells)
        base = -bg.k ** 2 * Z * w[None, :]
        u0 = bg.values[cells]
        rows = slice(s * n_recv, (s + 1) * n_recv)
        blocks = {"alpha": base * u0[None, :], "beta": base * (u0 ** 3)[None, :]}
        wanted = ("alpha", "beta") if unknowns == "both" else (unknowns,)
        for i, b in enumerate(wanted):
            matrix[rows, i * cells.size:(i + 1) * cells.size] = blocks[b]

    logger.info("Assembled K1: %d rows x %d columns (%s)", *matrix.shape, unknowns)
    return LinearizedMap(
        matrix=matrix, cells=cells, unknowns=unknowns, n_nodes=grid.n_nodes,
        receivers=receivers, sources=[bg.source for bg in backgrounds],
    )


# ------------------------------------------------------------------
# 2. REGULARIZED PSEUDOINVERSE
# ------------------------------------------------------------------

@dataclass(eq=False)
class RegularizedPseudoinverse:
    U: np.ndarray
    s: np.ndarray                    # retained singular values, descending
    Vt: np.ndarray
    tau: float
    sigma_max: float

    @property
    def rank(self) -> int:
        return int(self.s.size)

    @property
    def norm(self) -> float:
        """Spectral norm of the truncated pseudoinverse, 1 / smallest retained sigma."""
        return float(1.0 / self.s[-1])

    @property
    def matrix(self) -> np.ndarray:
        return (self.Vt.T / self.s[None, :]) @ self.U.T

    def apply(self, data) -> np.ndarray:
        data = np.asarray(data, dtype=float)
        if data.shape[0] != self.U.shape[0]:
            raise DimensionError(f"data has {data.shape[0]} entries, pseudoinverse expects {self.U.shape[0]}")
        return self.Vt.T @ ((self.U.T @ data) / self.s)


def build_pinv(kmap, tau: float = DEFAULT_TAU) -> RegularizedPseudoinverse:
    """Truncated SVD: keep singular values sigma >= tau * sigma_max."""
    if not (0.0 < tau < 1.0):
        raise DomainError(f"tau must lie in (0, 1), got {tau!r}")
    matrix = kmap.matrix if isinstance(kmap, LinearizedMap) else np.asarray(kmap, dtype=float)
    if matrix.size == 0:
        raise DomainError("cannot invert an empty matrix")
    U, s, Vt = np.linalg.svd(matrix, full_matrices=False)
    if not s[0] > 0:
        raise DomainError("K1 is identically zero; no data sensitivity to invert")
    keep = s >= tau * s[0]
    pinv = RegularizedPseudoinverse(
        U=U[:, keep], s=s[keep], Vt=Vt[keep, :], tau=tau, sigma_max=float(s[0]),
    )
    logger.info("Pseudoinverse: rank %d of %d, norm %.4g (tau=%g)", pinv.rank, s.size, pinv.norm, tau)
    return pinv


# ------------------------------------------------------------------
# 3. INVERSE SERIES
# ------------------------------------------------------------------

def compositions(m: int, n: int) -> list[tuple[int, ...]]:
    """Ordered n-tuples of positive integers summing to m, lexicographic."""
    if n < 1 or m < n:
        return []
    if n == 1:
        return [(m,)]
    return [(first,) + rest for first in range(1, m - n + 2) for rest in compositions(m - first, n - 1)]


def composition_tuples(m: int) -> list[tuple[int, ...]]:
    """Every argument pattern evaluated for the order-m inverse term."""
    return [c for n in range(2, m + 1) for c in compositions(m, n)]


def _trace_stack(kmap: LinearizedMap, fields: list) -> np.ndarray:
    return np.concatenate([f[kmap.receivers] for f in fields])


def inverse_terms(
    phi: ScatteringData,
    M: int,
    pinv: RegularizedPseudoinverse,
    kmap: LinearizedMap,
    backgrounds: list,
    cache: ForwardTermCache | None = None,
    max_order: int = MAX_ORDER,
    threads: int = 1,
) -> list[Susceptibility]:
    """[K1+ phi, K_2(phi), ..., K_M(phi)] as separate susceptibility updates."""
    if M < 1:
        raise ConfigurationError(f"inverse series order must be >= 1, got {M!r}")
    if M > max_order:
        raise ConfigurationError(
            f"order {M} exceeds the composition guard max_order={max_order}"
        )
    if len(backgrounds) != phi.n_sources:
        raise DimensionError(f"{phi.n_sources} data rows for {len(backgrounds)} background fields")
    cache = ForwardTermCache() if cache is None else cache

    terms = [kmap.to_susceptibility(pinv.apply(phi.vector()))]
    logger.info("inverse term 1: |z_1| = %.4g", terms[0].sup_norm())
    for m in range(2, M + 1):
        patterns = composition_tuples(m)

        def forward_sum(bg: BackgroundField) -> np.ndarray:
            acc = np.zeros(bg.grid.n_nodes)
            for comp in patterns:
                args = [terms[i - 1] for i in comp]
                acc = acc + compute_K(len(comp), args, bg, cache)
            return acc

        fields = map_ordered(forward_sum, backgrounds, threads)
        update = -pinv.apply(_trace_stack(kmap, fields))
        terms.append(kmap.to_susceptibility(update))
        logger.info("inverse term %d: |z_m| = %.4g (%d patterns)", m, terms[-1].sup_norm(), len(patterns))
    return terms


@dataclass
class InverseDiagnostics:
    terms: list
    partial_sums: list
    term_norms: pd.DataFrame
    first_term_norm: float
    radius: float | None
    radius_exceeded: bool
    tau: float
    rank: int
    pinv_norm: float
    data_norm: float
    cache_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "first_term_norm": self.first_term_norm,
            "first_term_norm_kind": "nodal sup norm of max(|alpha|, |beta|)",
            "radius": self.radius,
            "radius_exceeded": self.radius_exceeded,
            "tau": self.tau,
            "effective_rank": self.rank,
            "pinv_norm": self.pinv_norm,
            "data_norm": self.data_norm,
            "data_norm_kind": "uniformly weighted l2 (RMS)",
            "term_norms": self.term_norms.to_dict(orient="records"),
            "cache": self.cache_stats,
        }


def reconstruct(
    phi: ScatteringData,
    M: int,
    pinv: RegularizedPseudoinverse,
    kmap: LinearizedMap,
    backgrounds: list,
    radius: float | None = None,
    cache: ForwardTermCache | None = None,
    max_order: int = MAX_ORDER,
    threads: int = 1,
) -> tuple[Susceptibility, InverseDiagnostics]:
    """Sum the first M inverse terms; warn when |z_1| >= radius."""
    cache = ForwardTermCache() if cache is None else cache
    terms = inverse_terms(phi, M, pinv, kmap, backgrounds, cache, max_order, threads)

    first = terms[0].sup_norm()
    exceeded = radius is not None and not first < radius
    if exceeded:
        msg = (
            f"|K1+ phi| = {first:.4g} is not below the inverse radius r = {radius:.4g}; "
            "convergence of the inverse series is not guaranteed"
        )
        logger.warning(msg)
        warnings.warn(msg, ConvergenceRadiusWarning, stacklevel=2)

    partial_sums = []
    total = Susceptibility.zeros(kmap.n_nodes)
    rows = []
    for m, term in enumerate(terms, start=1):
        total = total + term
        partial_sums.append(total)
        rows.append({
            "term": m,
            "term_sup_norm": term.sup_norm(),
            "alpha_sup_norm": float(np.abs(term.alpha).max()),
            "beta_sup_norm": float(np.abs(term.beta).max()),
            "partial_sum_sup_norm": total.sup_norm(),
        })

    diagnostics = InverseDiagnostics(
        terms=terms,
        partial_sums=partial_sums,
        term_norms=pd.DataFrame(rows),
        first_term_norm=first,
        radius=radius,
        radius_exceeded=bool(exceeded),
        tau=pinv.tau,
        rank=pinv.rank,
        pinv_norm=pinv.norm,
        data_norm=phi.norm(),
        cache_stats=cache.stats(),
    )
    return total, diagnostics

