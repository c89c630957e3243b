# convergence.py

"""
Convergence bookkeeping for the forward and inverse series: the nu_n
recurrence, its cubic generating polynomial, growth constants (K, nu) with
nu_n <= nu K^n, and the forward / inverse radii of convergence.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from errors import DomainError, NuOverflowError

logger = logging.getLogger(__name__)

EXACT_LIMIT = 25
DEFAULT_ORDER = 64
TAIL_SAFETY = 1.05


# ------------------------------------------------------------------
# 1. NU SEQUENCE + GENERATING POLYNOMIAL
# ------------------------------------------------------------------

@dataclass
class NuSequence:
    nu0: float
    values: list                     # Fraction through exact_through, float after
    exact_through: int

    def __len__(self) -> int:
        return len(self.values)

    @property
    def order(self) -> int:
        return len(self.values) - 1

    def as_float(self) -> np.ndarray:
        return np.array([_as_float(v) for v in self.values])


def _as_float(v) -> float:
    try:
        return float(v)
    except OverflowError:
        return math.inf


def _convolve_at(a: list, b: list, n: int):
    return sum(a[i] * b[n - i] for i in range(n + 1))


def nu_sequence(nu0: float, N: int, exact_limit: int = EXACT_LIMIT) -> NuSequence:
    """
    nu_{n+1} = nu_n + sum_{i1+i2+i3=n} nu_i1 nu_i2 nu_i3, exact rationals
    through order `exact_limit`, floats beyond.
    """
    if not np.isfinite(nu0) or nu0 < 0:
        raise DomainError(f"nu0 must be finite and >= 0, got {nu0!r}")
    if N < 0:
        raise DomainError(f"N must be >= 0, got {N!r}")

    values = [Fraction(float(nu0))]
    work, squares, cubes = values, [], []
    for n in range(N):
        if n == exact_limit:
            # continue in floats; `values` keeps the exact prefix
            work = [_as_float(v) for v in values]
            squares = [_as_float(v) for v in squares]
            cubes = [_as_float(v) for v in cubes]
            bad = [i for i, v in enumerate(work) if not math.isfinite(v)]
            if bad:
                raise NuOverflowError(order=bad[0], largest_safe_n=bad[0] - 1)
        squares.append(_convolve_at(work, work, n))
        cubes.append(_convolve_at(squares, work, n))
        nxt = work[n] + cubes[n]
        if isinstance(nxt, float) and not math.isfinite(nxt):
            raise NuOverflowError(order=n + 1, largest_safe_n=n)
        if work is not values:
            work.append(nxt)
        values.append(nxt)
    # exact values past float range are only an error once converted
    if N <= exact_limit and not math.isfinite(_as_float(values[-1])):
        last_ok = max(i for i, v in enumerate(values) if math.isfinite(_as_float(v)))
        raise NuOverflowError(order=N, largest_safe_n=last_ok)
    return NuSequence(nu0=float(nu0), values=values, exact_through=min(N, exact_limit))


def generating_polynomial_residuals(seq: NuSequence) -> pd.DataFrame:
    """
    Coefficients of x P^3 + (x - 1) P + nu0 for every stored order, in exact
    arithmetic over the rational prefix and in floats beyond it.
    """
    n_exact = seq.exact_through + 1
    exact = seq.values[:n_exact]
    floats = [_as_float(v) for v in seq.values]
    sq_exact = [_convolve_at(exact, exact, n) for n in range(n_exact)]
    sq_float = [_convolve_at(floats, floats, n) for n in range(len(floats))]
    rows = []
    for j in range(len(seq.values)):
        vals, squares = (exact, sq_exact) if j < n_exact else (floats, sq_float)
        if j == 0:
            coef = vals[0] - Fraction(seq.nu0)
        else:
            coef = _convolve_at(squares, vals, j - 1) + vals[j - 1] - vals[j]
        rows.append({
            "order": j,
            "coefficient": float(coef),
            "relative": abs(float(coef)) / max(abs(floats[j]), 1.0),
            "exact": j < n_exact,
        })
    return pd.DataFrame(rows)


def verify_generating_polynomial(seq: NuSequence) -> float:
    """
    Largest absolute coefficient of the generating identity over the exact
    orders; 0 unless the sequence was corrupted.
    """
    if len(seq) < 3:
        raise DomainError("need at least 3 sequence values")
    res = generating_polynomial_residuals(seq)
    return float(res.loc[res["exact"], "coefficient"].abs().max())


def float_tail_defect(seq: NuSequence) -> float:
    """Largest relative coefficient over the float orders (round-off only)."""
    res = generating_polynomial_residuals(seq)
    tail = res.loc[~res["exact"], "relative"]
    return float(tail.max()) if len(tail) else 0.0


# ------------------------------------------------------------------
# 2. GROWTH CONSTANTS
# ------------------------------------------------------------------

def singularity_radius(nu0: float) -> float:
    """Root on (0, 1) of 4 (1 - x)^3 = 27 nu0^2 x, where the cubic discriminant vanishes."""
    if not nu0 > 0:
        raise DomainError(f"nu0 must be positive, got {nu0!r}")
    return brentq(lambda x: 4.0 * (1.0 - x) ** 3 - 27.0 * nu0 * nu0 * x, 0.0, 1.0, xtol=1e-15)


def estimate_growth(
    seq: NuSequence, method: str = "tail-ratio", safety: float | None = None
) -> tuple[float, float]:
    """
    (K, nu) with nu_n <= nu K^n for every stored n.

    tail-ratio: K = safety * max nu_{n+1}/nu_n over the last quarter.
    discriminant: K = safety / x*, x* the singularity of P.
    """
    if len(seq) < 16:
        raise DomainError(f"growth estimate needs at least 16 values, got {len(seq)}")
    vals = seq.as_float()
    if not (vals > 0).all():
        raise DomainError("growth estimate needs a positive sequence (nu0 > 0)")

    if method == "tail-ratio":
        safety = TAIL_SAFETY if safety is None else safety
        tail = max(1, len(vals) // 4)
        ratios = vals[-tail:] / vals[-tail - 1:-1]
        K = safety * float(ratios.max())
    elif method == "discriminant":
        safety = 1.0 if safety is None else safety
        K = safety / singularity_radius(seq.nu0)
    else:
        raise DomainError(f"unknown growth estimator {method!r}")

    n = np.arange(len(vals))
    log_nu = float(np.max(np.log(vals) - n * math.log(K)))
    nu = math.exp(log_nu) * (1.0 + 1e-12)
    logger.info("growth constants (%s): K=%.6g nu=%.6g", method, K, nu)
    return K, nu


# ------------------------------------------------------------------
# 3. RADII
# ------------------------------------------------------------------

def _positive(**kwargs):
    for name, value in kwargs.items():
        if not (np.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be positive and finite, got {value!r}")


def forward_radius(mu: float, K: float) -> float:
    _positive(mu=mu, K=K)
    return 1.0 / (K * mu)


def inverse_radius(mu: float, K: float, nu: float, pinv_norm: float) -> tuple[float, float]:
    """C = max(2, |K1+| nu K mu);  r = (sqrt(16 C^2 + 1) - 4 C) / (2 K mu)."""
    _positive(mu=mu, K=K, nu=nu, pinv_norm=pinv_norm)
    C = max(2.0, pinv_norm * nu * K * mu)
    # sqrt(16C^2+1) - 4C, without cancellation
    gap = 1.0 / (math.sqrt(16.0 * C * C + 1.0) + 4.0 * C)
    return gap / (2.0 * K * mu), C


@dataclass
class ConvergenceReport:
    mu: float
    nu0: float
    K: float
    nu: float
    estimator: str
    safety: float | None
    sequence_order: int
    exact_through: int
    polynomial_defect: float
    polynomial_tail_defect: float
    forward_radius: float
    pinv_norm: float | None = None
    C: float | None = None
    r: float | None = None
    mu_rows_sampled: int | None = None
    first_term_norm: float | None = None
    data_within_radius: bool | None = None
    norms: dict = field(default_factory=lambda: {
        "zeta": "nodal sup norm of max(|alpha|, |beta|)",
        "data": "uniformly weighted l2 (RMS) over source x receiver",
        "pinv": "1 / smallest retained singular value",
    })

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_report(
    mu: float,
    nu0: float,
    pinv_norm: float | None = None,
    N: int = DEFAULT_ORDER,
    estimator: str = "tail-ratio",
    safety: float | None = None,
    mu_rows_sampled: int | None = None,
    first_term_norm: float | None = None,
) -> ConvergenceReport:
    seq = nu_sequence(nu0, N)
    K, nu = estimate_growth(seq, estimator, safety)
    report = ConvergenceReport(
        mu=mu, nu0=nu0, K=K, nu=nu, estimator=estimator,
        safety=TAIL_SAFETY if (safety is None and estimator == "tail-ratio") else safety,
        sequence_order=seq.order, exact_through=seq.exact_through,
        polynomial_defect=verify_generating_polynomial(seq),
        polynomial_tail_defect=float_tail_defect(seq),
        forward_radius=forward_radius(mu, K),
        mu_rows_sampled=mu_rows_sampled,
    )
    if pinv_norm is not None:
        report.pinv_norm = pinv_norm
        report.r, report.C = inverse_radius(mu, K, nu, pinv_norm)
    if first_term_norm is not None:
        report.first_term_norm = first_term_norm
        if report.r is not None:
            report.data_within_radius = bool(first_term_norm < report.r)
    return report
