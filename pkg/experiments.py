# experiments.py

"""
Scenarios (media, sources, resolutions), data synthesis on a separate mesh,
the inversion pipeline, and error reports with cross-sections.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
import yaml
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import Delaunay

from convergence import ConvergenceReport, convergence_report
from discretization import (
    MU_MAX_ROWS,
    GreenSolver,
    Grid,
    SourceSpec,
    build_grid,
    interpolate_boundary,
    mu_rows,
    solve_background,
)
from errors import ConfigurationError, NonConvergenceError
from forward_series import (
    ForwardTermCache,
    Susceptibility,
    fixed_point_solve,
    map_ordered,
    newton_solve,
)
from inverse_series import (
    MAX_ORDER,
    UNKNOWNS,
    InverseDiagnostics,
    LinearizedMap,
    RegularizedPseudoinverse,
    ScatteringData,
    assemble_K1,
    build_pinv,
    reconstruct,
)

logger = logging.getLogger(__name__)

MEDIUM_KINDS = ("gaussian", "disk", "zero")
FORWARD_METHODS = ("fixed-point", "newton")
MIN_MESH_RATIO = 1.5
SCALE_LADDER = tuple(0.25 * 1.25 ** j for j in range(12))

SCENARIO_KEYS = {
    "name", "domain", "medium", "contrast", "unknowns", "sources", "resolutions",
    "M", "tau", "noise", "seed", "forward", "expectation",
}


# ------------------------------------------------------------------
# 1. SCENARIO TYPES
# ------------------------------------------------------------------

@dataclass(frozen=True)
class MediumSpec:
    kind: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SourceSet:
    count: int                       # positions: interval ends, or equispaced angles
    scales: tuple
    frequencies: tuple

    @property
    def total(self) -> int:
        return self.count * len(self.scales) * len(self.frequencies)


@dataclass(frozen=True)
class ForwardSettings:
    method: str = "fixed-point"
    tol: float = 1e-12
    max_iter: int = 500
    born_terms: int = 8


@dataclass(frozen=True)
class Scenario:
    name: str
    domain: str
    medium: MediumSpec
    contrast: float
    unknowns: str
    sources: SourceSet
    synthesis_resolution: int
    inversion_resolution: int
    M: int = 3
    tau: float = 1e-3
    noise: float = 0.0
    seed: int = 0
    forward: ForwardSettings = ForwardSettings()
    expectation: str | None = None


@dataclass
class ErrorReport:
    alpha_l2: float
    alpha_sup: float
    beta_l2: float
    beta_sup: float
    joint_l2: float
    joint_sup: float
    trajectory: pd.DataFrame
    crosssection: pd.DataFrame

    def to_dict(self) -> dict:
        return {
            "alpha_l2": self.alpha_l2,
            "alpha_sup": self.alpha_sup,
            "beta_l2": self.beta_l2,
            "beta_sup": self.beta_sup,
            "joint_l2": self.joint_l2,
            "joint_sup": self.joint_sup,
            "trajectory": self.trajectory.to_dict(orient="records"),
            "normalization": "relative to the true medium; absolute where the truth is zero",
        }


# ------------------------------------------------------------------
# 2. PRESETS
# ------------------------------------------------------------------

def scenario_1d(amplitude: float = 0.2) -> Scenario:
    """72 sources: 12 scales x 2 ends x k in {0.9, 1, 1.1}; alpha = beta Gaussian on [0.4, 0.6]."""
    return Scenario(
        name="interval-gaussian",
        domain="interval",
        medium=MediumSpec("gaussian", {
            "amplitude": amplitude, "epsilon": 0.01, "center": [0.0], "support": [0.4, 0.6],
        }),
        contrast=1.0,
        unknowns="both",
        sources=SourceSet(count=2, scales=SCALE_LADDER, frequencies=(0.9, 1.0, 1.1)),
        synthesis_resolution=129,
        inversion_resolution=65,
        M=4,
        tau=1e-3,
        forward=ForwardSettings(method="fixed-point", tol=1e-12, max_iter=500),
    )


_SELECTORS = {
    "alpha": "alpha", "alpha-only": "alpha",
    "beta": "beta", "beta-only": "beta",
    "both": "both",
}

_EXPECTATIONS = {
    (16.0, "disk", "alpha"): "degrades: alpha reconstruction fails at very high contrast",
    (16.0, "disk", "beta"): "degraded, but beta fares better than alpha",
    (4.0, "gaussian", "both"): "reasonable simultaneous reconstruction at high contrast",
}


def scenario_2d(contrast: float, medium: str = "disk", independent: str = "alpha-only") -> Scenario:
    """Unit-disk scenario: 16 source angles at k = 1, piecewise-constant disk or Gaussian medium."""
    if not (np.isfinite(contrast) and contrast > 0):
        raise ConfigurationError(f"contrast must be positive, got {contrast!r}")
    if independent not in _SELECTORS:
        raise ConfigurationError(f"unknown unknown-selector {independent!r}; expected one of {sorted(_SELECTORS)}")
    unknowns = _SELECTORS[independent]
    if medium == "disk":
        spec = MediumSpec("disk", {"center": [0.3, 0.0], "radius_sq": 0.2, "value": 1.0})
    elif medium == "gaussian":
        spec = MediumSpec("gaussian", {"amplitude": 2.0, "epsilon": 0.04, "center": [-0.3, 0.3]})
    else:
        raise ConfigurationError(f"unknown 2D medium {medium!r}; expected 'disk' or 'gaussian'")
    scales = (1.0, 2.0) if unknowns == "both" else (1.0,)
    return Scenario(
        name=f"disk-{medium}-{unknowns}-x{contrast:g}",
        domain="disk",
        medium=spec,
        contrast=float(contrast),
        unknowns=unknowns,
        sources=SourceSet(count=16, scales=scales, frequencies=(1.0,)),
        synthesis_resolution=36,
        inversion_resolution=24,
        M=3,
        tau=1e-2,
        forward=ForwardSettings(method="newton", tol=1e-10, max_iter=50),
        expectation=_EXPECTATIONS.get((float(contrast), medium, unknowns), "reasonable reconstruction"),
    )


# ------------------------------------------------------------------
# 3. SCENARIO FILES
# ------------------------------------------------------------------

def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigurationError(f"missing key '{key}' in {where}")
    return mapping[key]


def _number(value, key: str, positive: bool = False, nonnegative: bool = False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"'{key}' must be a number, got {value!r}") from None
    if not np.isfinite(x):
        raise ConfigurationError(f"'{key}' must be finite, got {value!r}")
    if positive and not x > 0:
        raise ConfigurationError(f"'{key}' must be positive, got {value!r}")
    if nonnegative and x < 0:
        raise ConfigurationError(f"'{key}' must be >= 0, got {value!r}")
    return x


def _integer(value, key: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ConfigurationError(f"'{key}' must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"'{key}' must be >= {minimum}, got {value!r}")
    return int(value)


def _validate_medium(medium: MediumSpec, domain: str) -> None:
    dim = 1 if domain == "interval" else 2
    p = medium.params
    if medium.kind not in MEDIUM_KINDS:
        raise ConfigurationError(f"medium.type must be one of {MEDIUM_KINDS}, got {medium.kind!r}")
    if medium.kind == "gaussian":
        _number(_require(p, "amplitude", "medium.params"), "medium.params.amplitude")
        _number(_require(p, "epsilon", "medium.params"), "medium.params.epsilon", positive=True)
        center = _require(p, "center", "medium.params")
        if len(center) != dim:
            raise ConfigurationError(f"medium.params.center must have {dim} coordinates")
        [_number(c, "medium.params.center") for c in center]
        if "support" in p:
            lo, hi = (_number(v, "medium.params.support") for v in p["support"])
            if dim != 1 or not lo < hi:
                raise ConfigurationError("medium.params.support must be an interval [lo, hi] on the interval domain")
    elif medium.kind == "disk":
        center = _require(p, "center", "medium.params")
        if len(center) != dim:
            raise ConfigurationError(f"medium.params.center must have {dim} coordinates")
        [_number(c, "medium.params.center") for c in center]
        _number(_require(p, "radius_sq", "medium.params"), "medium.params.radius_sq", positive=True)
        _number(p.get("value", 1.0), "medium.params.value")


def validate_scenario(s: Scenario) -> Scenario:
    if s.domain not in ("interval", "disk"):
        raise ConfigurationError(f"domain must be 'interval' or 'disk', got {s.domain!r}")
    _validate_medium(s.medium, s.domain)
    contrast = _number(s.contrast, "contrast", nonnegative=True)
    if s.unknowns not in UNKNOWNS:
        raise ConfigurationError(f"unknowns must be one of {UNKNOWNS}, got {s.unknowns!r}")
    _integer(s.sources.count, "sources.count", 1)
    if s.domain == "interval" and s.sources.count > 2:
        raise ConfigurationError("the interval has two ends: sources.count must be 1 or 2")
    if not s.sources.scales or not s.sources.frequencies:
        raise ConfigurationError("sources.scales and sources.frequencies must be non-empty")
    scales = tuple(_number(v, "sources.scales", positive=True) for v in s.sources.scales)
    freqs = tuple(_number(v, "sources.frequencies", positive=True) for v in s.sources.frequencies)
    syn = _integer(s.synthesis_resolution, "resolutions.synthesis", 8)
    inv = _integer(s.inversion_resolution, "resolutions.inversion", 8)
    if syn < MIN_MESH_RATIO * inv:
        raise ConfigurationError(
            f"synthesis resolution {syn} must be at least {MIN_MESH_RATIO} x inversion resolution {inv}"
        )
    _integer(s.M, "M", 1)
    if s.M > MAX_ORDER:
        raise ConfigurationError(f"M must be <= {MAX_ORDER}, got {s.M}")
    tau = _number(s.tau, "tau")
    if not 0 < tau < 1:
        raise ConfigurationError(f"tau must lie in (0, 1), got {s.tau!r}")
    noise = _number(s.noise, "noise", nonnegative=True)
    _integer(s.seed, "seed", 0)
    if s.forward.method not in FORWARD_METHODS:
        raise ConfigurationError(f"forward.method must be one of {FORWARD_METHODS}, got {s.forward.method!r}")
    _number(s.forward.tol, "forward.tol", positive=True)
    _integer(s.forward.max_iter, "forward.max_iter", 1)
    _integer(s.forward.born_terms, "forward.born_terms", 0)
    return replace(
        s, contrast=contrast, tau=tau, noise=noise,
        sources=replace(s.sources, scales=scales, frequencies=freqs),
        forward=replace(s.forward, tol=float(s.forward.tol)),
    )


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ConfigurationError("scenario must be a mapping")
    unknown = set(d) - SCENARIO_KEYS
    if unknown:
        raise ConfigurationError(f"unknown scenario keys: {sorted(unknown)}")
    medium = _require(d, "medium", "scenario")
    sources = _require(d, "sources", "scenario")
    resolutions = _require(d, "resolutions", "scenario")
    forward = d.get("forward") or {}
    if not all(isinstance(x, dict) for x in (medium, sources, resolutions, forward)):
        raise ConfigurationError("medium, sources, resolutions and forward must be mappings")
    unknown_fwd = set(forward) - {"method", "tol", "max_iter", "born_terms"}
    if unknown_fwd:
        raise ConfigurationError(f"unknown forward keys: {sorted(unknown_fwd)}")
    try:
        scenario = Scenario(
            name=str(d.get("name", "scenario")),
            domain=_require(d, "domain", "scenario"),
            medium=MediumSpec(_require(medium, "type", "medium"), dict(medium.get("params") or {})),
            contrast=d.get("contrast", 1.0),
            unknowns=d.get("unknowns", "both"),
            sources=SourceSet(
                count=_require(sources, "count", "sources"),
                scales=tuple(_require(sources, "scales", "sources")),
                frequencies=tuple(_require(sources, "frequencies", "sources")),
            ),
            synthesis_resolution=_require(resolutions, "synthesis", "resolutions"),
            inversion_resolution=_require(resolutions, "inversion", "resolutions"),
            M=d.get("M", 3),
            tau=d.get("tau", 1e-3),
            noise=d.get("noise", 0.0),
            seed=d.get("seed", 0),
            forward=ForwardSettings(**forward),
            expectation=d.get("expectation"),
        )
    except TypeError as exc:
        raise ConfigurationError(f"malformed scenario: {exc}") from exc
    return validate_scenario(scenario)


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "name": s.name,
        "domain": s.domain,
        "medium": {"type": s.medium.kind, "params": dict(s.medium.params)},
        "contrast": s.contrast,
        "unknowns": s.unknowns,
        "sources": {
            "count": s.sources.count,
            "scales": list(s.sources.scales),
            "frequencies": list(s.sources.frequencies),
        },
        "resolutions": {"synthesis": s.synthesis_resolution, "inversion": s.inversion_resolution},
        "M": s.M,
        "tau": s.tau,
        "noise": s.noise,
        "seed": s.seed,
        "forward": asdict(s.forward),
        "expectation": s.expectation,
    }


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"scenario file {path} is not valid YAML: {exc}") from exc
    return scenario_from_dict(raw)


def with_overrides(s: Scenario, **overrides) -> Scenario:
    """Apply non-None overrides and re-validate."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return validate_scenario(replace(s, **changes)) if changes else s


# ------------------------------------------------------------------
# 4. MEDIA + SOURCES ON A GRID
# ------------------------------------------------------------------

def medium_profile(medium: MediumSpec, grid: Grid) -> np.ndarray:
    """Medium shape at the nodes, zero on boundary nodes."""
    x = grid.coordinates
    p = medium.params
    if medium.kind == "zero":
        values = np.zeros(grid.n_nodes)
    elif medium.kind == "gaussian":
        eps = float(p["epsilon"])
        d2 = ((x - np.asarray(p["center"], dtype=float)) ** 2).sum(axis=1)
        values = float(p["amplitude"]) / np.sqrt(2.0 * np.pi * eps) * np.exp(-d2 / (2.0 * eps))
        if "support" in p:
            lo, hi = p["support"]
            values = np.where((x[:, 0] >= lo) & (x[:, 0] <= hi), values, 0.0)
    elif medium.kind == "disk":
        d2 = ((x - np.asarray(p["center"], dtype=float)) ** 2).sum(axis=1)
        values = np.where(d2 <= float(p["radius_sq"]), float(p.get("value", 1.0)), 0.0)
    else:
        raise ConfigurationError(f"unknown medium kind {medium.kind!r}")
    values = np.array(values, dtype=float)
    values[grid.boundary] = 0.0
    return values


def true_susceptibility(scenario: Scenario, grid: Grid) -> Susceptibility:
    profile = scenario.contrast * medium_profile(scenario.medium, grid)
    zero = np.zeros(grid.n_nodes)
    alpha = profile if scenario.unknowns in ("alpha", "both") else zero
    beta = profile if scenario.unknowns in ("beta", "both") else zero
    return Susceptibility(alpha, beta)


def source_locations(domain: str, count: int) -> list[tuple]:
    if domain == "interval":
        return [(0.0,), (1.0,)][:count]
    theta = 2.0 * np.pi * np.arange(count) / count
    return [(float(np.cos(t)), float(np.sin(t))) for t in theta]


def scenario_sources(scenario: Scenario) -> list[SourceSpec]:
    """Ordered by wavenumber, then location, then scale."""
    return [
        SourceSpec(location=loc, scale=float(s), k=float(k))
        for k in scenario.sources.frequencies
        for loc in source_locations(scenario.domain, scenario.sources.count)
        for s in scenario.sources.scales
    ]


def background_fields(grid: Grid, sources: list[SourceSpec], threads: int = 1) -> list:
    solvers = {k: GreenSolver(grid, k) for k in dict.fromkeys(s.k for s in sources)}
    return map_ordered(lambda src: solve_background(grid, src, solvers[src.k]), sources, threads)


# ------------------------------------------------------------------
# 5. SYNTHESIS
# ------------------------------------------------------------------

def forward_solve(zeta: Susceptibility, background, settings: ForwardSettings, mu: float | None = None):
    if settings.method == "newton":
        return newton_solve(zeta, background, settings.tol, settings.max_iter)
    return fixed_point_solve(zeta, background, settings.tol, settings.max_iter, mu=mu)


def synthesize(scenario: Scenario, threads: int = 1) -> ScatteringData:
    """phi = (u - u0) on the synthesis grid boundary, carried to the inversion receivers."""
    syn_grid = build_grid(scenario.domain, scenario.synthesis_resolution)
    inv_grid = build_grid(scenario.domain, scenario.inversion_resolution)
    zeta = true_susceptibility(scenario, syn_grid)
    sources = scenario_sources(scenario)
    backgrounds = background_fields(syn_grid, sources, threads)

    def one(bg):
        try:
            u, _ = forward_solve(zeta, bg, scenario.forward)
        except NonConvergenceError as exc:
            raise NonConvergenceError(
                f"forward solve failed for source {bg.source} at contrast {scenario.contrast:g}: {exc}",
                residual_history=exc.residual_history, source=bg.source,
            ) from exc
        return (u - bg.values)[syn_grid.boundary]

    traces = np.array(map_ordered(one, backgrounds, threads))
    phi = interpolate_boundary(traces, syn_grid, inv_grid)

    if scenario.noise > 0:
        rng = np.random.default_rng(scenario.seed)
        level = scenario.noise * float(np.sqrt(np.mean(phi ** 2)))
        phi = phi + level * rng.standard_normal(phi.shape)

    logger.info(
        "Synthesized %d x %d data on resolution %d (inversion receivers at %d)",
        *phi.shape, scenario.synthesis_resolution, scenario.inversion_resolution,
    )
    return ScatteringData(phi=phi, sources=sources, receivers=inv_grid.coordinates[inv_grid.boundary])


# ------------------------------------------------------------------
# 6. INVERSION + EVALUATION
# ------------------------------------------------------------------

@dataclass(eq=False)
class InversionResult:
    grid: Grid
    kmap: LinearizedMap
    pinv: RegularizedPseudoinverse
    report: ConvergenceReport
    zeta: Susceptibility
    diagnostics: InverseDiagnostics
    errors: ErrorReport


def analyze(scenario: Scenario, data: ScatteringData | None = None, threads: int = 1):
    """Convergence report on the inversion grid; returns (report, grid, kmap, pinv, backgrounds)."""
    grid = build_grid(scenario.domain, scenario.inversion_resolution)
    sources = scenario_sources(scenario)
    backgrounds = background_fields(grid, sources, threads)
    solvers = list({id(bg.solver): bg.solver for bg in backgrounds}.values())
    mu = max(s.mu for s in solvers)
    nu0 = max(float(np.abs(bg.values).max()) for bg in backgrounds)
    kmap = assemble_K1(grid, backgrounds, unknowns=scenario.unknowns)
    pinv = build_pinv(kmap, scenario.tau)
    first = None
    if data is not None:
        check_data(data, sources, grid)
        first = kmap.to_susceptibility(pinv.apply(data.vector())).sup_norm()
    report = convergence_report(
        mu, nu0, pinv.norm, mu_rows_sampled=int(mu_rows(grid, MU_MAX_ROWS).size), first_term_norm=first,
    )
    return report, grid, kmap, pinv, backgrounds


def check_data(data: ScatteringData, sources: list[SourceSpec], grid: Grid) -> None:
    if data.n_sources != len(sources):
        raise ConfigurationError(f"data has {data.n_sources} sources, scenario defines {len(sources)}")
    if len(data.receivers) != grid.boundary.size:
        raise ConfigurationError(
            f"data has {len(data.receivers)} receivers, inversion grid has {grid.boundary.size}"
        )
    got = np.array([(s.k, s.scale) for s in data.sources])
    want = np.array([(s.k, s.scale) for s in sources])
    if not np.allclose(got, want, rtol=1e-12, atol=0.0):
        raise ConfigurationError("data sources (wavenumber, scale) do not match the scenario")


def invert(scenario: Scenario, data: ScatteringData, threads: int = 1) -> InversionResult:
    report, grid, kmap, pinv, backgrounds = analyze(scenario, data, threads)
    zeta, diagnostics = reconstruct(
        data, scenario.M, pinv, kmap, backgrounds, radius=report.r,
        cache=ForwardTermCache(), threads=threads,
    )
    errors = evaluate(scenario, grid, diagnostics.partial_sums)
    return InversionResult(grid, kmap, pinv, report, zeta, diagnostics, errors)


def sample_field(grid: Grid, values, points) -> np.ndarray:
    """Piecewise-linear interpolation of a nodal field at arbitrary points."""
    values = grid.check_field(values)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if grid.dimension == 1:
        return np.interp(points[:, 0], grid.coordinates[:, 0], values)
    tri = Delaunay(grid.coordinates)
    out = LinearNDInterpolator(tri, values)(points)
    outside = ~np.isfinite(out)
    if outside.any():
        out[outside] = NearestNDInterpolator(grid.coordinates, values)(points[outside])
    return out


def _relative(diff: np.ndarray, truth: np.ndarray, weights: np.ndarray) -> tuple[float, float]:
    if not np.isfinite(diff).all():
        return np.inf, np.inf
    num_l2 = float(np.sqrt(np.sum(weights * diff ** 2)))
    den_l2 = float(np.sqrt(np.sum(weights * truth ** 2)))
    num_sup = float(np.abs(diff).max()) if diff.size else 0.0
    den_sup = float(np.abs(truth).max()) if truth.size else 0.0
    return (num_l2 / den_l2 if den_l2 > 0 else num_l2,
            num_sup / den_sup if den_sup > 0 else num_sup)


def _errors(rec: Susceptibility, truth: Susceptibility, w: np.ndarray) -> dict:
    a_l2, a_sup = _relative(rec.alpha - truth.alpha, truth.alpha, w)
    b_l2, b_sup = _relative(rec.beta - truth.beta, truth.beta, w)
    j_l2, j_sup = _relative(
        np.concatenate([rec.alpha - truth.alpha, rec.beta - truth.beta]),
        np.concatenate([truth.alpha, truth.beta]),
        np.concatenate([w, w]),
    )
    return {"alpha_l2": a_l2, "alpha_sup": a_sup, "beta_l2": b_l2,
            "beta_sup": b_sup, "joint_l2": j_l2, "joint_sup": j_sup}


def crosssection_points(grid: Grid, samples: int = 101) -> np.ndarray:
    if grid.dimension == 1:
        return grid.coordinates.copy()
    x = np.linspace(-1.0, 1.0, samples)
    return np.column_stack([x, np.zeros_like(x)])


def evaluate(scenario: Scenario, grid: Grid, reconstruction) -> ErrorReport:
    """Errors of the final reconstruction plus the per-term trajectory of partial sums."""
    partial_sums = [reconstruction] if isinstance(reconstruction, Susceptibility) else list(reconstruction)
    truth = true_susceptibility(scenario, grid)
    final = partial_sums[-1]
    if final.size != grid.n_nodes:
        raise ConfigurationError("reconstruction does not live on the inversion grid")
    w = grid.weights

    rows = [{"term": m, **_errors(z, truth, w)} for m, z in enumerate(partial_sums, start=1)]
    summary = _errors(final, truth, w)

    points = crosssection_points(grid)
    cross = {"x": points[:, 0]}
    if grid.dimension == 2:
        cross["y"] = points[:, 1]
    for label, z in (("true", truth), ("rec", final)):
        cross[f"alpha_{label}"] = sample_field(grid, z.alpha, points)
        cross[f"beta_{label}"] = sample_field(grid, z.beta, points)

    return ErrorReport(
        **summary,
        trajectory=pd.DataFrame(rows),
        crosssection=pd.DataFrame(cross),
    )


# ------------------------------------------------------------------
# 7. CSV FRAMES
# ------------------------------------------------------------------

def phi_frame(data: ScatteringData) -> pd.DataFrame:
    rows = []
    dim = data.receivers.shape[1]
    for s, src in enumerate(data.sources):
        for r, rec in enumerate(data.receivers):
            row = {"source": s, "k": src.k, "scale": src.scale, "src_x": src.location[0]}
            if dim == 2:
                row["src_y"] = src.location[1]
            row.update({"receiver": r, "rx": rec[0]})
            if dim == 2:
                row["ry"] = rec[1]
            row["phi"] = data.phi[s, r]
            rows.append(row)
    return pd.DataFrame(rows)


def read_phi(path) -> ScatteringData:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"data file {path} does not exist")
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ConfigurationError(f"cannot parse data file {path}: {exc}") from exc
    required = {"source", "k", "scale", "src_x", "receiver", "rx", "phi"}
    missing = required - set(df.columns)
    if missing:
        raise ConfigurationError(f"{path} is missing columns: {sorted(missing)}")
    two_d = "src_y" in df.columns
    df = df.sort_values(["source", "receiver"])
    n_src = df["source"].nunique()
    n_recv = df["receiver"].nunique()
    if len(df) != n_src * n_recv:
        raise ConfigurationError(f"{path} is not a complete source x receiver table")
    src_rows = df.drop_duplicates("source")
    sources = [
        SourceSpec(
            location=(r.src_x, r.src_y) if two_d else (r.src_x,),
            scale=float(r.scale), k=float(r.k),
        )
        for r in src_rows.itertuples()
    ]
    rec_rows = df[df["source"] == src_rows["source"].iloc[0]]
    receivers = rec_rows[["rx", "ry"]].to_numpy() if two_d else rec_rows[["rx"]].to_numpy()
    phi = df["phi"].to_numpy().reshape(n_src, n_recv)
    return ScatteringData(phi=phi, sources=sources, receivers=receivers)


def recon_frame(grid: Grid, zeta: Susceptibility, truth: Susceptibility | None = None) -> pd.DataFrame:
    columns = {"node": np.arange(grid.n_nodes), "x": grid.coordinates[:, 0]}
    if grid.dimension == 2:
        columns["y"] = grid.coordinates[:, 1]
    columns["alpha"] = zeta.alpha
    columns["beta"] = zeta.beta
    if truth is not None:
        columns["alpha_true"] = truth.alpha
        columns["beta_true"] = truth.beta
    return pd.DataFrame(columns)
