"""Monte Carlo harness: compound-symmetry data, phi vs the MSE bound, grids.

One experiment cell draws X with rows i.i.d. N(0, Sigma_rho), standardizes,
plants s Unif(coef_low, coef_high) coefficients on a uniformly random support,
sets the noise level from the target signal-to-noise ratio, fits the lasso at
the theoretical penalty (true sigma), computes phi on the true support with
the configured solver, and records the error bound 9 s lambda^2 / phi^2 next
to the realized in-sample MSE, both raw and scaled by n / log p.

Per-cell seeds derive from the master seed by the documented SplitMix64
fold (see :mod:`compatkit.rng`), so any subset of a grid can be re-run
independently with identical results; the record set is invariant to worker
count and emission order.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import Iterable, Iterator, Sequence

import numpy as np

from .bnb import BnbConfig, phi_bnb
from .enumeration import phi_enumerate, S_MAX_DEFAULT
from .errors import CompatKitError, InvalidConfig, PrefixTooSmall
from .lasso import fit_lasso, lambda_bound
from .model import ActiveSet, CompatResult, DesignMatrix, gram, standardize
from .rng import cell_seed, fold

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimConfig:
    n_grid: tuple[int, ...]
    p_grid: tuple[int, ...]
    rho_grid: tuple[float, ...]
    s: int
    seed: int
    coef_low: float = 1.0
    coef_high: float = 2.0
    snr: float = 1.0
    delta: float = 0.1
    replications: int = 1
    solver: str = "enum"
    bnb: BnbConfig | None = None
    s_max: int = S_MAX_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "p_grid", tuple(int(p) for p in self.p_grid))
        object.__setattr__(self, "rho_grid", tuple(float(r) for r in self.rho_grid))
        if not self.n_grid or not self.p_grid or not self.rho_grid:
            raise InvalidConfig("all grids must be nonempty")
        if any(n < 2 for n in self.n_grid) or any(p < 2 for p in self.p_grid):
            raise InvalidConfig("need n >= 2 and p >= 2 in the grids")
        if any(not (0.0 <= r < 1.0) for r in self.rho_grid):
            raise InvalidConfig("rho values must lie in [0, 1)")
        if self.s < 1 or any(self.s > p for p in self.p_grid):
            raise InvalidConfig("need 1 <= s <= min(p_grid)")
        if self.coef_low > self.coef_high:
            raise InvalidConfig("need coef_low <= coef_high")
        if self.snr <= 0:
            raise InvalidConfig("snr must be positive")
        if self.replications < 1:
            raise InvalidConfig("replications must be >= 1")
        if self.solver not in ("enum", "bnb"):
            raise InvalidConfig(f"unknown solver {self.solver!r}")
        if self.solver == "bnb" and self.bnb is None:
            raise InvalidConfig("solver 'bnb' requires a BnbConfig")
        if self.solver == "enum" and self.s > self.s_max:
            raise InvalidConfig(
                f"s={self.s} exceeds the enumeration cap {self.s_max}; use solver='bnb'"
            )


@dataclass(frozen=True)
class ExperimentRecord:
    n: int
    p: int
    rho: float
    s: int
    seed: int
    replication: int
    phi: float
    phi_sq: float
    status: str
    mse: float
    bound: float
    mse_scaled: float
    bound_scaled: float
    ratio_bound_over_mse: float
    ratio_mse_over_bound: float
    lam: float
    sigma_sq: float
    wall_time: float


# CSV columns, in order; "lambda" is the wire name of the ``lam`` field.
RECORD_COLUMNS = [
    "n", "p", "rho", "s", "seed", "replication", "phi", "phi_sq", "status",
    "mse", "bound", "mse_scaled", "bound_scaled",
    "ratio_bound_over_mse", "ratio_mse_over_bound", "lambda", "sigma_sq", "wall_time",
]

_FIELD_OF_COLUMN = {c: ("lam" if c == "lambda" else c) for c in RECORD_COLUMNS}


@dataclass(frozen=True)
class GeneratedData:
    design: DesignMatrix
    y: np.ndarray
    beta: np.ndarray
    active: ActiveSet
    sigma_sq: float


def gen_compound_data(
    n: int,
    p: int,
    rho: float,
    s: int,
    coef_range: tuple[float, float] = (1.0, 2.0),
    snr: float = 1.0,
    seed: int = 0,
) -> GeneratedData:
    """Draw one dataset; fully deterministic for a given seed.

    Rows are sqrt(1-rho) g + sqrt(rho) w 1', which has covariance Sigma_rho;
    the support is uniform without replacement, coefficients Unif(coef_range),
    sigma^2 = beta' Sigma_rho beta / snr, and y = X beta + eps is centered
    along with the standardized X.
    """
    if not (0.0 <= rho < 1.0):
        raise InvalidConfig(f"rho must lie in [0, 1), got {rho}")
    if s < 1 or s > p:
        raise InvalidConfig(f"need 1 <= s <= p, got s={s}, p={p}")
    rng = np.random.Generator(np.random.PCG64(seed))
    g = rng.standard_normal((n, p))
    w = rng.standard_normal(n)
    raw = np.sqrt(1.0 - rho) * g + np.sqrt(rho) * w[:, None]
    std = standardize(raw)

    support = np.sort(rng.choice(p, size=s, replace=False))
    coefs = rng.uniform(coef_range[0], coef_range[1], size=s)
    beta = np.zeros(p)
    beta[support] = coefs

    l2, sm = (1.0 - rho) * float(beta @ beta), rho * float(beta.sum()) ** 2
    sigma_sq = (l2 + sm) / snr
    eps = rng.normal(0.0, np.sqrt(sigma_sq), size=n)
    y = std.design.values @ beta + eps
    y = y - y.mean()

    return GeneratedData(
        design=std.design,
        y=y,
        beta=beta,
        active=ActiveSet(tuple(int(j) for j in support)),
        sigma_sq=sigma_sq,
    )


def _solve_phi(
    design: DesignMatrix,
    active: ActiveSet,
    solver: str,
    bnb_cfg: BnbConfig | None,
    s_max: int,
) -> CompatResult:
    sigma_hat = gram(design)
    if solver == "bnb":
        return phi_bnb(sigma_hat, active, bnb_cfg or BnbConfig())
    return phi_enumerate(sigma_hat, active, s_max=s_max)


def bound_and_ratios(phi_sq: float, condition_holds: bool, s: int, lam: float,
                     mse: float) -> tuple[float, float, float]:
    """(bound, bound/mse, mse/bound) with the conventions for degenerate cases:
    a failed condition gives (inf, inf, 0); a zero MSE gives ratio inf / 0."""
    if not condition_holds:
        return np.inf, np.inf, 0.0
    bound = float(9.0 * s * lam * lam / phi_sq)
    if mse <= 0.0:
        return bound, np.inf, 0.0
    return bound, bound / mse, mse / bound


def evaluate_cell(
    design: DesignMatrix,
    y: np.ndarray,
    beta_true: np.ndarray,
    s_true: ActiveSet,
    delta: float,
    solver: str = "enum",
    bnb_cfg: BnbConfig | None = None,
    *,
    sigma_sq: float,
    rho: float = float("nan"),
    seed: int = 0,
    replication: int = 0,
    s_max: int = S_MAX_DEFAULT,
) -> ExperimentRecord:
    """Fill every record field for one dataset.

    The penalty uses the true sigma (the harness knows it); phi is computed
    on the true support.  A phi below the zero floor yields an infinite
    bound, ratio conventions inf / 0, and the ZeroDetected status flags the
    record as "condition fails".
    """
    t0 = time.perf_counter()
    n, p = design.n, design.p
    s = s_true.s
    lam = lambda_bound(float(np.sqrt(sigma_sq)), n, p, delta)
    fit = fit_lasso(design, y, lam)
    result = _solve_phi(design, s_true, solver, bnb_cfg, s_max)

    resid_model = design.values @ (fit.beta - beta_true)
    mse = float(resid_model @ resid_model) / n
    scale = float(n / np.log(p))
    bound, ratio_bm, ratio_mb = bound_and_ratios(
        result.phi_sq, result.condition_holds, s, lam, mse
    )

    return ExperimentRecord(
        n=n,
        p=p,
        rho=float(rho),
        s=s,
        seed=int(seed),
        replication=int(replication),
        phi=result.phi,
        phi_sq=result.phi_sq,
        status=result.status.value,
        mse=mse,
        bound=bound,
        mse_scaled=mse * scale,
        bound_scaled=bound * scale,
        ratio_bound_over_mse=ratio_bm,
        ratio_mse_over_bound=ratio_mb,
        lam=lam,
        sigma_sq=float(sigma_sq),
        wall_time=time.perf_counter() - t0,
    )


def _error_record(n, p, rho, seed, replication, s, exc) -> ExperimentRecord:
    nan = float("nan")
    return ExperimentRecord(
        n=n, p=p, rho=rho, s=s, seed=seed, replication=replication,
        phi=nan, phi_sq=nan, status=f"Error:{type(exc).__name__}",
        mse=nan, bound=nan, mse_scaled=nan, bound_scaled=nan,
        ratio_bound_over_mse=nan, ratio_mse_over_bound=nan,
        lam=nan, sigma_sq=nan, wall_time=0.0,
    )


def _run_cell(cfg: SimConfig, n: int, p: int, rho: float, replication: int) -> ExperimentRecord:
    seed = cell_seed(cfg.seed, n, p, rho, replication)
    # each cell warm-starts its own BnB stream, still reproducibly
    bnb_cfg = None if cfg.bnb is None else replace(cfg.bnb, seed=fold(seed, 0xB4B))
    try:
        data = gen_compound_data(
            n, p, rho, cfg.s, (cfg.coef_low, cfg.coef_high), cfg.snr, seed
        )
        return evaluate_cell(
            data.design, data.y, data.beta, data.active, cfg.delta,
            cfg.solver, bnb_cfg,
            sigma_sq=data.sigma_sq, rho=rho, seed=seed, replication=replication,
            s_max=cfg.s_max,
        )
    except (CompatKitError, np.linalg.LinAlgError) as exc:  # record, never abort
        log.warning("cell (n=%d, p=%d, rho=%g, rep=%d) failed: %s", n, p, rho, replication, exc)
        return _error_record(n, p, rho, seed, replication, cfg.s, exc)


def _cells(cfg: SimConfig) -> list[tuple[int, int, float, int]]:
    return [
        (n, p, rho, rep)
        for n in cfg.n_grid
        for p in cfg.p_grid
        for rho in cfg.rho_grid
        for rep in range(cfg.replications)
    ]


def run_grid(cfg: SimConfig, workers: int = 1) -> Iterator[ExperimentRecord]:
    """Stream one record per (cell x replication).

    ``workers`` > 1 evaluates cells in separate processes; results are still
    emitted in grid order and are identical to a single-worker run.
    """
    cells = _cells(cfg)
    if workers <= 1:
        for n, p, rho, rep in cells:
            yield _run_cell(cfg, n, p, rho, rep)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(_run_cell, *zip(*[(cfg, n, p, rho, rep) for n, p, rho, rep in cells]))


def _cell_text(val) -> str:
    # numpy float scalars subclass float; normalize so reprs stay plain
    if isinstance(val, str):
        return val
    if isinstance(val, float):
        return repr(float(val))
    return repr(val)


def record_to_row(rec: ExperimentRecord) -> list[str]:
    return [_cell_text(getattr(rec, _FIELD_OF_COLUMN[col])) for col in RECORD_COLUMNS]


def write_records_csv(path, records: Iterable[ExperimentRecord]) -> int:
    """Stream records to CSV, flushing per row so interrupted grids keep
    everything already computed.  Infinities serialize as the literal 'inf'."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(RECORD_COLUMNS) + "\n")
        fh.flush()
        for rec in records:
            fh.write(",".join(record_to_row(rec)) + "\n")
            fh.flush()
            count += 1
    return count


@dataclass(frozen=True)
class CurvePoint:
    n: int
    phi: float
    phi_sq: float
    lam: float
    mse: float
    bound: float
    mse_scaled: float
    bound_scaled: float
    ratio_bound_over_mse: float
    ratio_mse_over_bound: float
    status: str


CURVE_COLUMNS = [
    "n", "phi", "phi_sq", "lambda", "mse", "bound", "mse_scaled", "bound_scaled",
    "ratio_bound_over_mse", "ratio_mse_over_bound", "status",
]


def phi_curve(
    X_full: np.ndarray,
    y_full: np.ndarray,
    active: ActiveSet,
    n_steps: Sequence[int],
    sigma_sq: float,
    beta_ref: np.ndarray,
    delta: float = 0.1,
    solver: str = "enum",
    bnb_cfg: BnbConfig | None = None,
    s_max: int = S_MAX_DEFAULT,
) -> list[CurvePoint]:
    """phi, MSE, and bound on growing data prefixes with a fixed support.

    For each prefix size n the prefix is restandardized, phi computed on the
    fixed active set, the penalty derived from the provided sigma^2 estimate,
    and the lasso refit compared against ``beta_ref``.
    """
    X_full = np.asarray(X_full, dtype=float)
    y_full = np.asarray(y_full, dtype=float)
    if X_full.ndim != 2 or y_full.shape != (X_full.shape[0],):
        raise InvalidConfig("X and y shapes are inconsistent")
    p = X_full.shape[1]
    active.validate_against(p)
    beta_ref = np.asarray(beta_ref, dtype=float)
    if beta_ref.shape != (p,):
        raise InvalidConfig(f"beta_ref must have length {p}")
    steps = [int(n) for n in n_steps]
    if not steps:
        raise InvalidConfig("need at least one prefix size")
    if max(steps) > X_full.shape[0]:
        raise PrefixTooSmall(
            f"prefix {max(steps)} exceeds the {X_full.shape[0]} available rows"
        )
    s = active.s
    for n in steps:
        if n < 2 or n < s + 1:
            raise PrefixTooSmall(f"prefix n={n} too small for s={s}")

    out = []
    for n in steps:
        std = standardize(X_full[:n])
        yn = y_full[:n] - y_full[:n].mean()
        result = _solve_phi(std.design, active, solver, bnb_cfg, s_max)
        lam = lambda_bound(float(np.sqrt(sigma_sq)), n, p, delta)
        fit = fit_lasso(std.design, yn, lam)
        resid_model = std.design.values @ (fit.beta - beta_ref)
        mse = float(resid_model @ resid_model) / n
        scale = float(n / np.log(p))
        bound, ratio_bm, ratio_mb = bound_and_ratios(
            result.phi_sq, result.condition_holds, s, lam, mse
        )
        out.append(
            CurvePoint(
                n=n, phi=result.phi, phi_sq=result.phi_sq, lam=lam,
                mse=mse, bound=bound, mse_scaled=mse * scale, bound_scaled=bound * scale,
                ratio_bound_over_mse=ratio_bm, ratio_mse_over_bound=ratio_mb,
                status=result.status.value,
            )
        )
    return out


def write_curve_csv(path, points: list[CurvePoint]) -> int:
    field_of = {c: ("lam" if c == "lambda" else c) for c in CURVE_COLUMNS}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CURVE_COLUMNS) + "\n")
        for pt in points:
            fh.write(",".join(_cell_text(getattr(pt, field_of[c])) for c in CURVE_COLUMNS) + "\n")
    return len(points)


def records_equal_ignoring_time(a: ExperimentRecord, b: ExperimentRecord) -> bool:
    """Bit-identity on every field except the wall-clock one."""
    for f in fields(ExperimentRecord):
        if f.name == "wall_time":
            continue
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, float) and isinstance(vb, float):
            if np.isnan(va) and np.isnan(vb):
                continue
            if repr(va) != repr(vb):
                return False
        elif va != vb:
            return False
    return True
