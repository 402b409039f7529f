"""runner.py

Runs a resolved configuration in one of four modes and assembles the
:class:`ReturnSignal` and :class:`RunSummary`.

``single``    I1 and far-field diagnostics per time.
``double``    adds I21 with its error, the smallness parameter, the I22/I23
              bounds and the empty-D0 flag.
``mc``        Monte Carlo rates per bin and category, with multiplicity ratios.
``validate``  analytic and Monte Carlo side by side with z-scores, the D0
              remainder against the bounds, chi-square per order and a pass
              flag.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from importlib import metadata
from typing import Dict, List, Optional

import numpy as np
from scipy import stats

from .config import ResolvedConfig
from .double_scatter import double_scatter_return, i22_bound, i23_bound
from .errors import LidarkitError, ValidityError
from .geometry import check_double_scatter_validity, check_far_field
from .models import McRow, ReturnSignal, RunSummary, SignalRow, ValidationRow
from .montecarlo import estimate_returns
from .single_scatter import bin_averaged_single_scatter, single_scatter_return
from .tally import CATEGORIES, McTally, order_ratios

logger = logging.getLogger(__name__)

CONTRACT = "lidarkit-signal/1"
Z_LIMIT = 3.0
REL_LIMIT_ORDER2 = 0.05
# detections a bin needs before an order is graded
MIN_COUNT = 100


@dataclass(frozen=True)
class RunResult:
    signal: ReturnSignal
    summary: RunSummary
    tally: Optional[McTally] = None


def package_versions() -> Dict[str, str]:
    out = {}
    for name in ("lidarkit", "numpy", "scipy", "pydantic"):
        try:
            out[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            out[name] = "unknown"
    return out


# ------------------------------------------------------------
# Regime checks
# ------------------------------------------------------------

def regime_violations(cfg: ResolvedConfig) -> List[str]:
    """Far-field and (for double-scatter modes) smallness failures per time."""
    spec, geom = cfg.spec, cfg.geometry
    diag = spec.diagnostics
    checks_double = spec.mode in ("double", "validate")
    found = []
    for t in cfg.grid.times:
        far = check_far_field(float(t), geom)
        if not far.margin > diag.far_field_margin:
            found.append(f"t={t:g}: far field fails (margin {far.margin:.4g} <= {diag.far_field_margin:g})")
        if checks_double:
            if t <= geom.rho0:
                found.append(f"t={t:g}: smallness parameter undefined for t <= rho0")
                continue
            small = check_double_scatter_validity(float(t), geom, cfg.medium, diag.smallness_threshold)
            if not small.ok:
                found.append(f"t={t:g}: smallness parameter {small.q:.4g} exceeds {small.threshold:g}")
    return found


# ------------------------------------------------------------
# Analytic rows
# ------------------------------------------------------------

def _analytic_row(cfg: ResolvedConfig, t: float, bin_lo: Optional[float], bin_hi: Optional[float]) -> SignalRow:
    spec, geom, medium = cfg.spec, cfg.geometry, cfg.medium
    far = check_far_field(t, geom)
    row: Dict[str, object] = {
        "t": t,
        "far_field_ok": far.margin > spec.diagnostics.far_field_margin,
        "far_field_margin": far.margin,
        "i1": single_scatter_return(t, geom, medium, warn=False),
    }
    if bin_lo is not None and bin_lo > 0.0:
        row["i1_bin"] = bin_averaged_single_scatter(bin_lo, bin_hi, geom, medium)

    if spec.mode in ("double", "validate"):
        if t > geom.rho0:
            small = check_double_scatter_validity(t, geom, medium, spec.diagnostics.smallness_threshold)
            row["smallness_q"], row["smallness_ok"] = small.q, small.ok
        res = double_scatter_return(t, geom, medium, spec.phase_mode, cfg.quadrature)
        row.update(
            i21=res.value,
            i21_error=res.error,
            i21_subdivisions=res.subdivisions,
            d0_empty=res.empty,
            i22_bound=i22_bound(t, geom, medium),
        )
        if geom.epsilon * t > 2.0 * geom.rho0:
            row["i23_bound"] = i23_bound(t, geom, medium)
    return SignalRow(**row)


def analytic_rows(cfg: ResolvedConfig) -> List[SignalRow]:
    with_bins = cfg.spec.mode == "validate"
    lo, hi = cfg.grid.bin_edges(cfg.spec.montecarlo.bin_width) if with_bins else (None, None)
    rows = []
    for i, t in enumerate(cfg.grid.times):
        try:
            rows.append(
                _analytic_row(
                    cfg, float(t),
                    float(lo[i]) if with_bins else None,
                    float(hi[i]) if with_bins else None,
                )
            )
        except LidarkitError as exc:
            exc.add_note(f"while processing time point t = {t:g}")
            raise
    return rows


# ------------------------------------------------------------
# Monte Carlo rows
# ------------------------------------------------------------

def mc_rows(cfg: ResolvedConfig, tally: McTally) -> List[McRow]:
    rates = {c: tally.rate(c) for c in CATEGORIES}
    errors = {c: tally.stderr(c) for c in CATEGORIES}
    counts = {c: tally.counts(c) for c in CATEGORIES}
    ratios = order_ratios(tally)
    rows = []
    for j, t in enumerate(cfg.grid.times):
        rows.append(
            McRow(
                t=float(t),
                bin_lo=float(tally.lo[j]),
                bin_hi=float(tally.hi[j]),
                rate={c: float(rates[c][j]) for c in CATEGORIES},
                stderr={c: float(errors[c][j]) for c in CATEGORIES},
                count={c: int(counts[c][j]) for c in CATEGORIES},
                ratio={k: float(v[j]) for k, v in ratios.items()},
            )
        )
    return rows


def run_montecarlo(cfg: ResolvedConfig, workers: Optional[int] = None) -> McTally:
    mc = cfg.spec.montecarlo
    return estimate_returns(
        n_histories=mc.histories,
        blocks=mc.blocks,
        geom=cfg.geometry,
        medium=cfg.medium,
        grid=cfg.grid,
        seed=mc.seed,
        estimator=mc.estimator,
        horizon=mc.horizon,
        workers=workers or mc.workers,
        bin_width=mc.bin_width,
    )


# ------------------------------------------------------------
# Validation
# ------------------------------------------------------------

def _z_score(diff: float, se: float) -> float:
    if se > 0.0:
        return diff / se
    return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)


def validation_rows(analytic: List[SignalRow], mc: List[McRow], min_count: int = MIN_COUNT) -> List[ValidationRow]:
    """Compare order 1 with bin-averaged I1 and the D0 part of order 2 with I21.

    An order is graded in a bin only when it has at least *min_count*
    detections there; sparse bins are reported but never fail.
    """
    rows = []
    for a, m in zip(analytic, mc):
        graded1 = m.count["1"] >= min_count
        graded2 = m.count["2:D0"] >= min_count
        z1 = z2 = rel2 = None
        if graded1:
            i1 = a.i1_bin if a.i1_bin is not None else a.i1
            z1 = _z_score(m.rate["1"] - i1, m.stderr["1"])
        if graded2:
            i21 = a.i21 or 0.0
            d2 = m.rate["2:D0"] - i21
            z2 = _z_score(d2, m.stderr["2:D0"])
            rel2 = abs(d2) / i21 if i21 > 0.0 else (0.0 if d2 == 0.0 else math.inf)
        remainder = m.rate["2:outside"]
        bound = None
        if a.i23_bound is not None and a.i22_bound is not None:
            bound = a.i22_bound + a.i23_bound
        remainder_ok = bound is None or remainder <= bound + Z_LIMIT * m.stderr["2:outside"]
        ok = (
            (z1 is None or abs(z1) <= Z_LIMIT)
            and (z2 is None or abs(z2) <= Z_LIMIT or rel2 <= REL_LIMIT_ORDER2)
            and remainder_ok
        )
        rows.append(
            ValidationRow(
                t=a.t,
                graded_order1=graded1,
                graded_order2=graded2,
                z_order1=z1,
                z_order2=z2,
                rel_diff_order2=rel2,
                d0_remainder=remainder,
                remainder_bound=bound,
                remainder_ok=remainder_ok,
                ok=ok,
            )
        )
    return rows


def chi_square(rows: List[ValidationRow]) -> Dict[str, Dict[str, float]]:
    """Chi-square of the graded, finite z-scores per order, with its p-value."""
    out = {}
    for order, attr in (("1", "z_order1"), ("2", "z_order2")):
        z = np.array([v for r in rows if (v := getattr(r, attr)) is not None], dtype=float)
        z = z[np.isfinite(z)]
        stat = float(np.sum(z * z))
        dof = int(z.size)
        p = float(stats.chi2.sf(stat, dof)) if dof > 0 else math.nan
        out[order] = {"chi2": stat, "dof": float(dof), "p_value": p}
    return out


# ------------------------------------------------------------
# Entry point
# ------------------------------------------------------------

def run(cfg: ResolvedConfig, workers: Optional[int] = None, strict: bool = False) -> RunResult:
    """Compute the return signal described by *cfg*.

    Args:
        cfg: Resolved configuration.
        workers: Overrides ``montecarlo.workers``.
        strict: Fail with :class:`ValidityError` before computing when a
            regime check fails; otherwise violations are logged and reported.

    Returns:
        The signal, its summary and the Monte Carlo tally (if any).
    """
    spec = cfg.spec
    violations = regime_violations(cfg)
    if violations:
        if strict:
            raise ValidityError(violations)
        for v in violations:
            logger.warning(v)

    signal = ReturnSignal(mode=spec.mode)
    tally = None
    if spec.mode in ("single", "double", "validate"):
        signal.analytic = analytic_rows(cfg)
    if spec.mode in ("mc", "validate"):
        tally = run_montecarlo(cfg, workers)
        signal.montecarlo = mc_rows(cfg, tally)

    chi2: Dict[str, Dict[str, float]] = {}
    passed = None
    if spec.mode == "validate":
        signal.validation = validation_rows(signal.analytic, signal.montecarlo)
        chi2 = chi_square(signal.validation)
        graded = sum(r.graded_order1 or r.graded_order2 for r in signal.validation)
        if not graded:
            logger.warning("no bin holds %d detections of either order; nothing was graded", MIN_COUNT)
        passed = graded > 0 and all(r.ok for r in signal.validation)
        logger.info(
            "validation %s (%d of %d bins graded)",
            "passed" if passed else "FAILED", graded, len(signal.validation),
        )

    uses_mc = spec.mode in ("mc", "validate")
    summary = RunSummary(
        contract=CONTRACT,
        mode=spec.mode,
        config_hash=cfg.config_hash,
        seed=spec.montecarlo.seed if uses_mc else None,
        histories=spec.montecarlo.histories if uses_mc else None,
        versions=package_versions(),
        rows=len(cfg.grid),
        violations=violations,
        chi2=chi2,
        passed=passed,
    )
    return RunResult(signal=signal, summary=summary, tally=tally)
