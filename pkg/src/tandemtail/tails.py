"""Empirical tail estimators and their comparison against the analytic predictions.

Decay rates come from ordinary least squares on the log-CCDF with the
polynomial exponent compensated analytically (fitting both jointly from a
noisy tail is ill-conditioned, and the exponent is known exactly).  The
dependence diagnostics divide joint exceedance mass by the smaller marginal
mass, the conservative denominator, so a vanishing ratio certifies the limit
for either normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sim import PAIRS, EmptyWindow, StationaryAccumulator

__all__ = [
    "InsufficientTail",
    "InsufficientBlocks",
    "TailFit",
    "DependenceProfile",
    "empirical_ccdf",
    "default_fit_window",
    "fit_decay",
    "tail_dependence",
    "factorization_table",
    "factorization_ratio",
    "gumbel_block_maxima",
    "standard_gumbel_cdf",
]

EULER_GAMMA = 0.5772156649015329


class InsufficientTail(ValueError):
    """Fewer than 5 positive-probability levels inside the fit window."""


class InsufficientBlocks(ValueError):
    """Fewer than 20 block maxima supplied."""


@dataclass(frozen=True)
class TailFit:
    """Fitted exponential decay rate of one node's stationary tail."""

    alpha_hat: float
    intercept: float
    stderr: float
    window: tuple[float, float]
    n_levels: int
    mu: float
    node: int | None = None


@dataclass(frozen=True)
class DependenceProfile:
    """Joint-over-marginal exceedance ratios for one node pair at shared levels.

    ``ratios`` entries are NaN where the (smaller) marginal denominator has
    no mass, i.e. beyond the resolvable tail.
    """

    pair: tuple[int, int]
    levels: tuple[float, ...]
    ratios: tuple[float, ...]
    joint: tuple[float, ...]
    margins: tuple[tuple[float, ...], tuple[float, ...]]

    def resolvable(self) -> list[int]:
        return [i for i, r in enumerate(self.ratios) if not math.isnan(r)]


def empirical_ccdf(acc: StationaryAccumulator, node: int) -> tuple[np.ndarray, np.ndarray]:
    """Levels and time-weighted exceedance probabilities for one node."""
    if acc.steps == 0:
        raise EmptyWindow("no accumulated steps")
    levels = np.asarray(acc.config.ccdf_grid[node - 1])
    probs = acc.occupation[node - 1] / acc.steps
    return levels, probs


def default_fit_window(
    ccdf: tuple[np.ndarray, np.ndarray], lo_q: float = 0.90, hi_q: float = 0.999
) -> tuple[float, float]:
    """Empirical-quantile window: below it pre-asymptotic curvature biases the
    slope, above it counting noise dominates."""
    levels, probs = ccdf
    lo_idx = int(np.searchsorted(-probs, -(1.0 - lo_q)))
    hi_idx = int(np.searchsorted(-probs, -(1.0 - hi_q)))
    lo_idx = min(lo_idx, len(levels) - 1)
    hi_idx = min(hi_idx, len(levels) - 1)
    return float(levels[lo_idx]), float(levels[hi_idx])


def fit_decay(
    ccdf: tuple[np.ndarray, np.ndarray],
    window: tuple[float, float],
    mu: float | None = None,
    node: int | None = None,
) -> TailFit:
    """OLS fit of log P(L >= z) against z inside the window.

    When ``mu`` is supplied the polynomial prefactor is subtracted before the
    fit; otherwise it is estimated as a second regressor on log z.  Returns
    the slope magnitude as ``alpha_hat`` with its standard error.
    """
    levels = np.asarray(ccdf[0], dtype=float)
    probs = np.asarray(ccdf[1], dtype=float)
    z_lo, z_hi = window
    if not z_lo < z_hi:
        raise ValueError("fit window must satisfy z_lo < z_hi")
    keep = (levels >= z_lo) & (levels <= z_hi) & (probs > 0.0)
    if mu is None or mu != 0.0:
        # log z appears either as compensation or as a regressor
        keep &= levels > 0.0
    z = levels[keep]
    if z.size < 5:
        raise InsufficientTail(f"only {z.size} positive-probability levels inside the window")
    logp = np.log(probs[keep])

    if mu is None:
        design = np.column_stack([np.ones_like(z), -z, np.log(z)])
        coef, *_ = np.linalg.lstsq(design, logp, rcond=None)
        intercept, alpha_hat, mu_hat = float(coef[0]), float(coef[1]), float(coef[2])
        resid = logp - design @ coef
        dof = max(z.size - 3, 1)
        zc = z - z.mean()
        stderr = math.sqrt(float(resid @ resid) / dof / float(zc @ zc))
        return TailFit(alpha_hat, intercept, stderr, window, int(z.size), mu_hat, node)

    y = logp - mu * np.log(z)
    zc = z - z.mean()
    slope = float(zc @ (y - y.mean())) / float(zc @ zc)
    intercept = float(y.mean() - slope * z.mean())
    resid = y - (intercept + slope * z)
    dof = max(z.size - 2, 1)
    stderr = math.sqrt(float(resid @ resid) / dof / float(zc @ zc))
    return TailFit(-slope, intercept, stderr, window, int(z.size), mu, node)


def tail_dependence(
    acc: StationaryAccumulator, pair: tuple[int, int], levels=None
) -> DependenceProfile:
    """Joint exceedance at shared levels divided by the smaller marginal mass."""
    if acc.steps == 0:
        raise EmptyWindow("no accumulated steps")
    pair = tuple(sorted(int(n) for n in pair))
    try:
        p = PAIRS.index(pair)
    except ValueError:
        raise ValueError(f"pair must be one of {PAIRS}, got {pair}") from None
    stored = acc.config.pair_levels[p]
    if levels is None:
        levels = stored
    levels = tuple(float(t) for t in levels)
    idx = [stored.index(t) for t in levels]

    joint = tuple(float(acc.pair_joint[p][i]) / acc.steps for i in idx)
    margin_a = tuple(acc.exceedance_probability(pair[0], t) for t in levels)
    margin_b = tuple(acc.exceedance_probability(pair[1], t) for t in levels)
    ratios = []
    for j, ma, mb in zip(joint, margin_a, margin_b):
        denom = min(ma, mb)
        ratios.append(j / denom if denom > 0.0 else math.nan)
    return DependenceProfile(
        pair=pair,
        levels=levels,
        ratios=tuple(ratios),
        joint=joint,
        margins=(margin_a, margin_b),
    )


def factorization_table(acc: StationaryAccumulator) -> dict[str, np.ndarray]:
    """Triple exceedance next to the product of marginal exceedances, per threshold row.

    Ratio entries are NaN beyond the resolvable tail (zero product mass).
    """
    if acc.steps == 0:
        raise EmptyWindow("no accumulated steps")
    rows = np.asarray(acc.config.triple_thresholds, dtype=float).reshape(-1, 3)
    joint = acc.triple_joint / acc.steps
    product = np.empty(len(rows))
    for r, row in enumerate(rows):
        product[r] = math.prod(acc.exceedance_probability(n + 1, row[n]) for n in range(3))
    ratios = np.full(len(rows), np.nan)
    mask = product > 0.0
    ratios[mask] = joint[mask] / product[mask]
    return {"thresholds": rows, "joint": joint, "product": product, "ratio": ratios}


def factorization_ratio(acc: StationaryAccumulator, prediction=None, levels=None) -> np.ndarray:
    """Ratios of joint over product-of-marginals exceedance at the accumulated rows.

    ``prediction`` and ``levels`` (quantiles) select a subset of rows by
    matching the thresholds the planner would build from the prediction;
    by default all accumulated rows are returned.
    """
    table = factorization_table(acc)
    if prediction is None or levels is None:
        return table["ratio"]
    alphas = getattr(prediction, "alphas", None) or tuple(p.alpha for p in prediction)
    wanted = []
    rows = table["thresholds"]
    for q in levels:
        target = np.asarray(quantile_thresholds(alphas, q))
        match = np.nonzero(np.all(np.isclose(rows, target, rtol=1e-12, atol=0.0), axis=1))[0]
        if match.size == 0:
            raise ValueError(f"no accumulated threshold row for quantile {q}")
        wanted.append(int(match[0]))
    return table["ratio"][wanted]


def quantile_thresholds(alphas, q: float) -> tuple[float, ...]:
    """Per-node thresholds at predicted quantile q on the exponential scale."""
    if not 0.0 <= q < 1.0:
        raise ValueError("quantile must lie in [0, 1)")
    if q == 0.0:
        return tuple(0.0 for _ in alphas)
    return tuple(-math.log(1.0 - q) / a for a in alphas)


def standard_gumbel_cdf(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.exp(-np.asarray(x, dtype=float)))


def gumbel_block_maxima(block_maxima) -> float:
    """Sup-distance between moment-standardized block maxima and the standard Gumbel.

    Standardization is by moment matching (scale = sample std * sqrt(6)/pi,
    location = mean - Euler-gamma * scale) rather than a full extreme-value
    fit; adequate for a domain-of-attraction sanity check.
    """
    maxima = np.sort(np.asarray(block_maxima, dtype=float))
    n = maxima.size
    if n < 20:
        raise InsufficientBlocks(f"need at least 20 blocks, got {n}")
    scale = maxima.std(ddof=1) * math.sqrt(6.0) / math.pi
    loc = maxima.mean() - EULER_GAMMA * scale
    cdf = standard_gumbel_cdf((maxima - loc) / scale)
    grid = np.arange(1, n + 1) / n
    return float(np.max(np.maximum(np.abs(grid - cdf), np.abs(grid - 1.0 / n - cdf))))
