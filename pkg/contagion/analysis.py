"""
System-level experiments built on the dynamics engine: per-bank shocks,
survival thresholds and BankRank, (α, β) phase diagrams, contrarian
quadrants and network rewiring.

Sweeps run their items through a joblib worker pool and return results in
input order, so the output does not depend on the number of workers.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import spearmanr

from .dynamics import IntegratorConfig, Verdict, run
from .errors import ContagionError, ValidationError
from .models import HoldingsMatrix, ModelParams, ShockSpec
from .seeding import derive_rng

logger = logging.getLogger(__name__)

LOWER_BRACKET = 1e-8
UPPER_BRACKET = 1e3
BISECTION_RTOL = 1e-3
MAX_BISECTIONS = 40


def _pool(jobs: int) -> Parallel:
    return Parallel(n_jobs=jobs)


# Shocking individual banks

class ShockOutcome(NamedTuple):
    """Result of shocking one bank."""
    bank_id: str
    final_prices: np.ndarray
    verdict: Verdict
    failures: int = 0
    error: Optional[str] = None


def _shock_one(net, params, bank_id, magnitude, cfg) -> ShockOutcome:
    try:
        traj = run(net, params, ShockSpec(bank_id, magnitude), cfg)
    except ContagionError as e:
        logger.warning("Shocking %s failed: %s", bank_id, e)
        return ShockOutcome(bank_id, np.full(net.n_assets, np.nan), Verdict.TIMEOUT, 0, str(e))
    return ShockOutcome(bank_id, traj.final_prices(), traj.verdict, len(traj.failed_banks))


def shock_each_bank(net: HoldingsMatrix, params: ModelParams, magnitude: float = -0.1,
                    cfg: Optional[IntegratorConfig] = None, jobs: int = 1) -> List[ShockOutcome]:
    """One run per bank, each shocking exactly that bank."""
    logger.info("Shocking each of %d banks with s=%g", net.n_banks, magnitude)
    return _pool(jobs)(
        delayed(_shock_one)(net, params, bank_id, magnitude, cfg) for bank_id in net.bank_ids
    )


def max_price_spread(outcomes: Sequence[ShockOutcome]) -> float:
    """Largest difference in any final price between two shocked banks."""
    prices = np.array([o.final_prices for o in outcomes if o.error is None])
    if len(prices) < 2:
        return 0.0
    return float(np.max(prices.max(axis=0) - prices.min(axis=0)))


# Survival threshold and BankRank

@dataclass(frozen=True)
class SurvivalThreshold:
    """Smallest multiple λ* of E_i(0) with which bank i survives the trigger."""
    value: float
    just_below: float
    flag: Optional[str] = None
    iterations: int = 0


def _target_fails(net: HoldingsMatrix, params, index: int, multiple: float, trigger, cfg) -> bool:
    trial = net.with_equity(index, multiple * net.banks[index].equity0)
    traj = run(trial, params, trigger, cfg)
    return any(bank_id == net.banks[index].id for bank_id, _ in traj.failed_banks)


def survival_threshold(net: HoldingsMatrix, params: ModelParams, target: str, trigger: ShockSpec,
                       cfg: Optional[IntegratorConfig] = None) -> SurvivalThreshold:
    """
    Bisect the equity multiple λ ∈ [1e-8, 1e3] at which `target` stops failing
    under the trigger shock.

    The bracket spans eleven decades, so midpoints are geometric. Below the
    returned value the bank fails during the run, at or above it survives.
    """
    i = net.bank_index(target)
    if net.bank_index(trigger.target_bank) == i:
        raise ValidationError("trigger shock must hit a bank other than the target")

    def fails(multiple: float) -> bool:
        return _target_fails(net, params, i, multiple, trigger, cfg)

    lo, hi = LOWER_BRACKET, UPPER_BRACKET
    if not fails(lo):
        logger.info("Bank %s never fails inside the bracket", target)
        return SurvivalThreshold(lo, lo, "never_fails", 1)
    if fails(hi):
        logger.info("Bank %s fails even at %g x equity", target, hi)
        return SurvivalThreshold(hi, hi, "always_fails", 2)

    iterations = 2
    while hi / lo - 1.0 > BISECTION_RTOL and iterations < MAX_BISECTIONS:
        mid = np.sqrt(lo * hi)
        if fails(mid):
            lo = mid
        else:
            hi = mid
        iterations += 1
    return SurvivalThreshold(hi, hi * (1.0 - 10.0 * BISECTION_RTOL), None, iterations)


@dataclass
class BankRankReport:
    """Systemic importance of one bank; smaller rank_value means more damage."""
    bank_id: str
    rank_value: float
    survival_equity_ratio: float
    final_holdings: float
    total_holdings: float
    equity0: float
    diversification: int = 0
    per_asset_rank: Dict[str, float] = field(default_factory=dict)
    flag: Optional[str] = None
    min_price: float = float("nan")


def fortify_failing(net: HoldingsMatrix, params: ModelParams, trigger: ShockSpec,
                    cfg: Optional[IntegratorConfig] = None) -> HoldingsMatrix:
    """Raise every bank failing under the baseline trigger to E_i(0) = Σ_μ A_{iμ}(0)."""
    baseline = run(net, params, trigger, cfg)
    holdings = net.holdings()
    for bank_id, _ in baseline.failed_banks:
        i = net.bank_index(bank_id)
        net = net.with_equity(i, max(net.banks[i].equity0, float(holdings[i])))
    if baseline.failed_banks:
        logger.info("Fortified %d bank(s): %s", len(baseline.failed_banks),
                    ", ".join(b for b, _ in baseline.failed_banks))
    return net


def _alternate_trigger(net: HoldingsMatrix, trigger: ShockSpec, bank_id: str) -> ShockSpec:
    """The trigger shock, moved to the largest other holder if it would hit bank_id."""
    if trigger.target_bank != bank_id:
        return trigger
    holdings = net.holdings()
    order = np.argsort(-holdings, kind="stable")
    for i in order:
        if net.banks[i].id != bank_id:
            return ShockSpec(net.banks[i].id, trigger.magnitude)
    raise ValidationError("BankRank needs at least two banks")


def _rank_one(net: HoldingsMatrix, params, bank_id, trigger, cfg, diversification) -> BankRankReport:
    i = net.bank_index(bank_id)
    bank = net.banks[i]
    holding = float(net.holdings()[i])
    trigger = _alternate_trigger(net, trigger, bank_id)
    try:
        threshold = survival_threshold(net, params, bank_id, trigger, cfg)
        trial = net.with_equity(i, threshold.just_below * bank.equity0)
        traj = run(trial, params, trigger, cfg)
    except ContagionError as e:
        logger.warning("BankRank for %s failed: %s", bank_id, e)
        return BankRankReport(bank_id, float("nan"), float("nan"), float("nan"), holding,
                              bank.equity0, diversification, {}, f"error: {e}")

    first, last = traj.samples[0], traj.final
    per_asset = last.asset_values() / first.asset_values()
    report = BankRankReport(
        bank_id=bank_id,
        rank_value=traj.value_ratio(),
        survival_equity_ratio=threshold.value,
        final_holdings=last.holdings_value(),
        total_holdings=holding,
        equity0=bank.equity0,
        diversification=diversification,
        per_asset_rank={a: float(r) for a, r in zip(net.asset_ids, per_asset)},
        flag=threshold.flag,
        min_price=float(min(s.p.min() for s in traj.samples)),
    )
    if params.alpha >= 0 and params.beta >= 0 and trigger.magnitude < 0:
        if not (0.0 <= report.rank_value <= 1.0 + 1e-12):
            logger.warning("BankRank of %s outside [0, 1]: %g", bank_id, report.rank_value)
            report.flag = "out_of_bounds"
    return report


def bank_rank(net: HoldingsMatrix, params: ModelParams, trigger: ShockSpec,
              cfg: Optional[IntegratorConfig] = None, fortify: bool = True,
              jobs: int = 1, banks: Optional[Iterable[str]] = None) -> List[BankRankReport]:
    """
    Rank banks by the damage their just-below-survival failure causes.

    Each bank in turn gets an equity just below its survival threshold, the
    trigger bank is shocked and R^i = Σ(A·p)(t_f) / Σ(A·p)(0) is recorded.
    Reports come back sorted ascending by rank value.
    """
    if fortify:
        net = fortify_failing(net, params, trigger, cfg)
    degrees = net.diversification()
    ids = list(banks) if banks is not None else net.bank_ids
    logger.info("Ranking %d banks at alpha=%g beta=%g", len(ids), params.alpha, params.beta)
    reports = _pool(jobs)(
        delayed(_rank_one)(net, params, bank_id, trigger, cfg, degrees[bank_id]) for bank_id in ids
    )
    return sorted(reports, key=lambda r: (np.nan_to_num(r.rank_value, nan=np.inf), r.bank_id))


def holdings_correlation(reports: Sequence[BankRankReport]) -> float:
    """Spearman correlation between rank values and total holdings."""
    values = [(r.rank_value, r.total_holdings) for r in reports if np.isfinite(r.rank_value)]
    ranks, holdings = zip(*values)
    return float(spearmanr(ranks, holdings).correlation)


def rank_correlation(first: Sequence[BankRankReport], second: Sequence[BankRankReport]) -> float:
    """Spearman correlation of two rankings over their common banks."""
    other = {r.bank_id: r.rank_value for r in second}
    pairs = [(r.rank_value, other[r.bank_id]) for r in first if r.bank_id in other]
    x, y = zip(*pairs)
    return float(spearmanr(x, y).correlation)


def top_damaging_banks(reports: Sequence[BankRankReport], asset_id: str, n: int = 10) -> List[str]:
    """Banks whose failure leaves the least value in one asset."""
    scored = [r for r in reports if asset_id in r.per_asset_rank]
    scored.sort(key=lambda r: (r.per_asset_rank[asset_id], r.bank_id))
    return [r.bank_id for r in scored[:n]]


# Phase diagrams

@dataclass
class PhaseGrid:
    """Order parameter, relaxation time and verdict on an (α, β) lattice."""
    alphas: np.ndarray
    betas: np.ndarray
    order_param: np.ndarray
    relax_time: np.ndarray
    verdict: np.ndarray
    failures: np.ndarray
    errors: Dict[tuple, str] = field(default_factory=dict)

    def cells(self):
        """Iterate (alpha, beta, order_param, relax_time, verdict) row by row."""
        for i, j in itertools.product(range(len(self.alphas)), range(len(self.betas))):
            yield (self.alphas[i], self.betas[j], self.order_param[i, j],
                   self.relax_time[i, j], self.verdict[i, j])


def transition_gamma(magnitude: float) -> float:
    """Location γ = 1 + f₀ of the stability boundary for a shock of size f₀."""
    return 1.0 + magnitude


def _phase_cell(net, alpha, beta, shock, cfg, tau_a, tau_b):
    params = ModelParams(alpha, beta, tau_a, tau_b)
    try:
        traj = run(net, params, shock, cfg)
    except ContagionError as e:
        return float("nan"), float("nan"), Verdict.TIMEOUT.value, 0, str(e)
    return (float(np.mean(traj.final_prices())), traj.relaxation_time, traj.verdict.value,
            len(traj.failed_banks), None)


def phase_diagram(net: HoldingsMatrix, alphas: Sequence[float], betas: Sequence[float],
                  shock: ShockSpec, cfg: Optional[IntegratorConfig] = None, jobs: int = 1,
                  tau_a: float = 1.0, tau_b: float = 1.0) -> PhaseGrid:
    """One run per (α, β) cell; the order parameter is the mean final price."""
    alphas, betas = np.asarray(alphas, dtype=float), np.asarray(betas, dtype=float)
    if alphas.size == 0 or betas.size == 0:
        raise ValidationError("phase diagram grids must be non-empty")
    logger.info("Phase diagram: %d x %d cells", alphas.size, betas.size)
    cells = list(itertools.product(range(alphas.size), range(betas.size)))
    results = _pool(jobs)(
        delayed(_phase_cell)(net, alphas[i], betas[j], shock, cfg, tau_a, tau_b) for i, j in cells
    )
    shape = (alphas.size, betas.size)
    grid = PhaseGrid(alphas, betas, np.zeros(shape), np.zeros(shape),
                     np.empty(shape, dtype=object), np.zeros(shape, dtype=int))
    for (i, j), (order, relax, verdict, failures, error) in zip(cells, results):
        grid.order_param[i, j] = order
        grid.relax_time[i, j] = relax
        grid.verdict[i, j] = verdict
        grid.failures[i, j] = failures
        if error is not None:
            grid.errors[(i, j)] = error
            logger.warning("Cell alpha=%g beta=%g failed: %s", alphas[i], betas[j], error)
    return grid


class QuadrantOutcome(NamedTuple):
    """One sign combination of (α, β) at fixed magnitudes."""
    alpha: float
    beta: float
    verdict: Verdict
    failures: int
    value_change: float


def _quadrant_one(net, params, shock, cfg) -> QuadrantOutcome:
    traj = run(net, params, shock, cfg)
    return QuadrantOutcome(params.alpha, params.beta, traj.verdict,
                           len(traj.failed_banks), traj.value_ratio() - 1.0)


def quadrant_study(net: HoldingsMatrix, magnitude: float, shock: ShockSpec,
                   cfg: Optional[IntegratorConfig] = None, jobs: int = 1,
                   tau_a: float = 1.0, tau_b: float = 1.0) -> List[QuadrantOutcome]:
    """Run (+,+), (-,+), (-,-), (+,-) at |α| = |β| = magnitude."""
    signs = [(1, 1), (-1, 1), (-1, -1), (1, -1)]
    return _pool(jobs)(
        delayed(_quadrant_one)(net, ModelParams(sa * magnitude, sb * magnitude, tau_a, tau_b), shock, cfg)
        for sa, sb in signs
    )


# Rewiring

class RewireTrial(NamedTuple):
    trial: int
    final_prices: np.ndarray
    verdict: Verdict


def rewire(net: HoldingsMatrix, rng: np.random.Generator, mode: str = "column") -> HoldingsMatrix:
    """
    Permute which bank holds what while keeping every asset total.

    "column" draws an independent bank permutation per asset; "global"
    moves whole portfolios between banks. Equities stay with the banks.
    """
    weights = np.array(net.weights)
    n = net.n_banks
    if mode == "column":
        for mu in range(net.n_assets):
            weights[:, mu] = weights[rng.permutation(n), mu]
    elif mode == "global":
        weights = weights[rng.permutation(n)]
    else:
        raise ValidationError(f"unknown rewiring mode '{mode}'")
    return net.with_weights(weights)


def _rewire_one(net, params, shock, cfg, seed, trial, mode) -> RewireTrial:
    rewired = rewire(net, derive_rng(seed, "rewire", trial), mode)
    traj = run(rewired, params, shock, cfg)
    return RewireTrial(trial, traj.final_prices(), traj.verdict)


def rewire_experiment(net: HoldingsMatrix, params: ModelParams, shock: ShockSpec,
                      cfg: Optional[IntegratorConfig] = None, seed: int = 0, trials: int = 20,
                      mode: str = "column", jobs: int = 1) -> List[RewireTrial]:
    """Rerun the same shock on `trials` independently rewired networks."""
    if trials < 1:
        raise ValidationError("trials must be at least 1")
    return _pool(jobs)(
        delayed(_rewire_one)(net, params, shock, cfg, seed, trial, mode) for trial in range(trials)
    )


def worst_hit_assets(trials: Sequence[RewireTrial], asset_ids: Sequence[str]) -> List[str]:
    """Asset with the lowest final price in each trial."""
    return [asset_ids[int(np.argmin(t.final_prices))] for t in trials]
