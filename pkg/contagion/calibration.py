"""
Estimating the coupling γ = αβ from bond prices and the equity of each
asset's dominant holders.

Over a window long enough for the system to settle, the second-order terms
drop out and δp_μ/p_μ ≈ γ δE*_μ/E*_μ, where E*_μ is the summed stock price
of the asset's dominant holders. Relative changes are measured with the
symmetric return (x_end - x_start) / ((x_end + x_start) / 2).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import CalibrationError, NetworkFormatError

logger = logging.getLogger(__name__)

PANEL_COLUMNS = ["date", "series_id", "series_type", "value"]
SERIES_TYPES = ("bond", "equity")


class Regime(str, Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    INDETERMINATE = "Indeterminate"


@dataclass
class PricePanel:
    """
    Bond prices and equity proxies per asset on a shared date index.

    Both frames are indexed by date with one column per asset id.
    """
    bond_price: pd.DataFrame
    equity_proxy: pd.DataFrame
    smoothing_days: Optional[int] = None

    def __post_init__(self):
        if self.bond_price.empty or self.equity_proxy.empty:
            raise CalibrationError("price panel is empty")
        if not self.bond_price.index.equals(self.equity_proxy.index):
            raise CalibrationError("bond and equity series are not aligned on dates")
        if list(self.bond_price.columns) != list(self.equity_proxy.columns):
            raise CalibrationError("bond and equity series cover different assets")
        if not self.bond_price.index.is_monotonic_increasing or not self.bond_price.index.is_unique:
            raise CalibrationError("dates must be strictly increasing")
        for name, frame in (("bond", self.bond_price), ("equity", self.equity_proxy)):
            values = frame.to_numpy(dtype=float)
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise CalibrationError(f"{name} prices must be finite and strictly positive")
        if self.smoothing_days is not None and self.smoothing_days < 1:
            raise CalibrationError("smoothing window must be at least one day")

    @property
    def dates(self) -> List:
        return list(self.bond_price.index)

    @property
    def asset_ids(self) -> List[str]:
        return list(self.bond_price.columns)

    def smoothed(self) -> Tuple[pd.DataFrame, pd.DataFrame]:
        """Series after the optional trailing moving average."""
        if not self.smoothing_days:
            return self.bond_price, self.equity_proxy
        window = self.smoothing_days
        return (self.bond_price.rolling(window, min_periods=1).mean(),
                self.equity_proxy.rolling(window, min_periods=1).mean())


@dataclass
class GammaEstimate:
    """Per-asset γ over one window with its cross-asset mean and spread."""
    window: Tuple[object, object]
    per_asset: Dict[str, float] = field(default_factory=dict)
    mean: float = float("nan")
    std: float = float("nan")
    flag: Optional[str] = None


def load_panel(path, smoothing_days: Optional[int] = None) -> PricePanel:
    """Read a long-format panel CSV: date,series_id,series_type,value."""
    path = str(path)
    try:
        frame = pd.read_csv(path, encoding="utf-8", skipinitialspace=True)
    except FileNotFoundError:
        raise NetworkFormatError("file not found", path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise NetworkFormatError(str(e), path)
    if list(frame.columns) != PANEL_COLUMNS:
        raise NetworkFormatError(f"expected header {','.join(PANEL_COLUMNS)}", path, 1)

    bad_type = ~frame["series_type"].isin(SERIES_TYPES)
    if bad_type.any():
        line = int(np.flatnonzero(bad_type.to_numpy())[0]) + 2
        raise NetworkFormatError("series_type must be bond or equity", path, line)
    values = pd.to_numeric(frame["value"], errors="coerce")
    if values.isna().any():
        line = int(np.flatnonzero(values.isna().to_numpy())[0]) + 2
        raise NetworkFormatError("cannot parse value", path, line)
    dates = pd.to_datetime(frame["date"], errors="coerce")
    if dates.isna().any():
        line = int(np.flatnonzero(dates.isna().to_numpy())[0]) + 2
        raise NetworkFormatError("cannot parse date", path, line)
    frame = frame.assign(date=dates, value=values)
    if frame.duplicated(["date", "series_id", "series_type"]).any():
        raise CalibrationError(f"{path}: duplicate observation for a date and series")

    wide = frame.pivot(index="date", columns=["series_type", "series_id"], values="value").sort_index()
    if "bond" not in wide.columns.get_level_values(0) or "equity" not in wide.columns.get_level_values(0):
        raise CalibrationError(f"{path}: panel needs both bond and equity series")
    bonds, equities = wide["bond"], wide["equity"]
    assets = sorted(set(bonds.columns) & set(equities.columns))
    missing = sorted(set(bonds.columns) ^ set(equities.columns))
    if missing:
        logger.warning("Series without a bond/equity partner ignored: %s", ", ".join(map(str, missing)))
    bonds, equities = bonds[assets], equities[assets]
    if bonds.isna().any().any() or equities.isna().any().any():
        raise CalibrationError(f"{path}: series are not aligned on the same dates")
    bonds.columns.name = equities.columns.name = None
    return PricePanel(bonds, equities, smoothing_days)


def symmetric_return(x_start: float, x_end: float) -> float:
    """(x_end - x_start) / ((x_end + x_start) / 2); lies in (-2, 2)."""
    if not (x_start > 0 and x_end > 0):
        raise CalibrationError(f"symmetric return needs positive prices, got {x_start}, {x_end}")
    return (x_end - x_start) / ((x_end + x_start) / 2.0)


def _symmetric_returns(start: np.ndarray, end: np.ndarray) -> np.ndarray:
    return (end - start) / ((end + start) / 2.0)


def estimate_gamma(panel: PricePanel, window_days: int = 84, step_days: int = 1,
                   floor: float = 1e-3) -> List[GammaEstimate]:
    """
    γ_μ = r(p_μ) / r(E*_μ) for every rolling window of `window_days`
    observations, advancing `step_days` at a time.

    An asset is left out of a window when |r(E*_μ)| < floor; a window that
    loses every asset is still reported, empty and flagged.
    """
    if window_days < 2:
        raise CalibrationError("window must span at least two observations")
    if step_days < 1:
        raise CalibrationError("window step must be at least one observation")
    bonds, equities = panel.smoothed()
    n = len(bonds.index)
    if n < window_days:
        raise CalibrationError(f"panel has {n} observations, fewer than one window of {window_days}")

    p = bonds.to_numpy(dtype=float)
    e = equities.to_numpy(dtype=float)
    starts = np.arange(0, n - window_days + 1, step_days)
    ends = starts + window_days - 1
    r_p = _symmetric_returns(p[starts], p[ends])
    r_e = _symmetric_returns(e[starts], e[ends])

    estimates = []
    dates = bonds.index
    for k, (s, t) in enumerate(zip(starts, ends)):
        keep = np.abs(r_e[k]) >= floor
        estimate = GammaEstimate(window=(dates[s], dates[t]))
        if not keep.any():
            estimate.flag = "all_assets_dropped"
            logger.warning("Window %s..%s: every asset below the equity-return floor", dates[s], dates[t])
            estimates.append(estimate)
            continue
        gammas = r_p[k][keep] / r_e[k][keep]
        estimate.per_asset = {a: float(g) for a, g in zip(np.asarray(panel.asset_ids)[keep], gammas)}
        estimate.mean = float(np.mean(gammas))
        estimate.std = float(np.std(gammas))
        estimates.append(estimate)
    return estimates


def classify_regime(estimate: GammaEstimate) -> Regime:
    """Stable if mean + std < 1, Unstable if mean - std > 1, else Indeterminate."""
    if not estimate.per_asset and not np.isfinite(estimate.mean):
        return Regime.INDETERMINATE
    if estimate.mean + estimate.std < 1:
        return Regime.STABLE
    if estimate.mean - estimate.std > 1:
        return Regime.UNSTABLE
    return Regime.INDETERMINATE


def gamma_table(estimates: List[GammaEstimate]) -> pd.DataFrame:
    """Per-asset rows followed by a MEAN row for each window."""
    rows = []
    for est in estimates:
        start, end = (_date_text(d) for d in est.window)
        for asset_id, gamma in est.per_asset.items():
            rows.append((start, end, asset_id, gamma, np.nan))
        rows.append((start, end, "MEAN", est.mean, est.std))
    return pd.DataFrame(rows, columns=["window_start", "window_end", "asset_id", "gamma", "gamma_std"])


def _date_text(value) -> str:
    if isinstance(value, pd.Timestamp):
        return value.strftime("%Y-%m-%d")
    return str(value)
