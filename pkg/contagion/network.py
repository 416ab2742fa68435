"""
Loading and saving bank-asset networks as CSV file pairs.

holdings CSV: bank_id,asset_id,amount
banks CSV:    bank_id,equity,cash_minus_liability   (one of the last two may be empty)
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import NetworkFormatError, ValidationError
from .models import EQUITY_RTOL, AssetRecord, BankRecord, HoldingsMatrix

logger = logging.getLogger(__name__)

HOLDINGS_COLUMNS = ["bank_id", "asset_id", "amount"]
BANKS_COLUMNS = ["bank_id", "equity", "cash_minus_liability"]


def _read_table(path, columns: List[str]) -> pd.DataFrame:
    """Read a CSV as strings and check its header."""
    path = str(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8",
                            skipinitialspace=True)
    except FileNotFoundError:
        raise NetworkFormatError("file not found", path)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise NetworkFormatError(str(e), path)
    except pd.errors.EmptyDataError:
        raise NetworkFormatError("file is empty", path)
    header = [c.strip() for c in frame.columns]
    if header != columns:
        raise NetworkFormatError(f"expected header {','.join(columns)}, got {','.join(header)}", path, 1)
    frame.columns = columns
    return frame


def _parse_number(text: str, path: str, line: int, column: str, required: bool = True) -> Optional[float]:
    """Parse one numeric CSV cell; empty cells give None when allowed."""
    text = text.strip()
    if not text:
        if required:
            raise NetworkFormatError(f"missing value for {column}", path, line)
        return None
    try:
        value = float(text)
    except ValueError:
        raise NetworkFormatError(f"cannot parse {column} value '{text}'", path, line)
    if not np.isfinite(value):
        raise NetworkFormatError(f"non-finite {column} value '{text}'", path, line)
    return value


def _read_holdings(path) -> Tuple[Dict[Tuple[str, str], float], List[str], Dict[str, int]]:
    """Holdings keyed by (bank, asset), asset ids in file order, first line per bank."""
    frame = _read_table(path, HOLDINGS_COLUMNS)
    amounts: Dict[Tuple[str, str], float] = {}
    asset_order: List[str] = []
    first_line: Dict[str, int] = {}
    for row_number, row in enumerate(frame.itertuples(index=False)):
        line = row_number + 2
        bank_id, asset_id = row.bank_id.strip(), row.asset_id.strip()
        if not bank_id or not asset_id:
            raise NetworkFormatError("empty bank_id or asset_id", str(path), line)
        amount = _parse_number(row.amount, str(path), line, "amount")
        if amount < 0:
            raise ValidationError(f"{path}:{line}: negative holding {amount} for {bank_id}/{asset_id}")
        key = (bank_id, asset_id)
        if key in amounts:
            raise ValidationError(f"{path}:{line}: duplicate holding for bank {bank_id}, asset {asset_id}")
        amounts[key] = amount
        if asset_id not in asset_order:
            asset_order.append(asset_id)
        first_line.setdefault(bank_id, line)
    return amounts, asset_order, first_line


def _read_banks(path) -> List[Tuple[str, Optional[float], Optional[float], int]]:
    """Rows of (bank_id, equity, cash_minus_liability, line)."""
    frame = _read_table(path, BANKS_COLUMNS)
    rows = []
    seen = set()
    for row_number, row in enumerate(frame.itertuples(index=False)):
        line = row_number + 2
        bank_id = row.bank_id.strip()
        if not bank_id:
            raise NetworkFormatError("empty bank_id", str(path), line)
        if bank_id in seen:
            raise ValidationError(f"{path}:{line}: duplicate bank id {bank_id}")
        seen.add(bank_id)
        equity = _parse_number(row.equity, str(path), line, "equity", required=False)
        cash = _parse_number(row.cash_minus_liability, str(path), line, "cash_minus_liability", required=False)
        if equity is None and cash is None:
            raise NetworkFormatError("equity and cash_minus_liability are both empty", str(path), line)
        rows.append((bank_id, equity, cash, line))
    return rows


def load_network(holdings_csv, banks_csv) -> HoldingsMatrix:
    """
    Build a validated HoldingsMatrix from a holdings/banks CSV pair.

    Banks with non-positive equity or without holdings are dropped with a
    warning; so are assets nobody holds afterwards.
    """
    amounts, asset_order, first_line = _read_holdings(holdings_csv)
    bank_rows = _read_banks(banks_csv)

    known = {row[0] for row in bank_rows}
    for bank_id, line in first_line.items():
        if bank_id not in known:
            raise ValidationError(f"{holdings_csv}:{line}: bank {bank_id} missing from {banks_csv}")

    weights = np.zeros((len(bank_rows), len(asset_order)))
    asset_pos = {asset_id: mu for mu, asset_id in enumerate(asset_order)}
    bank_pos = {row[0]: i for i, row in enumerate(bank_rows)}
    for (bank_id, asset_id), amount in amounts.items():
        weights[bank_pos[bank_id], asset_pos[asset_id]] = amount

    banks: List[BankRecord] = []
    keep_rows: List[int] = []
    dropped: List[str] = []
    for i, (bank_id, equity, cash, line) in enumerate(bank_rows):
        holding = float(weights[i].sum())
        if equity is None:
            equity = holding + cash
        elif cash is None:
            cash = equity - holding
        else:
            scale = max(abs(equity), holding, abs(cash))
            if abs(holding + cash - equity) > EQUITY_RTOL * scale:
                raise ValidationError(
                    f"{banks_csv}:{line}: equity {equity} inconsistent with holdings {holding} "
                    f"+ cash_minus_liability {cash}"
                )
        if equity <= 0 or holding <= 0:
            dropped.append(bank_id)
            continue
        banks.append(BankRecord(bank_id, cash, equity))
        keep_rows.append(i)

    if dropped:
        logger.warning("Dropped %d bank(s) with non-positive equity or no holdings: %s",
                       len(dropped), ", ".join(dropped))
    if not banks:
        raise ValidationError("no bank with positive equity and holdings remains")

    weights = weights[keep_rows]
    totals = weights.sum(axis=0)
    keep_assets = [mu for mu in range(len(asset_order)) if totals[mu] > 0]
    if len(keep_assets) < len(asset_order):
        lost = [asset_order[mu] for mu in range(len(asset_order)) if mu not in keep_assets]
        logger.warning("Dropped %d asset(s) with no remaining holders: %s", len(lost), ", ".join(lost))
    weights = weights[:, keep_assets]
    assets = [AssetRecord(asset_order[mu], float(weights[:, k].sum())) for k, mu in enumerate(keep_assets)]

    net = HoldingsMatrix(tuple(banks), tuple(assets), weights, tuple(dropped))
    logger.info("Loaded network: %d banks x %d assets", net.n_banks, net.n_assets)
    return net


def save_network(net: HoldingsMatrix, holdings_csv, banks_csv) -> Tuple[Path, Path]:
    """Write the CSV pair load_network reads; zero holdings are omitted."""
    holdings_csv, banks_csv = Path(holdings_csv), Path(banks_csv)
    records = [
        (net.banks[i].id, net.assets[mu].id, float(net.weights[i, mu]))
        for i, mu in zip(*np.nonzero(net.weights))
    ]
    pd.DataFrame(records, columns=HOLDINGS_COLUMNS).to_csv(holdings_csv, index=False, encoding="utf-8")
    banks = [(b.id, b.equity0, b.cash_minus_liability) for b in net.banks]
    pd.DataFrame(banks, columns=BANKS_COLUMNS).to_csv(banks_csv, index=False, encoding="utf-8")
    return holdings_csv, banks_csv
