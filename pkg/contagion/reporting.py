"""
Writers for simulation and experiment outputs.

Everything lands as UTF-8 CSV or JSON that plots straight into any tool;
the run manifest records enough to re-run a command from scratch.
"""

import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import networkx as nx
import numpy as np
import pandas as pd

from .analysis import BankRankReport, PhaseGrid, QuadrantOutcome, RewireTrial
from .dynamics import Trajectory
from .errors import ValidationError
from .models import HoldingsMatrix

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def _write_frame(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    frame.to_csv(path, index=False, encoding="utf-8", lineterminator="\n")
    return path


def _write_json(data: Dict, path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write("\n")
    return path


def _finite_or_none(value: float) -> Optional[float]:
    value = float(value)
    return value if np.isfinite(value) else None


# Trajectories

def price_table(traj: Trajectory) -> pd.DataFrame:
    """Long format t,asset_id,price over every sample."""
    times = np.repeat([s.t for s in traj.samples], len(traj.asset_ids))
    ids = np.tile(traj.asset_ids, len(traj.samples))
    prices = np.concatenate([s.p for s in traj.samples])
    return pd.DataFrame({"t": times, "asset_id": ids, "price": prices})


def equity_table(traj: Trajectory) -> pd.DataFrame:
    """Long format t,bank_id,equity over every sample."""
    times = np.repeat([s.t for s in traj.samples], len(traj.bank_ids))
    ids = np.tile(traj.bank_ids, len(traj.samples))
    equities = np.concatenate([s.e for s in traj.samples])
    return pd.DataFrame({"t": times, "bank_id": ids, "equity": equities})


def verdict_record(traj: Trajectory) -> Dict:
    return {
        "verdict": traj.verdict.value,
        "relaxation_time": _finite_or_none(traj.relaxation_time),
        "failed_banks": [{"id": bank_id, "t_fail": t} for bank_id, t in traj.failed_banks],
        "final_prices": {a: float(p) for a, p in zip(traj.asset_ids, traj.final.p)},
    }


def write_trajectory(traj: Trajectory, out_dir) -> List[Path]:
    """prices.csv, equities.csv and verdict.json for one run."""
    out_dir = Path(out_dir)
    return [
        _write_frame(price_table(traj), out_dir / "prices.csv"),
        _write_frame(equity_table(traj), out_dir / "equities.csv"),
        _write_json(verdict_record(traj), out_dir / "verdict.json"),
    ]


# Experiments

def bankrank_table(reports: Sequence[BankRankReport]) -> pd.DataFrame:
    rows = [
        (r.bank_id, r.rank_value, r.survival_equity_ratio, r.total_holdings,
         r.equity0, r.diversification, r.min_price, r.flag or "")
        for r in reports
    ]
    return pd.DataFrame(rows, columns=["bank_id", "rank_value", "survival_equity_ratio",
                                       "total_holdings", "equity0", "diversification", "min_price",
                                       "flag"])


def per_asset_rank_table(reports: Sequence[BankRankReport], asset_ids: Sequence[str]) -> pd.DataFrame:
    """Damage ratio per shocked bank and asset, one column per asset."""
    rows = [[r.bank_id] + [r.per_asset_rank.get(a, np.nan) for a in asset_ids] for r in reports]
    return pd.DataFrame(rows, columns=["bank_id"] + list(asset_ids))


def phase_table(grid: PhaseGrid) -> pd.DataFrame:
    return pd.DataFrame(list(grid.cells()),
                        columns=["alpha", "beta", "order_param", "relax_time", "verdict"])


def quadrant_table(outcomes: Sequence[QuadrantOutcome]) -> pd.DataFrame:
    rows = [(o.alpha, o.beta, o.verdict.value, o.failures, o.value_change) for o in outcomes]
    return pd.DataFrame(rows, columns=["alpha", "beta", "verdict", "failures", "value_change"])


def rewire_table(trials: Sequence[RewireTrial], asset_ids: Sequence[str]) -> pd.DataFrame:
    """One row per trial: verdict, worst-hit asset and every final price."""
    rows = []
    for t in trials:
        worst = asset_ids[int(np.argmin(t.final_prices))]
        rows.append([t.trial, t.verdict.value, worst] + [float(p) for p in t.final_prices])
    return pd.DataFrame(rows, columns=["trial", "verdict", "worst_hit"] + list(asset_ids))


def write_table(frame: pd.DataFrame, path) -> Path:
    return _write_frame(frame, path)


# Run manifest

@dataclass
class RunManifest:
    """What was run, on which inputs and with which settings."""
    command: str
    argv: List[str]
    params: Dict = field(default_factory=dict)
    config: Optional[Dict] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    tool_version: str = ""
    wall_clock: str = ""
    outputs: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return asdict(self)


def file_digest(path) -> str:
    """sha256 of a file's bytes."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, argv: Sequence[str], params: Dict, config: Optional[Dict],
                   inputs: Sequence, seed: Optional[int], outputs: Sequence[Path]) -> RunManifest:
    from . import __version__

    return RunManifest(
        command=command,
        argv=list(argv),
        params=params,
        config=config,
        inputs={str(p): file_digest(p) for p in inputs},
        seed=seed,
        tool_version=f"contagion {__version__} (python {platform.python_version()})",
        wall_clock=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        outputs=[Path(p).name for p in outputs],
    )


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    return _write_json(manifest.to_dict(), Path(out_dir) / MANIFEST_NAME)


def read_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    try:
        return RunManifest(**data)
    except TypeError as e:
        raise ValidationError(f"{path}: not a run manifest ({e})")


# Network report

def holder_concentration(net: HoldingsMatrix, top: int = 4) -> Dict[str, float]:
    """Share of each asset held by its `top` largest holders."""
    graph = net.to_graph()
    shares = {}
    for asset in net.assets:
        weights = sorted((d["weight"] for _, _, d in graph.edges(asset.id, data=True)), reverse=True)
        shares[asset.id] = float(sum(weights[:top]) / asset.total0)
    return shares


def network_report(net: HoldingsMatrix, output_file) -> Path:
    """Plain-text summary of a holdings network."""
    graph = net.to_graph()
    bank_nodes = [n for n, d in graph.nodes(data=True) if d["kind"] == "bank"]
    holdings = net.holdings()
    equity = net.equity0()
    leverage = holdings / equity

    lines = []
    lines.append("=" * 80)
    lines.append("BANK-ASSET NETWORK REPORT")
    lines.append("=" * 80)
    lines.append("")
    lines.append("SUMMARY STATISTICS")
    lines.append("-" * 80)
    lines.append(f"Banks:                       {net.n_banks}")
    lines.append(f"Assets:                      {net.n_assets}")
    lines.append(f"Holdings (edges):            {graph.number_of_edges()}")
    lines.append(f"Density:                     {nx.bipartite.density(graph, bank_nodes):.3f}")
    lines.append(f"Total Holdings:              {holdings.sum():.6g}")
    lines.append(f"Total Equity:                {equity.sum():.6g}")
    lines.append(f"Median Leverage (A/E):       {np.median(leverage):.3f}")
    lines.append(f"Max Leverage (A/E):          {leverage.max():.3f}")
    if net.dropped_banks:
        lines.append(f"Dropped Banks:               {len(net.dropped_banks)}")
    lines.append("")

    lines.append("ASSETS")
    lines.append("-" * 80)
    concentration = holder_concentration(net)
    for asset in net.assets:
        holders = graph.degree(asset.id)
        lines.append(f"{asset.id}: total {asset.total0:.6g}, {holders} holders, "
                     f"top-4 share {concentration[asset.id]:.1%}")
    lines.append("")

    lines.append("LARGEST HOLDERS")
    lines.append("-" * 80)
    order = np.argsort(-holdings, kind="stable")[:10]
    degrees = net.diversification()
    for rank, i in enumerate(order, 1):
        bank = net.banks[i]
        lines.append(f"{rank}. {bank.id} (holdings {holdings[i]:.6g}, equity {bank.equity0:.6g}, "
                     f"{degrees[bank.id]} assets)")
    lines.append("")

    lines.append("DIVERSIFICATION")
    lines.append("-" * 80)
    counts = pd.Series(list(degrees.values())).value_counts().sort_index()
    for degree, count in counts.items():
        lines.append(f"  {degree} asset(s): {count} banks")
    lines.append("")

    output_file = Path(output_file)
    with open(output_file, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines))
    return output_file
