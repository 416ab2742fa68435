"""
Domain types for the bank-asset network and the dynamical state.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Tuple

import networkx as nx
import numpy as np

from .errors import ValidationError


EQUITY_RTOL = 1e-9
TOTAL_RTOL = 1e-12


def _frozen(array: np.ndarray, dtype=float) -> np.ndarray:
    """Copy an array and mark the copy read-only."""
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BankRecord:
    """A bank: equity and cash minus liabilities (c_i = C_i - L_i)."""
    id: str
    cash_minus_liability: float
    equity0: float


@dataclass(frozen=True)
class AssetRecord:
    """An asset with its normalized price and cached total holdings."""
    id: str
    total0: float
    price0: float = 1.0

    def __post_init__(self):
        if self.price0 != 1.0:
            raise ValidationError(f"asset {self.id}: price0 must be 1, got {self.price0}")
        if not self.total0 > 0:
            raise ValidationError(f"asset {self.id}: total holdings must be positive")


@dataclass(frozen=True, eq=False)
class HoldingsMatrix:
    """
    Weighted bipartite adjacency A_{iμ}: exposure of bank i to asset μ.

    Rows follow `banks`, columns follow `assets`. Banks removed during loading
    are listed in `dropped_banks`.
    """
    banks: Tuple[BankRecord, ...]
    assets: Tuple[AssetRecord, ...]
    weights: np.ndarray
    dropped_banks: Tuple[str, ...] = ()
    allow_idle_banks: bool = False

    def __post_init__(self):
        object.__setattr__(self, "banks", tuple(self.banks))
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "dropped_banks", tuple(self.dropped_banks))
        object.__setattr__(self, "weights", _frozen(self.weights))
        self._validate()

    def _validate(self):
        """Check shapes, signs, totals and the equity identity."""
        n, m = len(self.banks), len(self.assets)
        if n < 1 or m < 1:
            raise ValidationError("network needs at least one bank and one asset")
        if self.weights.shape != (n, m):
            raise ValidationError(f"weights shape {self.weights.shape} does not match {n} banks x {m} assets")
        if not np.all(np.isfinite(self.weights)):
            raise ValidationError("weights must be finite")
        if np.any(self.weights < 0):
            i, mu = np.argwhere(self.weights < 0)[0]
            raise ValidationError(
                f"negative holding for bank {self.banks[i].id}, asset {self.assets[mu].id}"
            )
        for kind, ids in (("bank", [b.id for b in self.banks]), ("asset", [a.id for a in self.assets])):
            if len(set(ids)) != len(ids):
                dupes = sorted({x for x in ids if ids.count(x) > 1})
                raise ValidationError(f"duplicate {kind} id(s): {', '.join(dupes)}")
        shared = sorted({b.id for b in self.banks} & {a.id for a in self.assets})
        if shared:
            raise ValidationError(f"id(s) used for both a bank and an asset: {', '.join(shared)}")

        column_sums = self.weights.sum(axis=0)
        for mu, asset in enumerate(self.assets):
            if abs(column_sums[mu] - asset.total0) > TOTAL_RTOL * asset.total0:
                raise ValidationError(
                    f"asset {asset.id}: cached total {asset.total0} differs from column sum {column_sums[mu]}"
                )

        rows = self.weights.sum(axis=1)
        for i, bank in enumerate(self.banks):
            if not bank.equity0 > 0:
                raise ValidationError(f"bank {bank.id}: equity must be positive, got {bank.equity0}")
            if rows[i] <= 0 and not self.allow_idle_banks:
                raise ValidationError(f"bank {bank.id} holds no assets")
            implied = rows[i] + bank.cash_minus_liability
            scale = max(abs(bank.equity0), rows[i], abs(bank.cash_minus_liability))
            if abs(implied - bank.equity0) > EQUITY_RTOL * scale:
                raise ValidationError(
                    f"bank {bank.id}: equity {bank.equity0} != holdings {rows[i]} + cash {bank.cash_minus_liability}"
                )

    @property
    def n_banks(self) -> int:
        return len(self.banks)

    @property
    def n_assets(self) -> int:
        return len(self.assets)

    @property
    def bank_ids(self) -> List[str]:
        return [b.id for b in self.banks]

    @property
    def asset_ids(self) -> List[str]:
        return [a.id for a in self.assets]

    def bank_index(self, bank_id: str) -> int:
        """Row index of a bank; raises ValidationError for unknown ids."""
        for i, bank in enumerate(self.banks):
            if bank.id == bank_id:
                return i
        raise ValidationError(f"unknown bank id: {bank_id}")

    def holdings(self) -> np.ndarray:
        """Total initial holdings value per bank (prices are 1 at t=0)."""
        return self.weights.sum(axis=1)

    def totals(self) -> np.ndarray:
        return np.array([a.total0 for a in self.assets])

    def equity0(self) -> np.ndarray:
        return np.array([b.equity0 for b in self.banks])

    def cash(self) -> np.ndarray:
        return np.array([b.cash_minus_liability for b in self.banks])

    def with_equity(self, index: int, equity: float) -> "HoldingsMatrix":
        """Copy of the network with bank `index` given a new initial equity."""
        bank = self.banks[index]
        holding = float(self.weights[index].sum())
        banks = list(self.banks)
        banks[index] = BankRecord(bank.id, equity - holding, equity)
        return replace(self, banks=tuple(banks))

    def with_weights(self, weights: np.ndarray, allow_idle_banks: bool = True) -> "HoldingsMatrix":
        """Copy with new holdings; equities are kept and c_i recomputed."""
        weights = np.asarray(weights, dtype=float)
        rows = weights.sum(axis=1)
        banks = tuple(
            BankRecord(b.id, b.equity0 - rows[i], b.equity0) for i, b in enumerate(self.banks)
        )
        assets = tuple(AssetRecord(a.id, float(weights[:, mu].sum())) for mu, a in enumerate(self.assets))
        return HoldingsMatrix(banks, assets, weights, self.dropped_banks, allow_idle_banks)

    def to_graph(self) -> nx.Graph:
        """Bipartite networkx view: banks on side 0, assets on side 1."""
        graph = nx.Graph()
        graph.add_nodes_from((b.id for b in self.banks), bipartite=0, kind="bank")
        graph.add_nodes_from((a.id for a in self.assets), bipartite=1, kind="asset")
        for i, mu in zip(*np.nonzero(self.weights)):
            graph.add_edge(self.banks[i].id, self.assets[mu].id, weight=float(self.weights[i, mu]))
        return graph

    def diversification(self) -> Dict[str, int]:
        """Number of distinct assets held by each bank."""
        graph = self.to_graph()
        return {b.id: graph.degree(b.id) for b in self.banks}


@dataclass(frozen=True)
class ModelParams:
    """Coupling constants and response times of the dynamics."""
    alpha: float
    beta: float
    tau_a: float = 1.0
    tau_b: float = 1.0

    def __post_init__(self):
        if not (self.tau_a > 0 and self.tau_b > 0):
            raise ValidationError("response times tau_a and tau_b must be positive")
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ValidationError("alpha and beta must be finite")

    def gamma(self) -> float:
        return self.alpha * self.beta

    def scaled(self, c: float) -> "ModelParams":
        """Same couplings with both response times multiplied by c."""
        return replace(self, tau_a=self.tau_a * c, tau_b=self.tau_b * c)


@dataclass(frozen=True)
class ShockSpec:
    """Impulsive equity change s·E_j applied to one bank at t=0."""
    target_bank: str
    magnitude: float = -0.1

    def __post_init__(self):
        if not self.magnitude > -1:
            raise ValidationError(f"shock magnitude must be > -1, got {self.magnitude}")

    @property
    def is_genuine(self) -> bool:
        return self.magnitude != 0


@dataclass(frozen=True, eq=False)
class SystemState:
    """
    Full dynamical state at time t.

    `e_ref` and `total_ref` hold E_i(0) and A_μ(0); they scale the failure
    threshold and the guard on vanishing asset totals.
    """
    t: float
    a: np.ndarray
    da: np.ndarray
    p: np.ndarray
    dp: np.ndarray
    e: np.ndarray
    failed: np.ndarray
    e_ref: np.ndarray
    total_ref: np.ndarray
    fail_times: Dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("a", "da", "p", "dp", "e", "e_ref", "total_ref"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "failed", _frozen(self.failed, dtype=bool))
        object.__setattr__(self, "fail_times", dict(self.fail_times))

    def equity_velocity(self) -> np.ndarray:
        """∂tE_i = Σ_μ A_{iμ} ∂tp_μ between impulses; zero for failed banks."""
        return np.where(self.failed, 0.0, self.a @ self.dp)

    def asset_values(self) -> np.ndarray:
        """Σ_i A_{iμ} p_μ per asset."""
        return self.a.sum(axis=0) * self.p

    def holdings_value(self) -> float:
        return float(self.asset_values().sum())

    def evolve(self, **changes) -> "SystemState":
        return replace(self, **changes)


def initial_state(net: HoldingsMatrix) -> SystemState:
    """Equilibrium state of a network at t=0: unit prices, zero velocities."""
    n, m = net.weights.shape
    return SystemState(
        t=0.0,
        a=net.weights,
        da=np.zeros((n, m)),
        p=np.ones(m),
        dp=np.zeros(m),
        e=net.equity0(),
        failed=np.zeros(n, dtype=bool),
        e_ref=net.equity0(),
        total_ref=net.totals(),
    )


def single_pair(holding: float = 1.0, equity: float = 1.0,
                bank_id: str = "B1", asset_id: str = "A1") -> HoldingsMatrix:
    """The 1 bank vs 1 asset system."""
    return HoldingsMatrix(
        banks=(BankRecord(bank_id, equity - holding, equity),),
        assets=(AssetRecord(asset_id, holding),),
        weights=np.array([[holding]]),
    )
