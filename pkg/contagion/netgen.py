"""
Synthetic bank-asset networks with GIIPS-like statistics.

Holdings are log-normal (a handful of institutions hold most of each
asset), equities are drawn as a multiple of each bank's total holdings.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import ValidationError
from .models import AssetRecord, BankRecord, HoldingsMatrix
from .seeding import derive_rng

logger = logging.getLogger(__name__)

GIIPS = ("GR", "IT", "IE", "PT", "ES")
MAX_REDRAWS = 1000


@dataclass(frozen=True)
class GenSpec:
    """Parameters of the synthetic network generator."""
    n_banks: int = 121
    n_assets: int = 5
    log_mean: float = 6.0
    log_sigma: float = 2.0
    sparsity: float = 0.4
    equity_multiple: Tuple[float, float] = (0.05, 1.0)
    seed: int = 7
    weights: str = "lognormal"
    pareto_shape: float = 1.2

    def __post_init__(self):
        if self.n_banks < 1 or self.n_assets < 1:
            raise ValidationError("n_banks and n_assets must be at least 1")
        if not 0 < self.sparsity <= 1:
            raise ValidationError("sparsity must lie in (0, 1]")
        low, high = self.equity_multiple
        if not (0 < low <= high):
            raise ValidationError("equity multiples must be positive with low <= high")
        if self.log_sigma < 0:
            raise ValidationError("log_sigma must be non-negative")
        if self.weights not in ("lognormal", "pareto"):
            raise ValidationError(f"unknown weight distribution '{self.weights}'")
        if self.weights == "pareto" and not self.pareto_shape > 0:
            raise ValidationError("pareto_shape must be positive")


def asset_ids(n_assets: int) -> List[str]:
    """GIIPS country codes for five assets, numbered ids otherwise."""
    if n_assets == len(GIIPS):
        return list(GIIPS)
    return [f"A{mu + 1:03d}" for mu in range(n_assets)]


def _draw_weights(spec: GenSpec, rng: np.random.Generator, size) -> np.ndarray:
    if spec.weights == "pareto":
        return np.exp(spec.log_mean) * (1.0 + rng.pareto(spec.pareto_shape, size))
    return rng.lognormal(spec.log_mean, spec.log_sigma, size)


def _draw_mask(spec: GenSpec, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli holding mask; empty rows are redrawn."""
    mask = rng.random((spec.n_banks, spec.n_assets)) < spec.sparsity
    for _ in range(MAX_REDRAWS):
        empty = ~mask.any(axis=1)
        if not empty.any():
            return mask
        mask[empty] = rng.random((int(empty.sum()), spec.n_assets)) < spec.sparsity
    raise ValidationError("could not draw a holding for every bank; raise sparsity")


def generate(spec: GenSpec) -> HoldingsMatrix:
    """
    Draw a network deterministically from spec.seed.

    Equity multiples are uniform on the range and handed out by size: the
    smallest portfolio gets the thinnest capital, the largest holders carry
    equity close to their exposure.
    """
    rng = derive_rng(spec.seed, "netgen")
    mask = _draw_mask(spec, rng)
    weights = np.where(mask, _draw_weights(spec, rng, mask.shape), 0.0)

    keep = weights.sum(axis=0) > 0
    if not keep.any():
        raise ValidationError("generated network has no holdings")
    if not keep.all():
        logger.warning("Generated network: %d asset(s) without holders removed", int((~keep).sum()))
    ids = [a for a, k in zip(asset_ids(spec.n_assets), keep) if k]
    weights = weights[:, keep]

    low, high = spec.equity_multiple
    multiple = np.sort(low + (high - low) * rng.random(spec.n_banks))
    holdings = weights.sum(axis=1)
    multiple = multiple[np.argsort(np.argsort(holdings, kind="stable"), kind="stable")]
    equity = multiple * holdings

    banks = tuple(
        BankRecord(f"B{i + 1:03d}", float(equity[i] - holdings[i]), float(equity[i]))
        for i in range(spec.n_banks)
    )
    assets = tuple(AssetRecord(ids[mu], float(weights[:, mu].sum())) for mu in range(len(ids)))
    return HoldingsMatrix(banks, assets, weights)
