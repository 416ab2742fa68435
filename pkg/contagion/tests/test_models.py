"""
Tests for the network and state types.
"""

import numpy as np
import pytest

from ..errors import ValidationError
from ..models import (AssetRecord, BankRecord, HoldingsMatrix, ModelParams, ShockSpec,
                      initial_state, single_pair)


def _small_net():
    weights = np.array([[3.0, 1.0], [0.0, 2.0], [1.0, 1.0]])
    banks = (BankRecord("B1", -2.0, 2.0), BankRecord("B2", -1.0, 1.0), BankRecord("B3", 0.5, 2.5))
    assets = (AssetRecord("GR", 4.0), AssetRecord("IT", 4.0))
    return HoldingsMatrix(banks, assets, weights)


def test_holdings_matrix_helpers():
    """Row sums, totals, cash and diversification follow the weights."""
    net = _small_net()
    assert net.n_banks == 3 and net.n_assets == 2
    assert net.bank_ids == ["B1", "B2", "B3"]
    np.testing.assert_allclose(net.holdings(), [4.0, 2.0, 2.0])
    np.testing.assert_allclose(net.totals(), [4.0, 4.0])
    np.testing.assert_allclose(net.equity0(), net.holdings() + net.cash())
    assert net.diversification() == {"B1": 2, "B2": 1, "B3": 2}
    assert net.bank_index("B3") == 2


def test_unknown_bank_rejected():
    """Looking up a bank that is not in the network raises."""
    with pytest.raises(ValidationError):
        _small_net().bank_index("B9")


def test_equity_identity_enforced():
    """equity0 must equal holdings plus cash_minus_liability."""
    banks = (BankRecord("B1", 0.0, 2.0),)
    with pytest.raises(ValidationError):
        HoldingsMatrix(banks, (AssetRecord("A1", 1.0),), np.array([[1.0]]))


def test_negative_and_mismatched_weights_rejected():
    """Negative weights and wrong cached totals are validation errors."""
    banks = (BankRecord("B1", 2.0, 1.0),)
    with pytest.raises(ValidationError):
        HoldingsMatrix(banks, (AssetRecord("A1", 1.0),), np.array([[-1.0]]))
    banks = (BankRecord("B1", 0.0, 1.0),)
    with pytest.raises(ValidationError):
        HoldingsMatrix(banks, (AssetRecord("A1", 2.0),), np.array([[1.0]]))


def test_duplicate_and_shared_ids_rejected():
    """Ids are unique within banks and never reused between banks and assets."""
    banks = (BankRecord("B1", 0.0, 1.0), BankRecord("B1", 0.0, 1.0))
    with pytest.raises(ValidationError):
        HoldingsMatrix(banks, (AssetRecord("A1", 2.0),), np.array([[1.0], [1.0]]))
    banks = (BankRecord("X", 0.0, 1.0),)
    with pytest.raises(ValidationError):
        HoldingsMatrix(banks, (AssetRecord("X", 1.0),), np.array([[1.0]]))


def test_idle_bank_needs_opt_in():
    """A bank without holdings is only allowed on rewired matrices."""
    banks = (BankRecord("B1", 0.0, 2.0), BankRecord("B2", 1.0, 1.0))
    weights = np.array([[2.0], [0.0]])
    with pytest.raises(ValidationError):
        HoldingsMatrix(banks, (AssetRecord("A1", 2.0),), weights)
    net = HoldingsMatrix(banks, (AssetRecord("A1", 2.0),), weights, allow_idle_banks=True)
    assert net.diversification()["B2"] == 0


def test_asset_price_must_start_at_one():
    """Prices are normalized to 1 at t=0."""
    with pytest.raises(ValidationError):
        AssetRecord("A1", 1.0, price0=2.0)


def test_with_equity_recomputes_cash():
    """Changing equity keeps the identity by moving cash."""
    net = _small_net().with_equity(0, 10.0)
    assert net.banks[0].equity0 == 10.0
    assert net.banks[0].cash_minus_liability == pytest.approx(6.0)
    assert _small_net().banks[0].equity0 == 2.0


def test_with_weights_keeps_equities():
    """New weights keep equities and refresh totals."""
    net = _small_net()
    rewired = net.with_weights(net.weights[::-1])
    np.testing.assert_allclose(rewired.equity0(), net.equity0())
    np.testing.assert_allclose(rewired.totals(), net.totals())
    np.testing.assert_allclose(rewired.holdings(), [2.0, 2.0, 4.0])


def test_bipartite_graph():
    """The networkx view has one edge per positive holding."""
    graph = _small_net().to_graph()
    assert graph.number_of_edges() == 5
    assert graph.nodes["GR"]["bipartite"] == 1
    assert graph["B1"]["GR"]["weight"] == 3.0


def test_params_and_shock_validation():
    """Response times are positive and shocks cannot wipe out more than all equity."""
    assert ModelParams(0.5, 0.4).gamma() == pytest.approx(0.2)
    with pytest.raises(ValidationError):
        ModelParams(1.0, 1.0, tau_a=0.0)
    with pytest.raises(ValidationError):
        ShockSpec("B1", -1.0)
    assert not ShockSpec("B1", 0.0).is_genuine
    assert ShockSpec("B1", 0.2).is_genuine


def test_initial_state_is_at_rest():
    """t=0: unit prices, zero velocities, no failures, read-only arrays."""
    state = initial_state(_small_net())
    np.testing.assert_array_equal(state.p, [1.0, 1.0])
    assert not state.da.any() and not state.dp.any()
    assert not state.failed.any()
    np.testing.assert_array_equal(state.equity_velocity(), np.zeros(3))
    assert state.holdings_value() == pytest.approx(8.0)
    with pytest.raises(ValueError):
        state.p[0] = 2.0


def test_single_pair():
    """The 1x1 system with E = A = 1 has zero cash."""
    net = single_pair()
    assert net.weights.shape == (1, 1)
    assert net.banks[0].cash_minus_liability == 0.0
