"""Affine inverse demand and spot-price evaluation."""

from __future__ import annotations

import numpy as np

from .config import GameMode, PricingSpec


def inverse_demand(pricing: PricingSpec, x):
    return pricing.p0 + pricing.p1 * np.asarray(x, dtype=float)


def effective_slope(mode: GameMode | str, pricing: PricingSpec) -> float:
    """Price slope seen by the optimiser.

    A price-taking prosumer (MFG) sees p1; the planner (MFC) also pays for its
    own price impact, i.e. faces p(x) + x p'(x) = p0 + 2 p1 x.
    """
    mode = GameMode(mode)
    return pricing.p1 if mode is GameMode.MFG else 2.0 * pricing.p1


def aggregate_demand(q0, qbar, abar, weights):
    """x = -Q0 - sum_g pi_g (Qbar_g - abar_g); region axis last."""
    net = np.asarray(qbar, dtype=float) - np.asarray(abar, dtype=float)
    return -np.asarray(q0, dtype=float) - net @ np.asarray(weights, dtype=float)


def spot_price_mean_field(pricing: PricingSpec, q0, qbar, abar, weights):
    return inverse_demand(pricing, aggregate_demand(q0, qbar, abar, weights))


def spot_price_empirical(pricing: PricingSpec, q0, q_nodes, a_nodes):
    """Price from N nodes; node axis last."""
    q_nodes = np.asarray(q_nodes, dtype=float)
    if q_nodes.shape[-1] == 0:
        raise ValueError("spot_price_empirical needs at least one node")
    net = np.mean(q_nodes - np.asarray(a_nodes, dtype=float), axis=-1)
    return inverse_demand(pricing, -np.asarray(q0, dtype=float) - net)
