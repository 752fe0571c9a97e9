"""
core/index_mapping.py – Bijektionen zwischen flachen Indizes und Faktor-Tupeln.

Gemischte Basis, little-endian: der ERSTE Faktor läuft am schnellsten.
    flat = x_1 + Σ_{i≥2} (x_i − 1) · ∏_{j<i} d_j        (1-basiert)
Das entspricht numpy's Fortran-Reihenfolge (order='F').

Dummy-Kanäle liegen am Ende des gepolsterten Bereichs
(flache Indizes logical_size+1 .. padded_size).

Verwendung:
    plan = plan_factorization(48, 2)          → factors (7, 7), pad_count 1
    flat_to_multi(plan, 5)                    → Tupel, 1-basiert
    multi_to_flat(plan, (1, 1))               → 1
"""

import logging
from itertools import combinations_with_replacement
from math import prod

import numpy as np

from .datamodel import FactorizationPlan
from .errors import TTPlanError, TTRangeError

logger = logging.getLogger(__name__)


def flat_to_multi(plan, flat):
    """1-basierter flacher Index → 1-basiertes Multi-Index-Tupel."""
    flat = int(flat)
    if not 1 <= flat <= plan.padded_size:
        raise TTRangeError(
            f"Flacher Index {flat} außerhalb [1, {plan.padded_size}]")
    multi = np.unravel_index(flat - 1, plan.factors, order='F')
    return tuple(int(x) + 1 for x in multi)


def multi_to_flat(plan, multi):
    """Exakte Inverse von flat_to_multi."""
    multi = tuple(int(x) for x in multi)
    if len(multi) != plan.order:
        raise TTRangeError(
            f"Multi-Index hat {len(multi)} Komponenten, Plan hat Ordnung {plan.order}")
    for i, (x, d) in enumerate(zip(multi, plan.factors)):
        if not 1 <= x <= d:
            raise TTRangeError(f"Komponente {i + 1} = {x} außerhalb [1, {d}]", mode=i + 1)
    zero_based = tuple(x - 1 for x in multi)
    return int(np.ravel_multi_index(zero_based, plan.factors, order='F')) + 1


def logical_mask(plan):
    """Bool-Vektor der Länge padded_size: True für logische Kanäle."""
    mask = np.zeros(plan.padded_size, dtype=bool)
    mask[:plan.logical_size] = True
    return mask


# ============================================================
# PLANUNG
# ============================================================

def _min_balanced_bound(size, order):
    """Kleinstes m mit m^N ≥ size."""
    m = max(1, int(round(size ** (1.0 / order))))
    while m ** order < size:
        m += 1
    while m > 1 and (m - 1) ** order >= size:
        m -= 1
    return m


def balanced_factors(size, order):
    """
    Ausgewogene Faktorisierung: alle Faktoren ≤ m (kleinstes m mit m^N ≥ size),
    darunter das kleinste Produkt ≥ size; bei Gleichstand das lexikographisch
    kleinste nicht-fallende Tupel.
    """
    m = _min_balanced_bound(size, order)
    best = None
    # combinations_with_replacement liefert nicht-fallende Tupel in lexikographischer Ordnung
    for candidate in combinations_with_replacement(range(1, m + 1), order):
        p = prod(candidate)
        if p >= size and (best is None or p < prod(best)):
            best = candidate
    return tuple(best)


def plan_factorization(size, order, strategy="balanced", factors=None):
    """
    Erzeugt einen FactorizationPlan.

    Args:
        size: logische Größe (z.B. Kanalzahl C), ≥ 1
        order: Anzahl Faktoren N, ≥ 1
        strategy: "balanced" oder "explicit"
        factors: bei "explicit" die vorgegebenen Faktoren
    """
    size, order = int(size), int(order)
    if size < 1:
        raise TTPlanError(f"Größe muss ≥ 1 sein, ist {size}")
    if order < 1:
        raise TTPlanError(f"Ordnung muss ≥ 1 sein, ist {order}")

    if strategy == "balanced":
        plan = FactorizationPlan(size, balanced_factors(size, order), strategy)
    elif strategy == "explicit":
        if factors is None:
            raise TTPlanError("Strategie 'explicit' braucht Faktoren")
        factors = tuple(int(d) for d in factors)
        if len(factors) != order:
            raise TTPlanError(f"{len(factors)} Faktoren angegeben, Ordnung ist {order}")
        if any(d < 1 for d in factors):
            raise TTPlanError(f"Faktoren müssen ≥ 1 sein: {factors}")
        if prod(factors) < size:
            raise TTPlanError(
                f"Produkt der Faktoren {factors} = {prod(factors)} < Größe {size}")
        plan = FactorizationPlan(size, factors, strategy)
    else:
        raise TTPlanError(f"Unbekannte Strategie '{strategy}'")

    if plan.pad_count:
        logger.debug("Plan für %d: Faktoren %s, %d Dummy-Kanäle",
                     size, plan.factors, plan.pad_count)
    return plan
