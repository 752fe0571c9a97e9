"""
core/tt_core.py – TT-Format: Zerlegung (TT-SVD), Rekonstruktion, Elementzugriff.

Auswertungsreihenfolge:
    Alle Kettenprodukte laufen STRIKT von links nach rechts, und innerhalb
    eines Schritts wird über den Rang-Index s = 0..r-1 der Reihe nach
    aufsummiert. tt_element und tt_reconstruct teilen sich dafür _chain_step,
    deshalb stimmen Einzelelement und Rekonstruktion bitgenau überein.

Kerne sind nur bis auf Eichfreiheit (invertierbare Transformationen auf den
Bindungen) eindeutig – verglichen werden immer rekonstruierte Werte.

Verwendung:
    tt = tt_decompose(dense, rank_cap=4)          # oder tolerance=1e-3
    tt_element(tt, (1, 2, 1))
    tt_reconstruct(tt)                            → DenseTensor
    tt_param_count((2, 3), (1, 2, 1))             → 10
"""

import logging
from math import prod, sqrt

import numpy as np

from .config import DEFAULT_SETTINGS
from .datamodel import DenseTensor, FactorizationPlan, TTMatrix, TTTensor
from .errors import TTCapacityError, TTDataError, TTRangeError, TTShapeError
from .index_mapping import flat_to_multi

logger = logging.getLogger(__name__)


# ============================================================
# KETTENPRODUKT
# ============================================================

def _chain_step(left, core):
    """
    Ein Schritt der Kette: left (n, r) · core (r, I, r') → (n, I, r').

    Summation über r in fester Reihenfolge (elementweise IEEE-Operationen),
    damit das Ergebnis nicht von n abhängt.
    """
    acc = left[:, 0, None, None] * core[0][None, :, :]
    for s in range(1, core.shape[0]):
        acc = acc + left[:, s, None, None] * core[s][None, :, :]
    return acc


def _check_index(index, sizes):
    index = tuple(int(a) for a in index)
    if len(index) != len(sizes):
        raise TTRangeError(f"Index hat {len(index)} Komponenten, Tensor hat Ordnung {len(sizes)}")
    for i, (a, n) in enumerate(zip(index, sizes)):
        if not 1 <= a <= n:
            raise TTRangeError(f"Index in Mode {i + 1} = {a} außerhalb [1, {n}]", mode=i + 1)
    return index


def tt_element(tt, index):
    """Element an 1-basiertem Multi-Index: 𝒢_1[a_1]·…·𝒢_N[a_N]."""
    index = _check_index(index, tt.mode_sizes)
    v = np.ones((1, 1))
    for core, a in zip(tt.cores, index):
        v = _chain_step(v, core[:, a - 1:a, :]).reshape(1, -1)
    return float(v[0, 0])


def tt_reconstruct(tt, element_budget=None):
    """Dichte Rekonstruktion (I_1, ..., I_N), row-major."""
    budget = element_budget or DEFAULT_SETTINGS.element_budget
    n_elements = prod(tt.mode_sizes)
    if n_elements > budget:
        raise TTCapacityError(
            f"Rekonstruktion hätte {n_elements} Elemente, Budget ist {budget}")

    m = np.ones((1, 1))
    for core in tt.cores:
        m = _chain_step(m, core).reshape(-1, core.shape[2])
    return DenseTensor(shape=tt.mode_sizes, data=m.reshape(-1))


def tt_relative_error(dense, tt, element_budget=None):
    """‖dense − reconstruct(tt)‖_F / ‖dense‖_F; 0 wenn dense die Nullnorm hat."""
    approx = tt_reconstruct(tt, element_budget)
    ref = dense.norm()
    diff = float(np.linalg.norm(dense.data - approx.data))
    if ref == 0.0:
        return 0.0 if diff == 0.0 else float('inf')
    return diff / ref


# ============================================================
# TT-SVD
# ============================================================

def choose_rank_from_tail(singular_values, delta):
    """
    Kleinstes r ≥ 1 mit Σ_{i>r} σ_i² ≤ delta².
    """
    s = np.asarray(singular_values)
    if delta <= 0:
        return max(1, len(s))
    tail = np.concatenate([np.cumsum((s ** 2)[::-1])[::-1], [0.0]])
    candidates = np.nonzero(tail <= delta ** 2)[0]
    r = int(candidates[0]) if candidates.size else len(s)
    return max(1, r)


def _normalize_caps(rank_cap, n_bonds):
    if rank_cap is None:
        return [None] * n_bonds
    if np.isscalar(rank_cap):
        caps = [int(rank_cap)] * n_bonds
    else:
        caps = [int(r) for r in rank_cap]
        if len(caps) != n_bonds:
            raise TTShapeError(f"{len(caps)} Rang-Grenzen angegeben, Kette hat {n_bonds} Bindungen")
    if any(r < 1 for r in caps):
        raise TTShapeError(f"Rang-Grenzen müssen ≥ 1 sein: {caps}")
    return caps


def tt_decompose(dense, rank_cap=None, tolerance=None):
    """
    Sequentielle, abgeschnittene SVD über Links-Rechts-Entfaltungen.

    Args:
        dense: DenseTensor
        rank_cap: int (für alle Bindungen) oder Sequenz (r_1..r_{N-1})
        tolerance: relative Frobenius-Schranke in (0, 1); pro Schritt wird
                   der Rest auf (tolerance/√(N−1))·‖dense‖_F begrenzt

    Ohne rank_cap und tolerance ist die Zerlegung exakt (volle Ränge).
    """
    array = dense.to_array()
    if not np.all(np.isfinite(array)):
        raise TTDataError("Eingabe enthält NaN oder Inf")
    if tolerance is not None and not 0 < tolerance < 1:
        raise TTShapeError(f"tolerance muss in (0, 1) liegen, ist {tolerance}")

    n = dense.shape
    d = len(n)
    caps = _normalize_caps(rank_cap, d - 1)

    if d == 1:
        return TTTensor([array.reshape(1, n[0], 1).copy()])

    norm = float(np.linalg.norm(array))
    if norm == 0.0:
        return TTTensor([np.zeros((1, nk, 1)) for nk in n])

    delta = tolerance * norm / sqrt(d - 1) if tolerance is not None else 0.0

    cores = []
    r_prev = 1
    z = array
    for k in range(d - 1):
        z = z.reshape(r_prev * n[k], -1)
        u, s, vt = np.linalg.svd(z, full_matrices=False)
        r_k = choose_rank_from_tail(s, delta)
        if caps[k] is not None:
            r_k = min(r_k, caps[k])
        cores.append(u[:, :r_k].reshape(r_prev, n[k], r_k))
        z = s[:r_k, None] * vt[:r_k, :]
        logger.debug("TT-SVD Schritt %d: Entfaltung %s, Rang %d von %d",
                     k + 1, (r_prev * n[k], z.shape[1]), r_k, len(s))
        r_prev = r_k
    cores.append(z.reshape(r_prev, n[-1], 1))
    return TTTensor(cores)


def tt_param_count(mode_sizes, ranks):
    """Σ r_{i-1}·I_i·r_i."""
    mode_sizes, ranks = tuple(mode_sizes), tuple(ranks)
    if len(ranks) != len(mode_sizes) + 1:
        raise TTShapeError(
            f"{len(ranks)} Ränge für {len(mode_sizes)} Moden (erwartet {len(mode_sizes) + 1})")
    if ranks[0] != 1 or ranks[-1] != 1:
        raise TTShapeError(f"Randränge müssen 1 sein: {ranks}")
    return sum(ranks[i] * mode_sizes[i] * ranks[i + 1] for i in range(len(mode_sizes)))


# ============================================================
# VEKTOREN UND MATRIZEN IM TT-FORMAT
# ============================================================

def tt_vector_element(tt, flat, plan=None):
    """
    Element eines langen Vektors über die Bijektion F.

    Ohne plan hat der Vektor die Länge ∏ I_i; ein Plan mit Dummy-Slots
    begrenzt a auf dessen logische Länge.
    """
    if plan is None:
        plan = FactorizationPlan(prod(tt.mode_sizes), tt.mode_sizes, "explicit")
    elif plan.factors != tt.mode_sizes:
        raise TTShapeError(f"Plan {plan.factors} passt nicht zu den Moden {tt.mode_sizes}")
    elif not 1 <= int(flat) <= plan.logical_size:
        raise TTRangeError(f"Index {flat} außerhalb [1, {plan.logical_size}]")
    return tt_element(tt, flat_to_multi(plan, flat))


def tt_matrix_element(ttm, row, col):
    """Element (a, b), 1-basiert, über die Bijektionen F (Zeilen) und G (Spalten)."""
    q_total, p_total = ttm.shape
    row, col = int(row), int(col)
    if not 1 <= row <= q_total:
        raise TTRangeError(f"Zeile {row} außerhalb [1, {q_total}]")
    if not 1 <= col <= p_total:
        raise TTRangeError(f"Spalte {col} außerhalb [1, {p_total}]")
    f = np.unravel_index(row - 1, ttm.row_factors, order='F')
    g = np.unravel_index(col - 1, ttm.col_factors, order='F')
    v = np.ones((1, 1))
    for core, fi, gi in zip(ttm.cores, f, g):
        v = _chain_step(v, core[:, fi, gi:gi + 1, :]).reshape(1, -1)
    return float(v[0, 0])


def _matrix_perm(order):
    """Achsenfolge (f_1, g_1, f_2, g_2, ...) aus (f_N..f_1, g_N..g_1)."""
    perm = []
    for i in range(order):
        perm += [order - 1 - i, 2 * order - 1 - i]
    return perm


def tt_matrix_from_dense(matrix, row_factors, col_factors, rank_cap=None, tolerance=None):
    """Q×P-Matrix → TTMatrix mit gepaarten Moden (q_i·p_i)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    row_factors, col_factors = tuple(row_factors), tuple(col_factors)
    if len(row_factors) != len(col_factors):
        raise TTShapeError("Zeilen- und Spaltenfaktoren brauchen dieselbe Anzahl")
    if matrix.shape != (prod(row_factors), prod(col_factors)):
        raise TTShapeError(
            f"Matrixform {matrix.shape} ≠ ({prod(row_factors)}, {prod(col_factors)})")
    order = len(row_factors)
    merged = (matrix.reshape(row_factors[::-1] + col_factors[::-1])
              .transpose(_matrix_perm(order))
              .reshape([q * p for q, p in zip(row_factors, col_factors)]))
    tt = tt_decompose(DenseTensor.from_array(merged), rank_cap=rank_cap, tolerance=tolerance)
    return TTMatrix([c.reshape(c.shape[0], q, p, c.shape[2])
                     for c, q, p in zip(tt.cores, row_factors, col_factors)])


def tt_matrix_to_dense(ttm, element_budget=None):
    """TTMatrix → dichte Q×P-Matrix."""
    order = len(ttm.cores)
    tt = TTTensor([c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3]) for c in ttm.cores])
    merged = tt_reconstruct(tt, element_budget).to_array()
    interleaved = merged.reshape([x for qp in zip(ttm.row_factors, ttm.col_factors) for x in qp])
    inverse = np.argsort(_matrix_perm(order))
    return interleaved.transpose(inverse).reshape(ttm.shape)
