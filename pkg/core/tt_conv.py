"""
core/tt_conv.py – Faltung: dichtes Orakel, Kern↔Matrix, TT-Kern und TT-Forward.

Konventionen:
    - Gültige Faltung, Stride 1, ohne Rand: Ḣ = H − k + 1.
      stride/padding existieren als optionale Parameter.
    - Räumlicher Index q = m + k·n (m = Zeilen-Offset, läuft am schnellsten).
    - Kern als Matrix: Zeile q + k²·c, Spalte ċ.
    - Kanal-Multi-Indizes little-endian (c_1 läuft am schnellsten),
      Dummy-Kanäle am Ende.
    - Kette des TT-Kerns: (k², c_1·ċ_1, ..., c_N·ċ_N); interne Ränge r_1..r_N.

Kontraktionsreihenfolge im TT-Forward:
    Patches (Ḣ·Ẇ, k², C_pad) → räumlicher Kern über k² → Kanal-Kerne
    links nach rechts → Dummy-Ausgänge verwerfen → Bias.
conv_flops zählt exakt diese Schritte.

Verwendung:
    ttk = decompose_kernel(kernel, rank=8)
    y = tt_conv_forward(ttk, FeatureMap(x))
    y_ref = dense_conv_forward(reconstruct_kernel(ttk), FeatureMap(x))
"""

import logging
from dataclasses import dataclass, field
from math import prod

import numpy as np

from .config import DEFAULT_SETTINGS
from .datamodel import DenseConvKernel, DenseTensor, FeatureMap, TTConvKernel, TTTensor
from .errors import TTDataError, TTIntegrityError, TTShapeError
from .tt_core import tt_decompose, tt_reconstruct

logger = logging.getLogger(__name__)


# ============================================================
# INSTRUMENTIERUNG
# ============================================================

@dataclass
class MacCounter:
    """Zählt Multiply-Accumulates pro Kontraktionsschritt (aus Laufzeit-Formen)."""
    macs: int = 0
    bias_adds: int = 0
    steps: list = field(default_factory=list)

    def add(self, label, count):
        self.macs += int(count)
        self.steps.append((label, int(count)))


def _count(counter, label, count):
    if counter is not None:
        counter.add(label, count)


# ============================================================
# HILFSFUNKTIONEN
# ============================================================

def output_extent(size, k, stride=1, padding=0):
    return (size + 2 * padding - k) // stride + 1


def extract_patches(x, k, stride=1, padding=0):
    """
    (H, W, C) → (Ḣ, Ẇ, k², C) mit patch[h, w, m + k·n, c] = x[h·s + m, w·s + n, c].
    """
    h, w, _ = x.shape
    if padding:
        x = np.pad(x, [(padding, padding), (padding, padding), (0, 0)])
    out_h = output_extent(h, k, stride, padding)
    out_w = output_extent(w, k, stride, padding)
    if out_h < 1 or out_w < 1:
        raise TTShapeError(f"Eingabe {h}×{w} kleiner als Kern {k}×{k}")
    cols = np.empty((out_h, out_w, k * k, x.shape[2]))
    for n in range(k):
        for m in range(k):
            cols[:, :, m + k * n, :] = x[m:m + stride * out_h:stride, n:n + stride * out_w:stride, :]
    return cols


def pad_feature_map(fm, plan):
    """Füllt die logischen Kanäle auf plan.padded_size mit Null-Kanälen auf."""
    x = fm.logical()
    if x.shape[2] != plan.logical_size:
        raise TTShapeError(f"FeatureMap hat {x.shape[2]} Kanäle, Plan erwartet {plan.logical_size}")
    padded = np.zeros(x.shape[:2] + (plan.padded_size,))
    padded[:, :, :plan.logical_size] = x
    return FeatureMap(padded, logical_channels=plan.logical_size)


def drop_padding(fm):
    return FeatureMap(fm.logical())


def relative_deviation(actual, reference):
    """max|actual − reference| / max|reference| (0 wenn beides Null)."""
    actual, reference = np.asarray(actual), np.asarray(reference)
    diff = float(np.max(np.abs(actual - reference))) if actual.size else 0.0
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    if scale == 0.0:
        return 0.0 if diff == 0.0 else float('inf')
    return diff / scale


# ============================================================
# DICHTES ORAKEL
# ============================================================

def kernel_to_matrix(kernel):
    """(k, k, C, Ċ) → (k²·C, Ċ), Zeile m + k·n + k²·c."""
    w = kernel.weights
    k, _, c_in, c_out = w.shape
    return w.transpose(2, 1, 0, 3).reshape(k * k * c_in, c_out)


def matrix_to_kernel(matrix, spec, bias=None):
    """Inverse von kernel_to_matrix."""
    matrix = np.asarray(matrix, dtype=np.float64)
    expected = (spec.k * spec.k * spec.in_channels, spec.out_channels)
    if matrix.shape != expected:
        raise TTShapeError(f"Matrixform {matrix.shape} ≠ {expected}")
    weights = matrix.reshape(spec.in_channels, spec.k, spec.k, spec.out_channels).transpose(2, 1, 0, 3)
    return DenseConvKernel(spec, weights, bias)


def dense_conv_forward(kernel, fm, counter=None, stride=1, padding=0):
    """Referenz-Faltung über die Kern-Matrix (im2col)."""
    spec = kernel.spec
    x = fm.logical()
    if x.shape[2] != spec.in_channels:
        raise TTShapeError(f"Eingabe hat {x.shape[2]} Kanäle, Kern erwartet {spec.in_channels}")

    patches = extract_patches(x, spec.k, stride, padding)
    out_h, out_w = patches.shape[:2]
    n_pos = out_h * out_w
    cols = patches.reshape(n_pos, spec.k * spec.k, spec.in_channels).transpose(0, 2, 1)
    cols = cols.reshape(n_pos, -1)
    w = kernel_to_matrix(kernel)
    out = cols @ w
    _count(counter, "dense", n_pos * w.shape[0] * w.shape[1])

    if kernel.bias is not None:
        out = out + kernel.bias[None, :]
        if counter is not None:
            counter.bias_adds += out.size
    return FeatureMap(out.reshape(out_h, out_w, spec.out_channels))


# ============================================================
# TT-KERN
# ============================================================

def _chain_perm(order):
    """(k², c_N..c_1, ċ_N..ċ_1) → (k², c_1, ċ_1, ..., c_N, ċ_N)."""
    perm = [0]
    for i in range(order):
        perm += [order - i, 2 * order - i]
    return perm


def padded_kernel_tensor(kernel):
    """Gepolsterter Kern als Tensor der Kette (k², c_1·ċ_1, ..., c_N·ċ_N)."""
    spec = kernel.spec
    in_f, out_f = spec.in_plan.factors, spec.out_plan.factors
    w = np.zeros((spec.k, spec.k, spec.in_plan.padded_size, spec.out_plan.padded_size))
    w[:, :, :spec.in_channels, :spec.out_channels] = kernel.weights
    t = w.transpose(1, 0, 2, 3).reshape((spec.k * spec.k,) + in_f[::-1] + out_f[::-1])
    t = t.transpose(_chain_perm(spec.order))
    return DenseTensor.from_array(t.reshape([spec.k * spec.k] + [c * d for c, d in zip(in_f, out_f)]))


def _chain_tensor(ttk):
    cores = [ttk.core0] + [c.reshape(c.shape[0], c.shape[1] * c.shape[2], c.shape[3])
                           for c in ttk.channel_cores]
    return TTTensor(cores)


def reconstruct_padded(ttk, element_budget=None):
    """Gepolsterte Gewichte (k, k, C_pad, Ċ_pad) aus der TT-Kette."""
    spec = ttk.spec
    in_f, out_f = spec.in_plan.factors, spec.out_plan.factors
    chain = tt_reconstruct(_chain_tensor(ttk), element_budget).to_array()
    t = chain.reshape([spec.k * spec.k] + [x for pair in zip(in_f, out_f) for x in pair])
    t = t.transpose(np.argsort(_chain_perm(spec.order)))
    t = t.reshape(spec.k, spec.k, spec.in_plan.padded_size, spec.out_plan.padded_size)
    return t.transpose(1, 0, 2, 3)


def _dummy_magnitude(spec, padded):
    parts = [padded[:, :, spec.in_channels:, :], padded[:, :, :, spec.out_channels:]]
    return max((float(np.max(np.abs(p))) for p in parts if p.size), default=0.0)


def kernel_rank_bounds(spec):
    """Obergrenzen der internen Ränge r_1..r_N (Entfaltungsränge der Kette)."""
    modes = [spec.k * spec.k] + [c * d for c, d in zip(spec.in_plan.factors, spec.out_plan.factors)]
    return tuple(min(prod(modes[:i]), prod(modes[i:])) for i in range(1, len(modes)))


def resolve_ranks(spec, ranks):
    """Uniformer Rang oder Sequenz → realisierte interne Ränge (geklemmt)."""
    bounds = kernel_rank_bounds(spec)
    if np.isscalar(ranks):
        ranks = [int(ranks)] * len(bounds)
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != len(bounds):
        raise TTShapeError(f"{len(ranks)} Ränge angegeben, Kette hat {len(bounds)} Bindungen")
    if any(r < 1 for r in ranks):
        raise TTShapeError(f"Ränge müssen ≥ 1 sein: {ranks}")
    return tuple(min(r, b) for r, b in zip(ranks, bounds))


def decompose_kernel(kernel, rank=None, tolerance=None, settings=None):
    """
    DenseConvKernel → TTConvKernel.

    Args:
        rank: uniformer interner Rang r (alle Bindungen ≤ r) oder
              Sequenz (r_1..r_N) von Grenzen; None = volle Ränge
        tolerance: relative Frobenius-Schranke statt Rang-Grenzen
    """
    settings = settings or DEFAULT_SETTINGS
    if not np.all(np.isfinite(kernel.weights)):
        raise TTDataError("Kern enthält NaN oder Inf")
    spec = kernel.spec
    caps = None if rank is None else resolve_ranks(spec, rank)

    tt = tt_decompose(padded_kernel_tensor(kernel), rank_cap=caps, tolerance=tolerance)
    in_f, out_f = spec.in_plan.factors, spec.out_plan.factors
    channel_cores = [c.reshape(c.shape[0], ci, co, c.shape[2])
                     for c, ci, co in zip(tt.cores[1:], in_f, out_f)]
    ttk = TTConvKernel(spec, tt.cores[0], channel_cores, kernel.bias,
                       dummy_bound=settings.dummy_tolerance)
    ttk = _with_measured_bound(ttk, settings)
    logger.debug("Kern %s→%s (k=%d) zerlegt: Ränge %s, %d Parameter",
                 spec.in_channels, spec.out_channels, spec.k, ttk.ranks, ttk.param_count)
    return ttk


def _with_measured_bound(ttk, settings):
    spec = ttk.spec
    if not (spec.in_plan.pad_count or spec.out_plan.pad_count):
        return ttk
    measured = _dummy_magnitude(spec, reconstruct_padded(ttk, settings.element_budget))
    if measured > settings.dummy_tolerance:
        logger.debug("Dummy-Gewichte nach Kürzung bis %.3g (Plan %s/%s)",
                     measured, spec.in_plan.factors, spec.out_plan.factors)
    return TTConvKernel(spec, ttk.core0, ttk.channel_cores, ttk.bias,
                        dummy_bound=max(settings.dummy_tolerance, measured))


def to_storage_precision(ttk, settings=None):
    """
    Kerne und Bias auf 32-Bit-Werte runden (als float64 gehalten).

    Der Eingangskern muss seine eigene dummy_bound einhalten (sonst
    TTIntegrityError); die neue Schranke wird an den gerundeten Kernen gemessen.
    """
    settings = settings or DEFAULT_SETTINGS
    reconstruct_kernel(ttk, settings)

    def as32(a):
        return None if a is None else np.asarray(a, dtype=np.float32).astype(np.float64)

    rounded = TTConvKernel(ttk.spec, as32(ttk.core0), [as32(c) for c in ttk.channel_cores],
                           as32(ttk.bias), dummy_bound=settings.dummy_tolerance)
    return _with_measured_bound(rounded, settings)


def reconstruct_kernel(ttk, settings=None):
    """TTConvKernel → DenseConvKernel über die logischen Kanäle."""
    settings = settings or DEFAULT_SETTINGS
    spec = ttk.spec
    padded = reconstruct_padded(ttk, settings.element_budget)
    dummy = _dummy_magnitude(spec, padded)
    if dummy > ttk.dummy_bound:
        raise TTIntegrityError(
            f"Dummy-Kanäle rekonstruieren zu {dummy:.3g} > Schranke {ttk.dummy_bound:.3g}")
    return DenseConvKernel(spec, padded[:, :, :spec.in_channels, :spec.out_channels], ttk.bias)


# ============================================================
# TT-FORWARD
# ============================================================

def tt_conv_forward(ttk, fm, counter=None, stride=1, padding=0):
    """Faltung direkt mit den TT-Kernen, ohne den dichten Kern zu bilden."""
    spec = ttk.spec
    if fm.logical_channels != spec.in_channels:
        raise TTShapeError(
            f"Eingabe hat {fm.logical_channels} Kanäle, Kern erwartet {spec.in_channels}")
    x = pad_feature_map(fm, spec.in_plan).data
    in_f, out_f = spec.in_plan.factors, spec.out_plan.factors
    c_pad, kk = spec.in_plan.padded_size, spec.k * spec.k

    patches = extract_patches(x, spec.k, stride, padding)
    out_h, out_w = patches.shape[:2]
    n_pos = out_h * out_w

    # räumlicher Kern über k²
    g0 = ttk.core0[0]
    cols = patches.reshape(n_pos, kk, c_pad).transpose(0, 2, 1).reshape(n_pos * c_pad, kk)
    t = cols @ g0
    _count(counter, "core0", cols.shape[0] * cols.shape[1] * g0.shape[1])

    # Zustand (S, verbleibende Eingänge, c_i, erzeugte Ausgänge, r_i)
    t = t.reshape(n_pos, c_pad // in_f[0], in_f[0], 1, g0.shape[1])
    for i, core in enumerate(ttk.channel_cores):
        s, a, c, o, r = t.shape
        _, _, d, r_next = core.shape
        res = np.tensordot(t, core, axes=([2, 4], [1, 0]))          # (S, a, o, d, r')
        _count(counter, f"core{i + 1}", s * a * o * c * r * d * r_next)
        res = res.transpose(0, 1, 3, 2, 4)                          # (S, a, d, o, r')
        c_next = in_f[i + 1] if i + 1 < len(in_f) else 1
        t = res.reshape(s, a // c_next, c_next, d * o, r_next)

    out = t.reshape(n_pos, spec.out_plan.padded_size)[:, :spec.out_channels]
    if ttk.bias is not None:
        out = out + ttk.bias[None, :]
        if counter is not None:
            counter.bias_adds += out.size
    return FeatureMap(out.reshape(out_h, out_w, spec.out_channels))


# ============================================================
# MAC-MODELL
# ============================================================

def conv_flops(spec, mode, out_hw, ranks=None):
    """
    Exakte MAC-Zahl der jeweiligen Forward-Implementierung (ohne Bias-Additionen).

    Args:
        mode: "dense" oder "tt"
        out_hw: (Ḣ, Ẇ)
        ranks: für "tt" – uniformer Rang oder (r_1..r_N); wird auf die
               Entfaltungsgrenzen geklemmt
    """
    n_pos = int(out_hw[0]) * int(out_hw[1])
    if mode == "dense":
        return n_pos * spec.out_channels * spec.k * spec.k * spec.in_channels
    if mode != "tt":
        raise ValueError(f"Unbekannter Modus '{mode}'")
    if ranks is None:
        raise ValueError("Modus 'tt' braucht Ränge")

    r = (1,) + resolve_ranks(spec, ranks) + (1,)
    in_f, out_f = spec.in_plan.factors, spec.out_plan.factors
    total = n_pos * spec.k * spec.k * spec.in_plan.padded_size * r[1]
    for i in range(spec.order):
        remaining_in = prod(in_f[i + 1:])
        produced_out = prod(out_f[:i])
        total += n_pos * remaining_in * produced_out * in_f[i] * r[i + 1] * out_f[i] * r[i + 2]
    return total


def bias_adds(spec, out_hw):
    return int(out_hw[0]) * int(out_hw[1]) * spec.out_channels if spec.has_bias else 0
