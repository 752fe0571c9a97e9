"""
core/datamodel.py – Stabiles Datenmodell für TT-Kompression von Faltungsschichten.

Grundprinzip:
    - Alle Tensoren sind nach der Konstruktion UNVERÄNDERLICH
      (numpy-Arrays werden kopiert und schreibgeschützt).
    - Kerne werden intern in 64 Bit gehalten; 32 Bit nur in Dateien.
    - Indizes im API sind 1-basiert (wie in den Formeln), intern 0-basiert.

Verwendung:
    from core.datamodel import DenseTensor, TTTensor
    dense = DenseTensor.from_array(np.arange(24.0).reshape(2, 3, 4))
    tt = TTTensor([g1, g2, g3])
    tt.ranks          → (1, r1, r2, 1)
    tt.param_count    → Σ r_{i-1}·I_i·r_i
"""

from dataclasses import dataclass, field
from math import prod
from typing import Optional

import numpy as np

from .errors import TTShapeError


def _frozen(arr, dtype=np.float64):
    """Kopie als schreibgeschütztes Array."""
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


# ============================================================
# DENSE TENSOR – das Orakel
# ============================================================

@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Zeilenweise (row-major) gespeicherter Tensor mit expliziter Form."""
    shape: tuple
    data: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        if not shape:
            raise TTShapeError("Form darf nicht leer sein")
        if any(s < 1 for s in shape):
            raise TTShapeError(f"Alle Dimensionen müssen ≥ 1 sein, erhalten {shape}")
        data = np.asarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != prod(shape):
            raise TTShapeError(
                f"Datenlänge {data.size} ≠ Produkt der Form {shape} ({prod(shape)})"
            )
        object.__setattr__(self, 'shape', shape)
        object.__setattr__(self, 'data', _frozen(data))

    @classmethod
    def from_array(cls, array):
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 0:
            array = array.reshape(1)
        return cls(shape=array.shape, data=array.reshape(-1))

    @property
    def order(self):
        return len(self.shape)

    @property
    def size(self):
        return self.data.size

    def to_array(self):
        """Read-only Sicht in der logischen Form."""
        return self.data.reshape(self.shape)

    def norm(self):
        return float(np.linalg.norm(self.data))


# ============================================================
# TT TENSOR – Kette dreidimensionaler Kerne
# ============================================================

@dataclass(frozen=True, eq=False)
class TTTensor:
    """
    Tensor im TT-Format: Kern i hat Form (r_{i-1}, I_i, r_i), r_0 = r_N = 1.
    """
    cores: tuple

    def __post_init__(self):
        cores = tuple(_frozen(c) for c in self.cores)
        if not cores:
            raise TTShapeError("TT-Tensor braucht mindestens einen Kern")
        for i, c in enumerate(cores):
            if c.ndim != 3:
                raise TTShapeError(f"Kern {i + 1} muss 3-dimensional sein, Form {c.shape}")
        _check_chain([c.shape[0] for c in cores], [c.shape[-1] for c in cores])
        object.__setattr__(self, 'cores', cores)

    @property
    def order(self):
        return len(self.cores)

    @property
    def mode_sizes(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self):
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def param_count(self):
        return sum(c.size for c in self.cores)


# ============================================================
# TT MATRIX – Kerne mit gepaarten (Zeilen-, Spalten-)Moden
# ============================================================

@dataclass(frozen=True, eq=False)
class TTMatrix:
    """
    Matrix im TT-Format: Kern i hat Form (r_{i-1}, q_i, p_i, r_i).
    Logische Form Q×P mit Q = ∏ q_i, P = ∏ p_i.
    """
    cores: tuple

    def __post_init__(self):
        cores = tuple(_frozen(c) for c in self.cores)
        if not cores:
            raise TTShapeError("TT-Matrix braucht mindestens einen Kern")
        for i, c in enumerate(cores):
            if c.ndim != 4:
                raise TTShapeError(f"Matrix-Kern {i + 1} muss 4-dimensional sein, Form {c.shape}")
        _check_chain([c.shape[0] for c in cores], [c.shape[-1] for c in cores])
        object.__setattr__(self, 'cores', cores)

    @property
    def row_factors(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_factors(self):
        return tuple(c.shape[2] for c in self.cores)

    @property
    def shape(self):
        return (prod(self.row_factors), prod(self.col_factors))

    @property
    def ranks(self):
        return (1,) + tuple(c.shape[3] for c in self.cores)

    @property
    def param_count(self):
        return sum(c.size for c in self.cores)


def _check_chain(left_ranks, right_ranks):
    """Randränge 1, benachbarte Ränge gleich."""
    if left_ranks[0] != 1:
        raise TTShapeError(f"Linker Randrang muss 1 sein, ist {left_ranks[0]}")
    if right_ranks[-1] != 1:
        raise TTShapeError(f"Rechter Randrang muss 1 sein, ist {right_ranks[-1]}")
    for i in range(len(left_ranks) - 1):
        if right_ranks[i] != left_ranks[i + 1]:
            raise TTShapeError(
                f"Rang-Bruch zwischen Kern {i + 1} und {i + 2}: "
                f"{right_ranks[i]} ≠ {left_ranks[i + 1]}"
            )


# ============================================================
# FACTORIZATION PLAN – Kanalzahl → N Faktoren (+ Dummy-Kanäle)
# ============================================================

@dataclass(frozen=True)
class FactorizationPlan:
    logical_size: int
    factors: tuple
    strategy: str = "balanced"

    def __post_init__(self):
        object.__setattr__(self, 'factors', tuple(int(d) for d in self.factors))
        if self.logical_size < 1:
            raise TTShapeError(f"logical_size muss ≥ 1 sein, ist {self.logical_size}")
        if not self.factors or any(d < 1 for d in self.factors):
            raise TTShapeError(f"Faktoren müssen positiv sein: {self.factors}")

    @property
    def order(self):
        return len(self.factors)

    @property
    def padded_size(self):
        return prod(self.factors)

    @property
    def pad_count(self):
        return self.padded_size - self.logical_size


# ============================================================
# FALTUNGSSCHICHTEN
# ============================================================

@dataclass(frozen=True)
class ConvLayerSpec:
    """k×k-Faltung C → Ċ mit Faktorisierungsplänen gleicher Ordnung N."""
    k: int
    in_channels: int
    out_channels: int
    has_bias: bool
    in_plan: FactorizationPlan
    out_plan: FactorizationPlan

    def __post_init__(self):
        problems = []
        if self.k < 1:
            problems.append(f"k muss ≥ 1 sein, ist {self.k}")
        if self.in_channels < 1 or self.out_channels < 1:
            problems.append("Kanalzahlen müssen ≥ 1 sein")
        if self.in_plan.logical_size != self.in_channels:
            problems.append(
                f"in_plan.logical_size {self.in_plan.logical_size} ≠ C {self.in_channels}")
        if self.out_plan.logical_size != self.out_channels:
            problems.append(
                f"out_plan.logical_size {self.out_plan.logical_size} ≠ Ċ {self.out_channels}")
        if self.in_plan.order != self.out_plan.order:
            problems.append(
                f"Pläne haben verschiedene Ordnung ({self.in_plan.order} vs {self.out_plan.order})")
        if problems:
            raise TTShapeError("; ".join(problems))

    @property
    def order(self):
        return self.in_plan.order

    @property
    def dense_params(self):
        return self.k * self.k * self.in_channels * self.out_channels


@dataclass(frozen=True, eq=False)
class DenseConvKernel:
    """Gewichte W[m, n, c, ċ] der Form (k, k, C, Ċ), Bias optional."""
    spec: ConvLayerSpec
    weights: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        s = self.spec
        expected = (s.k, s.k, s.in_channels, s.out_channels)
        weights = _frozen(self.weights)
        if weights.shape != expected:
            raise TTShapeError(f"Gewichtsform {weights.shape} ≠ erwartet {expected}")
        object.__setattr__(self, 'weights', weights)
        if s.has_bias:
            if self.bias is None:
                raise TTShapeError("Spec verlangt Bias, aber keiner angegeben")
            bias = _frozen(self.bias).reshape(-1)
            if bias.size != s.out_channels:
                raise TTShapeError(f"Bias-Länge {bias.size} ≠ Ċ {s.out_channels}")
            object.__setattr__(self, 'bias', bias)
        elif self.bias is not None:
            raise TTShapeError("Bias angegeben, aber Spec hat has_bias=False")

    @property
    def param_count(self):
        return self.weights.size


@dataclass(frozen=True, eq=False)
class TTConvKernel:
    """
    Faltungskern im TT-Format.

    core0:         räumlicher Kern (1, k², r_1)
    channel_cores: N Kerne (r_i, c_i, ċ_i, r_{i+1}), r_{N+1} = 1
    dummy_bound:   größter rekonstruierter Betrag in Dummy-Kanälen
                   (beim Aufbau gemessen, nach unten durch dummy_tolerance begrenzt)

    Eine gekürzte TT-SVD hält Dummy-Kanäle nicht exakt bei Null: Dummy-Ausgänge
    tragen dann Masse ungleich Null. Der TT-Forward verwirft diese Ausgänge;
    Dummy-Eingänge treffen nur auf aufgefüllte Null-Kanäle. Geprüft wird nur, dass die
    Masse die gespeicherte dummy_bound nicht überschreitet.
    """
    spec: ConvLayerSpec
    core0: np.ndarray
    channel_cores: tuple
    bias: Optional[np.ndarray] = None
    dummy_bound: float = 1e-12

    def __post_init__(self):
        s = self.spec
        core0 = _frozen(self.core0)
        cores = tuple(_frozen(c) for c in self.channel_cores)
        if core0.ndim != 3 or core0.shape[:2] != (1, s.k * s.k):
            raise TTShapeError(f"core0 muss Form (1, {s.k * s.k}, r1) haben, hat {core0.shape}")
        if len(cores) != s.order:
            raise TTShapeError(f"{len(cores)} Kanal-Kerne, erwartet N={s.order}")
        for i, c in enumerate(cores):
            if c.ndim != 4:
                raise TTShapeError(f"Kanal-Kern {i + 1} muss 4-dimensional sein, Form {c.shape}")
            if c.shape[1] != s.in_plan.factors[i] or c.shape[2] != s.out_plan.factors[i]:
                raise TTShapeError(
                    f"Kanal-Kern {i + 1}: Moden {c.shape[1:3]} ≠ Plan "
                    f"({s.in_plan.factors[i]}, {s.out_plan.factors[i]})")
        _check_chain([1] + [c.shape[0] for c in cores],
                     [core0.shape[2]] + [c.shape[3] for c in cores])
        object.__setattr__(self, 'core0', core0)
        object.__setattr__(self, 'channel_cores', cores)
        if s.has_bias:
            if self.bias is None:
                raise TTShapeError("Spec verlangt Bias, aber keiner angegeben")
            bias = _frozen(self.bias).reshape(-1)
            if bias.size != s.out_channels:
                raise TTShapeError(f"Bias-Länge {bias.size} ≠ Ċ {s.out_channels}")
            object.__setattr__(self, 'bias', bias)
        elif self.bias is not None:
            raise TTShapeError("Bias angegeben, aber Spec hat has_bias=False")
        object.__setattr__(self, 'dummy_bound', float(self.dummy_bound))

    @property
    def ranks(self):
        """Interne Ränge (r_1..r_N)."""
        return tuple(c.shape[0] for c in self.channel_cores)

    @property
    def chain_ranks(self):
        """Vollständige Kette (1, r_1, ..., r_N, 1)."""
        return (1,) + self.ranks + (1,)

    @property
    def mode_sizes(self):
        """Moden der Kette: (k², c_1·ċ_1, ..., c_N·ċ_N)."""
        return (self.core0.shape[1],) + tuple(c.shape[1] * c.shape[2] for c in self.channel_cores)

    @property
    def param_count(self):
        return self.core0.size + sum(c.size for c in self.channel_cores)


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Aktivierungen der Form (H, W, C). Eine gepolsterte Variante trägt
    C_padded ≥ logical_channels Kanäle; die Schwanzkanäle sind Null.
    """
    data: np.ndarray
    logical_channels: Optional[int] = None

    def __post_init__(self):
        data = _frozen(self.data)
        if data.ndim != 3:
            raise TTShapeError(f"FeatureMap braucht Form (H, W, C), hat {data.shape}")
        logical = data.shape[2] if self.logical_channels is None else int(self.logical_channels)
        if not 1 <= logical <= data.shape[2]:
            raise TTShapeError(f"logical_channels {logical} passt nicht zu {data.shape[2]} Kanälen")
        if logical < data.shape[2] and np.any(data[:, :, logical:] != 0):
            raise TTShapeError("Dummy-Kanäle einer gepolsterten FeatureMap müssen Null sein")
        object.__setattr__(self, 'data', data)
        object.__setattr__(self, 'logical_channels', logical)

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_padded(self):
        return self.logical_channels < self.data.shape[2]

    def logical(self):
        """Sicht ohne Dummy-Kanäle."""
        return self.data[:, :, :self.logical_channels]


# ============================================================
# MANIFEST – Netzwerkbeschreibung
# ============================================================

@dataclass(frozen=True)
class ManifestLayer:
    layer_id: str
    spec: ConvLayerSpec
    selected: bool
    input_size: tuple      # (H, W)

    @property
    def output_size(self):
        """Gültige Faltung, Stride 1."""
        h, w = self.input_size
        return (h - self.spec.k + 1, w - self.spec.k + 1)


@dataclass(frozen=True)
class NetworkManifest:
    name: str
    layers: tuple
    order: int = 4
    strategy: str = "balanced"
    schema: str = "ttconv-manifest/1"

    def get(self, layer_id):
        for layer in self.layers:
            if layer.layer_id == layer_id:
                return layer
        return None

    @property
    def selected_layers(self):
        return [layer for layer in self.layers if layer.selected]

    def __len__(self):
        return len(self.layers)


# ============================================================
# REPORT – Zeilen und Aggregate
# ============================================================

@dataclass
class LayerReportRow:
    """Eine Zeile pro Layer; unselektierte Layer haben ratio 1."""
    layer_id: str
    selected: bool
    dense_params: int
    tt_params: int
    dense_macs: int
    tt_macs: int
    bias_adds: int = 0
    ranks: tuple = ()
    rel_error: Optional[float] = None

    @property
    def ratio(self):
        return self.dense_params / self.tt_params if self.tt_params else float('inf')

    def to_dict(self):
        """Export als Dictionary (für JSON/CSV). Feldnamen sind stabil."""
        return {
            'layer_id': self.layer_id,
            'selected': self.selected,
            'dense_params': self.dense_params,
            'tt_params': self.tt_params,
            'ratio': float(f"{self.ratio:.4g}"),
            'dense_macs': self.dense_macs,
            'tt_macs': self.tt_macs,
            'bias_adds': self.bias_adds,
            'ranks': "-".join(str(r) for r in self.ranks),
            'rel_error': self.rel_error,
        }


@dataclass
class CompressionReport:
    """
    Bericht einer Kompression bei fester Rang-Einstellung.

    Aggregate beziehen sich auf die selektierten Layer (wie die
    "selected layers"-Spalte einer Rangstudie).
    """
    manifest_name: str
    rank: Optional[int]
    rows: list = field(default_factory=list)
    tolerance: Optional[float] = None

    @property
    def selected_rows(self):
        return [r for r in self.rows if r.selected]

    @property
    def total_dense_params(self):
        return sum(r.dense_params for r in self.selected_rows)

    @property
    def total_tt_params(self):
        return sum(r.tt_params for r in self.selected_rows)

    @property
    def overall_ratio(self):
        if not self.selected_rows:
            return 1.0
        return self.total_dense_params / self.total_tt_params

    @property
    def total_dense_macs(self):
        return sum(r.dense_macs for r in self.rows)

    @property
    def total_tt_macs(self):
        return sum(r.tt_macs for r in self.rows)

    @property
    def total_bias_adds(self):
        return sum(r.bias_adds for r in self.rows)

    @property
    def weighted_error(self):
        """Parametergewichteter Rekonstruktionsfehler (None ohne Gewichte)."""
        rows = [r for r in self.rows if r.rel_error is not None]
        if not rows:
            return None
        total = sum(r.dense_params for r in rows)
        return sum(r.dense_params * r.rel_error for r in rows) / total

    def aggregates(self):
        return {
            'manifest': self.manifest_name,
            'rank': self.rank,
            'tolerance': self.tolerance,
            'n_layers': len(self.rows),
            'n_selected': len(self.selected_rows),
            'total_dense_params': self.total_dense_params,
            'total_tt_params': self.total_tt_params,
            'overall_ratio': float(f"{self.overall_ratio:.4g}"),
            'total_dense_macs': self.total_dense_macs,
            'total_tt_macs': self.total_tt_macs,
            'total_bias_adds': self.total_bias_adds,
            'weighted_error': self.weighted_error,
        }
