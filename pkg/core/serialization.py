"""
core/serialization.py – Modelldateien (TTCV) und dichte Gewichtsdateien.

Modelldatei, durchgehend little-endian:

    Header   (12 Byte)  magic b"TTCV" | version u16 | flags u16 | n_sections u32
    Tabelle  (24 Byte × n)  kind u16 | reserved u16 | offset u64 | length u64 | crc32 u32
    Sektionen
        kind 1  MANIFEST  kanonisches JSON (sortierte Schlüssel, UTF-8)
        kind 2  TT        ein selektierter Layer
        kind 3  DENSE     ein durchgereichter Layer

    TT-Sektion:     layer_index u32 | n_cores u16 | has_bias u8 | 0 u8 | dummy_bound f64
                    je Kern: ndim u8, dims u32 × ndim, Werte f32
                    optional Bias: Ċ × f32
    DENSE-Sektion:  layer_index u32 | has_bias u8 | 0 u8 0 u8 0 u8
                    Gewichte (k, k, C, Ċ) row-major f32, optional Bias

Layer-Sektionen folgen der Manifest-Reihenfolge. Ein leeres Modell besteht
aus Header, Tabelle und der MANIFEST-Sektion.

Gewichtsdatei: flache f32-Werte (little-endian) pro Layer in der Ordnung
(m, n, c, ċ) row-major, danach der Bias; dazu ein YAML-Index
"<datei>.index.yaml" mit Offsets und Formen (in Elementen, nicht Bytes).

Verwendung:
    save_model(kernels, manifest, "model.ttcv")
    kernels, manifest = load_model("model.ttcv")
    save_weights(weights, "weights.bin")
    raw = load_weights("weights.bin")      → {layer_id: (weights, bias)}
"""

import json
import logging
import os
import struct
import zlib
from math import prod

import numpy as np
import yaml

from .datamodel import DenseConvKernel, TTConvKernel
from .errors import (CorruptionError, ManifestValidationError, ModelFileError,
                     TTError, UnsupportedVersionError)
from .manifest import manifest_from_dict, manifest_to_dict
from .tt_conv import to_storage_precision

logger = logging.getLogger(__name__)

MAGIC = b"TTCV"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)

KIND_MANIFEST = 1
KIND_TT = 2
KIND_DENSE = 3
_KIND_NAMES = {KIND_MANIFEST: "MANIFEST", KIND_TT: "TT", KIND_DENSE: "DENSE"}

_HEADER = struct.Struct("<4sHHI")
_ENTRY = struct.Struct("<HHQQI")
_TT_HEAD = struct.Struct("<IHBxd")
_DENSE_HEAD = struct.Struct("<IB3x")

WEIGHTS_SCHEMA = "ttconv-weights/1"
_F32 = np.dtype('<f4')


# ============================================================
# HILFSFUNKTIONEN
# ============================================================

def _f32_bytes(array):
    return np.ascontiguousarray(array, dtype=_F32).tobytes()


def _atomic_write(filepath, payload):
    """Schreibt über eine temporäre Datei im Zielordner; keine Teil-Dateien."""
    tmp = f"{filepath}.tmp"
    try:
        with open(tmp, 'wb') as f:
            f.write(payload)
        os.replace(tmp, filepath)
    except OSError:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


class _Reader:
    """Sequentieller Leser über einer Sektion; Überlauf → CorruptionError."""

    def __init__(self, data, section):
        self.data = data
        self.pos = 0
        self.section = section

    def unpack(self, fmt):
        if self.pos + fmt.size > len(self.data):
            raise CorruptionError("Sektion endet vorzeitig", self.section)
        values = fmt.unpack_from(self.data, self.pos)
        self.pos += fmt.size
        return values

    def floats(self, count):
        n_bytes = 4 * count
        if self.pos + n_bytes > len(self.data):
            raise CorruptionError("Sektion endet vorzeitig", self.section)
        out = np.frombuffer(self.data, dtype=_F32, count=count, offset=self.pos)
        self.pos += n_bytes
        return out.astype(np.float64)

    def finish(self):
        if self.pos != len(self.data):
            raise CorruptionError(f"{len(self.data) - self.pos} überzählige Bytes", self.section)


# ============================================================
# MODELLDATEI – SCHREIBEN
# ============================================================

def _encode_manifest(manifest):
    return json.dumps(manifest_to_dict(manifest), sort_keys=True,
                      separators=(',', ':'), ensure_ascii=False).encode('utf-8')


def _encode_tt(index, ttk):
    cores = (ttk.core0,) + ttk.channel_cores
    parts = [_TT_HEAD.pack(index, len(cores), int(ttk.bias is not None), ttk.dummy_bound)]
    for core in cores:
        parts.append(struct.pack(f"<B{core.ndim}I", core.ndim, *core.shape))
        parts.append(_f32_bytes(core))
    if ttk.bias is not None:
        parts.append(_f32_bytes(ttk.bias))
    return b"".join(parts)


def _encode_dense(index, kernel):
    parts = [_DENSE_HEAD.pack(index, int(kernel.bias is not None)), _f32_bytes(kernel.weights)]
    if kernel.bias is not None:
        parts.append(_f32_bytes(kernel.bias))
    return b"".join(parts)


def model_bytes(kernels, manifest):
    """
    Serialisiert ein Modell deterministisch zu Bytes.

    TT-Kerne werden dabei auf 32-Bit-Werte gerundet; dummy_bound wird an den
    gerundeten Kernen neu gemessen. Für geladene Kerne ist das Runden die
    Identität: save → load → save ergibt dieselben Bytes.
    """
    sections = [(KIND_MANIFEST, _encode_manifest(manifest))]
    for idx, layer in enumerate(manifest.layers):
        if layer.layer_id not in kernels:
            raise ModelFileError(f"Kein Kern für Layer '{layer.layer_id}'")
        kernel = kernels[layer.layer_id]
        if layer.selected:
            if not isinstance(kernel, TTConvKernel):
                raise ModelFileError(f"Layer '{layer.layer_id}' ist selektiert, aber nicht TT-komprimiert")
            sections.append((KIND_TT, _encode_tt(idx, to_storage_precision(kernel))))
        else:
            sections.append((KIND_DENSE, _encode_dense(idx, kernel)))

    offset = _HEADER.size + _ENTRY.size * len(sections)
    table = []
    for kind, payload in sections:
        table.append(_ENTRY.pack(kind, 0, offset, len(payload), zlib.crc32(payload)))
        offset += len(payload)
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, len(sections))
    return header + b"".join(table) + b"".join(p for _, p in sections)


def save_model(kernels, manifest, filepath):
    payload = model_bytes(kernels, manifest)
    _atomic_write(filepath, payload)
    logger.info("Modell gespeichert: %s (%d Layer, %d Byte)", filepath, len(manifest), len(payload))


# ============================================================
# MODELLDATEI – LESEN
# ============================================================

def _section_table(data):
    if len(data) < _HEADER.size:
        raise CorruptionError("Datei kürzer als der Header", "header")
    magic, version, _flags, n_sections = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CorruptionError(f"falsche Kennung {magic!r}", "header")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersionError(version, SUPPORTED_VERSIONS)
    table_end = _HEADER.size + _ENTRY.size * n_sections
    if len(data) < table_end:
        raise CorruptionError("Sektionstabelle abgeschnitten", "table")

    sections = []
    for i in range(n_sections):
        kind, _reserved, offset, length, crc = _ENTRY.unpack_from(data, _HEADER.size + i * _ENTRY.size)
        name = f"{_KIND_NAMES.get(kind, f'kind {kind}')} #{i}"
        if kind not in _KIND_NAMES:
            raise CorruptionError("unbekannte Sektionsart", name)
        if offset < table_end or offset + length > len(data):
            raise CorruptionError("Sektion liegt außerhalb der Datei (abgeschnitten?)", name)
        payload = data[offset:offset + length]
        if zlib.crc32(payload) != crc:
            raise CorruptionError("CRC-32 stimmt nicht", name)
        sections.append((kind, name, payload))
    return sections


def _decode_tt(reader, layer):
    index, n_cores, has_bias, dummy_bound = reader.unpack(_TT_HEAD)
    cores = []
    for _ in range(n_cores):
        (ndim,) = reader.unpack(struct.Struct("<B"))
        dims = reader.unpack(struct.Struct(f"<{ndim}I"))
        cores.append(reader.floats(prod(dims)).reshape(dims))
    bias = reader.floats(layer.spec.out_channels) if has_bias else None
    reader.finish()
    if not cores:
        raise CorruptionError("TT-Layer ohne Kerne", reader.section)
    return index, TTConvKernel(layer.spec, cores[0], cores[1:], bias, dummy_bound=dummy_bound)


def _decode_dense(reader, layer):
    index, has_bias = reader.unpack(_DENSE_HEAD)
    spec = layer.spec
    weights = reader.floats(spec.dense_params).reshape(spec.k, spec.k, spec.in_channels, spec.out_channels)
    bias = reader.floats(spec.out_channels) if has_bias else None
    reader.finish()
    return index, DenseConvKernel(spec, weights, bias)


def load_model(filepath, settings=None):
    """
    Liest eine Modelldatei. Prüft CRC, Version, Rang-Ketten und Plan-Produkte.

    Returns:
        (kernels, manifest); kernels: Dict layer_id → Kern in Manifest-Reihenfolge
    """
    with open(filepath, 'rb') as f:
        data = f.read()
    sections = _section_table(data)
    if not sections or sections[0][0] != KIND_MANIFEST:
        raise CorruptionError("erste Sektion ist kein Manifest", "table")

    _, name, payload = sections[0]
    try:
        manifest = manifest_from_dict(json.loads(payload.decode('utf-8')), settings=settings)
    except (ValueError, ManifestValidationError) as exc:
        raise CorruptionError(f"Manifest-Echo ungültig: {exc}", name) from exc

    layer_sections = sections[1:]
    if len(layer_sections) != len(manifest):
        raise CorruptionError(
            f"{len(layer_sections)} Layer-Sektionen für {len(manifest)} Manifest-Layer", "table")

    kernels = {}
    for pos, ((kind, name, payload), layer) in enumerate(zip(layer_sections, manifest.layers)):
        expected = KIND_TT if layer.selected else KIND_DENSE
        if kind != expected:
            raise CorruptionError(f"Sektionsart passt nicht zu Layer '{layer.layer_id}'", name)
        reader = _Reader(payload, name)
        try:
            decode = _decode_tt if kind == KIND_TT else _decode_dense
            index, kernel = decode(reader, layer)
        except TTError as exc:
            if isinstance(exc, ModelFileError):
                raise
            raise CorruptionError(f"Layer '{layer.layer_id}': {exc}", name) from exc
        if index != pos:
            raise CorruptionError(f"Layer-Index {index} ≠ Position {pos}", name)
        kernels[layer.layer_id] = kernel

    logger.info("Modell geladen: %s (%d Layer)", filepath, len(kernels))
    return kernels, manifest


# ============================================================
# DICHTE GEWICHTSDATEIEN
# ============================================================

def index_path(filepath):
    return f"{filepath}.index.yaml"


def save_weights(weights, filepath):
    """
    Args:
        weights: Dict layer_id → DenseConvKernel (Reihenfolge bleibt erhalten)
    """
    entries, chunks, offset = [], [], 0
    for layer_id, kernel in weights.items():
        w = kernel.weights
        entry = {'id': layer_id, 'shape': list(w.shape), 'offset': offset, 'count': int(w.size)}
        chunks.append(_f32_bytes(w))
        offset += w.size
        if kernel.bias is not None:
            entry['bias_offset'] = offset
            entry['bias_count'] = int(kernel.bias.size)
            chunks.append(_f32_bytes(kernel.bias))
            offset += kernel.bias.size
        entries.append(entry)

    index = {'schema': WEIGHTS_SCHEMA, 'dtype': 'float32-le', 'total': offset, 'layers': entries}
    _atomic_write(filepath, b"".join(chunks))
    _atomic_write(index_path(filepath),
                  yaml.safe_dump(index, sort_keys=False, allow_unicode=True).encode('utf-8'))
    logger.info("Gewichte gespeichert: %s (%d Layer, %d Werte)", filepath, len(entries), offset)


def load_weights(filepath):
    """Liest Gewichtsdatei + Index → {layer_id: (weights, bias | None)}."""
    idx_file = index_path(filepath)
    if not os.path.exists(idx_file):
        raise FileNotFoundError(f"Index zur Gewichtsdatei fehlt: {idx_file}")
    with open(idx_file, 'r', encoding='utf-8') as f:
        index = yaml.safe_load(f) or {}
    if index.get('schema') != WEIGHTS_SCHEMA:
        raise CorruptionError(f"unbekanntes Schema {index.get('schema')!r}", "weights-index")

    with open(filepath, 'rb') as f:
        data = f.read()
    if len(data) % _F32.itemsize:
        raise CorruptionError(f"Dateilänge {len(data)} ist kein Vielfaches von 4", "weights")
    values = np.frombuffer(data, dtype=_F32).astype(np.float64)
    if values.size != index.get('total'):
        raise CorruptionError(
            f"{values.size} Werte in der Datei, Index erwartet {index.get('total')}", "weights")

    raw = {}
    for entry in index.get('layers') or []:
        lid = entry['id']
        start, count = entry['offset'], entry['count']
        if start + count > values.size or prod(entry['shape']) != count:
            raise CorruptionError(f"Layer '{lid}': Offset/Form passen nicht", "weights")
        w = values[start:start + count].reshape(entry['shape'])
        bias = None
        if 'bias_offset' in entry:
            b0, bn = entry['bias_offset'], entry['bias_count']
            if b0 + bn > values.size:
                raise CorruptionError(f"Layer '{lid}': Bias außerhalb der Datei", "weights")
            bias = values[b0:b0 + bn]
        raw[lid] = (w, bias)
    return raw
