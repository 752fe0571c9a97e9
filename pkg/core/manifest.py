"""
core/manifest.py – Lädt und validiert Netzwerk-Manifeste (YAML).

Schema "ttconv-manifest/1":

    schema: ttconv-manifest/1
    name: yolov5s-like
    defaults:
      order: 4              # TT-Ordnung N
      strategy: balanced    # balanced | explicit
    layers:
      - id: backbone.7.conv
        k: 3
        in_channels: 256
        out_channels: 512
        bias: false
        selected: true
        input_size: [22, 22]
        order: 4            # optional, überschreibt defaults.order
        in_factors: [4, 4, 4, 4]     # optional → Strategie explicit
        out_factors: [4, 4, 4, 8]

Alle Verstöße werden gesammelt und gemeinsam gemeldet.

Verwendung:
    manifest = load_manifest("config/yolov5s_like.yaml")
    manifest = load_manifest(path, order=3)     # CLI-Override
"""

import logging
import os

import yaml

from .config import DEFAULT_SETTINGS, STRATEGIES
from .datamodel import ConvLayerSpec, ManifestLayer, NetworkManifest
from .errors import ManifestParseError, ManifestValidationError, TTError
from .index_mapping import plan_factorization

logger = logging.getLogger(__name__)

SCHEMA_ID = "ttconv-manifest/1"

_REQUIRED_LAYER_KEYS = ('id', 'k', 'in_channels', 'out_channels', 'input_size')
_KNOWN_LAYER_KEYS = set(_REQUIRED_LAYER_KEYS) | {
    'bias', 'selected', 'order', 'in_factors', 'out_factors'}


def load_manifest(filepath, order=None, strategy=None, settings=None):
    """Liest ein Manifest aus einer Datei."""
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Manifest nicht gefunden: {filepath}")
    with open(filepath, 'r', encoding='utf-8') as f:
        text = f.read()
    return parse_manifest(text, source=filepath, order=order, strategy=strategy, settings=settings)


def parse_manifest(text, source="<string>", order=None, strategy=None, settings=None):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, 'problem_mark', None)
        problem = getattr(exc, 'problem', None) or str(exc)
        if mark is not None:
            raise ManifestParseError(f"{source}: {problem}", mark.line + 1, mark.column + 1) from exc
        raise ManifestParseError(f"{source}: {problem}") from exc
    if not isinstance(data, dict):
        raise ManifestParseError(f"{source}: Top-Level muss ein Mapping sein")
    return manifest_from_dict(data, order=order, strategy=strategy, settings=settings)


def manifest_from_dict(data, order=None, strategy=None, settings=None):
    """Baut und validiert ein NetworkManifest aus einem geparsten Dict."""
    settings = settings or DEFAULT_SETTINGS
    violations = []

    schema = data.get('schema', SCHEMA_ID)
    if schema != SCHEMA_ID:
        violations.append(f"schema: '{schema}' nicht unterstützt (erwartet '{SCHEMA_ID}')")

    name = data.get('name')
    if not isinstance(name, str) or not name:
        violations.append("name: fehlt oder ist kein String")
        name = "unbenannt"

    defaults = data.get('defaults') or {}
    if not isinstance(defaults, dict):
        violations.append("defaults: muss ein Mapping sein")
        defaults = {}
    net_order = order if order is not None else defaults.get('order', settings.default_order)
    net_strategy = strategy if strategy is not None else defaults.get('strategy', settings.default_strategy)
    if not _is_pos_int(net_order):
        violations.append(f"defaults.order: positive Ganzzahl erwartet, erhalten {net_order!r}")
        net_order = settings.default_order
    if net_strategy not in STRATEGIES:
        violations.append(f"defaults.strategy: eine von {STRATEGIES} erwartet, erhalten {net_strategy!r}")
        net_strategy = settings.default_strategy

    raw_layers = data.get('layers')
    if raw_layers is None:
        raw_layers = []
    if not isinstance(raw_layers, list):
        violations.append("layers: muss eine Liste sein")
        raw_layers = []

    layers = []
    seen = set()
    for idx, raw in enumerate(raw_layers):
        where = f"layers[{idx}]"
        if not isinstance(raw, dict):
            violations.append(f"{where}: muss ein Mapping sein")
            continue
        lid = raw.get('id')
        if isinstance(lid, str):
            where = f"layers[{idx}] ({lid})"
            if lid in seen:
                violations.append(f"{where}: doppelte layer_id '{lid}'")
            seen.add(lid)
        layer = _build_layer(raw, where, net_order if order is None else order,
                             net_strategy, order is not None, violations)
        if layer is not None:
            layers.append(layer)

    if violations:
        raise ManifestValidationError(violations)

    manifest = NetworkManifest(name=name, layers=tuple(layers), order=int(net_order),
                               strategy=net_strategy, schema=SCHEMA_ID)
    n_padded = sum(1 for l in manifest.layers
                   if l.spec.in_plan.pad_count or l.spec.out_plan.pad_count)
    logger.info("Manifest '%s': %d Layer, %d selektiert, %d mit Dummy-Kanälen",
                manifest.name, len(manifest), len(manifest.selected_layers), n_padded)
    return manifest


def _is_pos_int(value):
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _build_layer(raw, where, net_order, net_strategy, order_forced, violations):
    n_before = len(violations)
    for key in _REQUIRED_LAYER_KEYS:
        if key not in raw:
            violations.append(f"{where}: Feld '{key}' fehlt")
    for key in sorted(set(raw) - _KNOWN_LAYER_KEYS):
        violations.append(f"{where}: unbekanntes Feld '{key}'")
    if len(violations) > n_before:
        return None

    lid = raw['id']
    if not isinstance(lid, str) or not lid:
        violations.append(f"{where}.id: nicht-leerer String erwartet")
    for key in ('k', 'in_channels', 'out_channels'):
        if not _is_pos_int(raw[key]):
            violations.append(f"{where}.{key}: positive Ganzzahl erwartet, erhalten {raw[key]!r}")

    size = raw['input_size']
    if (not isinstance(size, (list, tuple)) or len(size) != 2
            or not all(_is_pos_int(s) for s in size)):
        violations.append(f"{where}.input_size: [H, W] mit positiven Ganzzahlen erwartet")
    elif _is_pos_int(raw['k']) and min(size) < raw['k']:
        violations.append(f"{where}.input_size: {list(size)} kleiner als Kern k={raw['k']}")

    layer_order = net_order if order_forced else raw.get('order', net_order)
    if not _is_pos_int(layer_order):
        violations.append(f"{where}.order: positive Ganzzahl erwartet")
    for key in ('bias', 'selected'):
        if key in raw and not isinstance(raw[key], bool):
            violations.append(f"{where}.{key}: true/false erwartet")
    if len(violations) > n_before:
        return None

    plans = []
    for side, channels in (('in', raw['in_channels']), ('out', raw['out_channels'])):
        factors = raw.get(f'{side}_factors')
        strategy = "explicit" if factors is not None else net_strategy
        if strategy == "explicit" and factors is None:
            violations.append(f"{where}.{side}_factors: Strategie 'explicit' braucht Faktoren")
            continue
        if factors is not None and order_forced and len(factors) != layer_order:
            violations.append(
                f"{where}.{side}_factors: {len(factors)} Faktoren passen nicht zu --order {layer_order}")
            continue
        plan_order = len(factors) if factors is not None and 'order' not in raw and not order_forced \
            else layer_order
        try:
            plans.append(plan_factorization(channels, plan_order, strategy, factors))
        except TTError as exc:
            violations.append(f"{where}.{side}_factors: {exc}")
    if len(plans) != 2:
        return None

    try:
        spec = ConvLayerSpec(k=raw['k'], in_channels=raw['in_channels'],
                             out_channels=raw['out_channels'], has_bias=raw.get('bias', False),
                             in_plan=plans[0], out_plan=plans[1])
    except TTError as exc:
        violations.append(f"{where}: {exc}")
        return None
    return ManifestLayer(layer_id=lid, spec=spec, selected=raw.get('selected', True),
                         input_size=tuple(size))


# ============================================================
# ECHO – kanonische Form für Modelldateien
# ============================================================

def manifest_to_dict(manifest):
    """Kanonisches Dict mit aufgelösten Faktoren (Round-trip über manifest_from_dict)."""
    return {
        'schema': manifest.schema,
        'name': manifest.name,
        'defaults': {'order': manifest.order, 'strategy': manifest.strategy},
        'layers': [
            {
                'id': layer.layer_id,
                'k': layer.spec.k,
                'in_channels': layer.spec.in_channels,
                'out_channels': layer.spec.out_channels,
                'bias': layer.spec.has_bias,
                'selected': layer.selected,
                'input_size': list(layer.input_size),
                'order': layer.spec.order,
                'in_factors': list(layer.spec.in_plan.factors),
                'out_factors': list(layer.spec.out_plan.factors),
            }
            for layer in manifest.layers
        ],
    }


def manifest_summary(manifest):
    """Übersicht über das Manifest."""
    selected = manifest.selected_layers
    return {
        'name': manifest.name,
        'schema': manifest.schema,
        'order': manifest.order,
        'strategy': manifest.strategy,
        'n_layers': len(manifest),
        'n_selected': len(selected),
        'selected_dense_params': sum(l.spec.dense_params for l in selected),
        'n_padded_layers': sum(1 for l in manifest.layers
                               if l.spec.in_plan.pad_count or l.spec.out_plan.pad_count),
    }
