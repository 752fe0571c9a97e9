"""
core/integration.py – Integrationsschicht: Netzwerk-Kompression

Führt Manifest, Gewichte und Layer-Module zusammen:
    - selektierte Layer → ModulTT, alle anderen → ModulDicht
    - Berichte (Parameter, Verhältnis, MACs, Rekonstruktionsfehler)
    - Rang-Studien über mehrere Ränge
    - Gewichtsquellen: Gewichtsdatei oder synthetisch (seeded)

Zeilen erscheinen IMMER in Manifest-Reihenfolge, auch wenn Layer
parallel komprimiert werden.

Verwendung:
    kernels, report = compress_network(manifest, None, rank=8, seed=0)
    reports = rank_sweep(manifest, None, [16, 8, 4, 2])
    print_bericht(report)
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from modules.modul_dense import ModulDicht
from modules.modul_tt import ModulTT

from .config import DEFAULT_SETTINGS
from .datamodel import CompressionReport, DenseConvKernel, TTConvKernel
from .errors import CompressionFailure, TTError, TTShapeError

logger = logging.getLogger(__name__)


# ============================================================
# GEWICHTSQUELLEN
# ============================================================

def synthetic_weights(manifest, seed=0):
    """
    Seeded He-skalierte Normalgewichte, auf 32-Bit-Werte gerundet.

    Jeder Layer hat seinen eigenen Generator (seed, Layer-Position), damit
    das Ergebnis nicht von der Bearbeitungsreihenfolge abhängt.
    """
    weights = {}
    for idx, layer in enumerate(manifest.layers):
        spec = layer.spec
        rng = np.random.default_rng([seed, idx])
        std = np.sqrt(2.0 / (spec.k * spec.k * spec.in_channels))
        w = rng.standard_normal((spec.k, spec.k, spec.in_channels, spec.out_channels)) * std
        w = w.astype(np.float32).astype(np.float64)
        bias = None
        if spec.has_bias:
            bias = (rng.standard_normal(spec.out_channels) * 0.01).astype(np.float32).astype(np.float64)
        weights[layer.layer_id] = DenseConvKernel(spec, w, bias)
    return weights


def bind_weights(manifest, raw):
    """
    Rohgewichte {layer_id: (weights, bias) | DenseConvKernel} → DenseConvKernels.

    Fehlende oder formfalsche Layer werden gesammelt und zusammen gemeldet.
    """
    kernels, failures = {}, []
    for layer in manifest.layers:
        entry = raw.get(layer.layer_id)
        if entry is None:
            failures.append((layer.layer_id, TTShapeError("keine Gewichte in der Gewichtsquelle")))
            continue
        if isinstance(entry, DenseConvKernel):
            entry = (entry.weights, entry.bias)
        try:
            kernels[layer.layer_id] = DenseConvKernel(layer.spec, entry[0], entry[1])
        except TTError as exc:
            failures.append((layer.layer_id, exc))
    extras = sorted(set(raw) - {l.layer_id for l in manifest.layers})
    if extras:
        logger.warning("Gewichte für unbekannte Layer ignoriert: %s", ", ".join(extras))
    if failures:
        raise CompressionFailure(failures)
    return kernels


# ============================================================
# NETWORK COMPRESSOR
# ============================================================

class NetworkCompressor:
    """
    Komprimiert alle Layer eines Manifests.

    Verwendung:
        compressor = NetworkCompressor(manifest, settings)
        kernels, report = compressor.compress(weights, rank=8)
    """

    def __init__(self, manifest, settings=None):
        self.manifest = manifest
        self.settings = settings or DEFAULT_SETTINGS
        self.modul_tt = ModulTT(self.settings)
        self.modul_dicht = ModulDicht(self.settings)

    def modul_fuer(self, layer):
        return self.modul_tt if layer.selected else self.modul_dicht

    def compress(self, weights, rank=None, tolerance=None, with_errors=False):
        """
        Args:
            weights: {layer_id: DenseConvKernel}
            rank: uniformer interner Rang r ≥ 1
            tolerance: alternativ relative Frobenius-Schranke in (0, 1)
            with_errors: Rekonstruktionsfehler in den Bericht schreiben

        Returns:
            (kernels, report); kernels ist ein Dict layer_id → Kern in
            Manifest-Reihenfolge (TTConvKernel oder durchgereichter DenseConvKernel)
        """
        _check_rank_setting(rank, tolerance)
        layers = list(self.manifest.layers)

        def work(layer):
            modul = self.modul_fuer(layer)
            compressed = modul.komprimiere(layer, weights[layer.layer_id], rank, tolerance)
            reference = weights[layer.layer_id] if with_errors else None
            return compressed, modul.berichtszeile(layer, compressed, reference)

        results = [None] * len(layers)
        failures = []

        def collect(i, outcome):
            try:
                results[i] = outcome()
            except (TTError, ArithmeticError, np.linalg.LinAlgError) as exc:
                failures.append((i, layers[i].layer_id, exc))

        if self.settings.workers > 1 and len(layers) > 1:
            with ThreadPoolExecutor(max_workers=self.settings.workers) as pool:
                futures = [pool.submit(work, layer) for layer in layers]
                for i, fut in enumerate(futures):
                    collect(i, fut.result)
        else:
            for i, layer in enumerate(layers):
                collect(i, lambda layer=layer: work(layer))

        if failures:
            failures.sort(key=lambda f: f[0])
            raise CompressionFailure([(lid, exc) for _, lid, exc in failures])

        kernels = {layer.layer_id: res[0] for layer, res in zip(layers, results)}
        report = CompressionReport(manifest_name=self.manifest.name, rank=rank,
                                   rows=[res[1] for res in results], tolerance=tolerance)
        logger.info("Netzwerk '%s' bei %s: %d → %d Parameter (%.4g×)",
                    self.manifest.name, _setting_label(rank, tolerance),
                    report.total_dense_params, report.total_tt_params, report.overall_ratio)
        return kernels, report

    def report(self, kernels, weights=None, rank=None):
        """Bericht zu bereits komprimierten Kernen (z.B. aus einer Modelldatei)."""
        _check_layer_sets(self.manifest, kernels, "Modell")
        if weights is not None:
            _check_layer_sets(self.manifest, weights, "Gewichte")
        rows = []
        for layer in self.manifest.layers:
            modul = self.modul_fuer(layer)
            reference = None if weights is None else weights[layer.layer_id]
            rows.append(modul.berichtszeile(layer, kernels[layer.layer_id], reference))
        return CompressionReport(manifest_name=self.manifest.name, rank=rank, rows=rows)

    def reconstruct(self, kernels):
        """Dichte Kerne aller Layer (Pass-through unverändert)."""
        _check_layer_sets(self.manifest, kernels, "Modell")
        return {layer.layer_id: self.modul_fuer(layer).rekonstruiere(kernels[layer.layer_id])
                for layer in self.manifest.layers}


def _check_rank_setting(rank, tolerance):
    if (rank is None) == (tolerance is None):
        raise TTShapeError("Genau eines von rank und tolerance angeben")
    if rank is not None and (isinstance(rank, bool) or int(rank) != rank or rank < 1):
        raise TTShapeError(f"Rang muss eine Ganzzahl ≥ 1 sein, ist {rank!r}")
    if tolerance is not None and not 0 < tolerance < 1:
        raise TTShapeError(f"tolerance muss in (0, 1) liegen, ist {tolerance}")


def _setting_label(rank, tolerance):
    return f"Rang {rank}" if rank is not None else f"Toleranz {tolerance:g}"


def _check_layer_sets(manifest, mapping, what):
    expected = [l.layer_id for l in manifest.layers]
    missing = [lid for lid in expected if lid not in mapping]
    extra = sorted(set(mapping) - set(expected))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"fehlend: {', '.join(missing)}")
        if extra:
            parts.append(f"überzählig: {', '.join(extra)}")
        raise TTShapeError(f"{what} passt nicht zum Manifest ({'; '.join(parts)})")


# ============================================================
# FUNKTIONALE SCHNITTSTELLE
# ============================================================

def compress_network(manifest, weights=None, rank=None, tolerance=None, seed=0,
                     settings=None, with_errors=None):
    """
    Komprimiert alle selektierten Layer; ohne weights werden synthetische
    Gewichte aus seed erzeugt. Rekonstruktionsfehler werden standardmäßig
    nur für echte Gewichtsquellen berechnet.
    """
    _check_rank_setting(rank, tolerance)
    if weights is None:
        bound = synthetic_weights(manifest, seed)
        with_errors = bool(with_errors)
    else:
        bound = bind_weights(manifest, weights)
        with_errors = True if with_errors is None else with_errors
    return NetworkCompressor(manifest, settings).compress(bound, rank, tolerance, with_errors)


def rank_sweep(manifest, weights=None, ranks=(16, 8, 4, 2), seed=0, settings=None,
               with_errors=None):
    """Ein Bericht pro Rang, in der Reihenfolge von ranks."""
    ranks = list(ranks)
    if not ranks:
        raise TTShapeError("Rang-Liste darf nicht leer sein")
    for r in ranks:
        _check_rank_setting(r, None)
    if weights is None:
        bound = synthetic_weights(manifest, seed)
        with_errors = bool(with_errors)
    else:
        bound = bind_weights(manifest, weights)
        with_errors = True if with_errors is None else with_errors
    compressor = NetworkCompressor(manifest, settings)
    return [compressor.compress(bound, rank=r, with_errors=with_errors)[1] for r in ranks]


def report_from_model(kernels, manifest, weights=None, settings=None):
    """Bericht einer geladenen Modelldatei; mit weights inkl. Rekonstruktionsfehler."""
    bound = None if weights is None else bind_weights(manifest, weights)
    tt_ranks = [max(k.ranks) for k in kernels.values() if isinstance(k, TTConvKernel)]
    rank = max(tt_ranks) if tt_ranks else None
    return NetworkCompressor(manifest, settings).report(kernels, bound, rank=rank)


def reconstruction_error_report(kernels, weights, manifest, settings=None):
    """
    Relativer Frobenius-Fehler pro Layer plus parametergewichtetes Aggregat.

    Returns:
        {'layers': {layer_id: Fehler}, 'weighted': Aggregat}
    """
    _check_layer_sets(manifest, weights, "Gewichte")
    report = report_from_model(kernels, manifest, weights, settings)
    return {
        'layers': {row.layer_id: row.rel_error for row in report.rows},
        'weighted': report.weighted_error,
    }


# ============================================================
# FORMATIERTE AUSGABE
# ============================================================

def print_bericht(report, stream=None):
    """Druckt einen lesbaren Kompressionsbericht (ohne Zeitstempel)."""
    from .export import format_table

    def out(line=""):
        print(line, file=stream)

    agg = report.aggregates()
    if report.rank is None and report.tolerance is None:
        setting = "aus Modell"
    else:
        setting = _setting_label(report.rank, report.tolerance)
    out("=" * 72)
    out(f"   KOMPRESSIONSBERICHT – {report.manifest_name}")
    out(f"   Einstellung: {setting}")
    out("=" * 72)
    out()
    out(format_table(report))
    out()
    out("-" * 40)
    out(f"  Selektierte Layer:   {agg['n_selected']} von {agg['n_layers']}")
    out(f"  Parameter (dicht):   {agg['total_dense_params']:,}")
    out(f"  Parameter (TT):      {agg['total_tt_params']:,}")
    out(f"  Kompression:         {agg['overall_ratio']}×")
    out(f"  MACs dicht / TT:     {agg['total_dense_macs']:,} / {agg['total_tt_macs']:,}")
    out(f"  Bias-Additionen:     {agg['total_bias_adds']:,}")
    if agg['weighted_error'] is not None:
        out(f"  Rekonstruktionsfehler (gewichtet): {agg['weighted_error']:.3e}")
    out("=" * 72)
