#!/usr/bin/env python3
"""
cli.py – Kommandozeile für TT-Kompression von Faltungsschichten.

Unterbefehle:
    compress     Manifest (+ Gewichte) → Modelldatei + Bericht
    verify       TT-Forward gegen dichtes Orakel auf Zufallseingaben
    sweep        Rang-Studie → Vergleichstabelle, CSV, Excel
    report       Bericht einer Modelldatei (mit --weights inkl. Fehler)
    reconstruct  Modelldatei → dichte Gewichtsdatei

Exit-Codes: 0 Erfolg, 1 Rechen-/I/O-Fehler, 2 Aufruf- oder Validierungsfehler.

Verwendung:
    python cli.py compress --manifest config/yolov5s_like.yaml --rank 8 --out model.ttcv
    python cli.py verify --model model.ttcv --trials 10 --seed 0
    python cli.py sweep --manifest config/yolov5s_like.yaml --ranks 16,8,4,2 --out sweep/
"""

import argparse
import logging
import os
import sys
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.config import STRATEGIES, load_settings
from core.datamodel import FeatureMap, TTConvKernel
from core.errors import (CompressionFailure, ManifestParseError, ManifestValidationError,
                         ModelFileError, TTError, TTIntegrityError)
from core.export import export_sweep, sweep_table, write_rows
from core.integration import (NetworkCompressor, compress_network, print_bericht,
                              rank_sweep, report_from_model)
from core.manifest import load_manifest, manifest_summary
from core.serialization import load_model, load_weights, save_model, save_weights
from core.tt_conv import dense_conv_forward, reconstruct_kernel, relative_deviation, tt_conv_forward

logger = logging.getLogger("cli")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Ungültiger Aufruf; führt zu Exit-Code 2."""


# ============================================================
# KONFIGURATION
# ============================================================

@dataclass(frozen=True)
class CliConfig:
    command: str
    manifest: Optional[str] = None
    weights: Optional[str] = None
    model: Optional[str] = None
    out: Optional[str] = None
    ranks: tuple = ()
    order: Optional[int] = None
    strategy: Optional[str] = None
    tolerance: Optional[float] = None
    seed: int = 0
    trials: int = 10
    fmt: str = "table"
    verbose: int = 0
    config: Optional[str] = None
    workers: Optional[int] = None

    @classmethod
    def from_args(cls, ns):
        ranks = ()
        if getattr(ns, 'rank', None) is not None:
            ranks = (ns.rank,)
        elif getattr(ns, 'ranks', None) is not None:
            ranks = _parse_ranks(ns.ranks)
        return cls(
            command=ns.command,
            manifest=getattr(ns, 'manifest', None),
            weights=getattr(ns, 'weights', None),
            model=getattr(ns, 'model', None),
            out=getattr(ns, 'out', None),
            ranks=ranks,
            order=getattr(ns, 'order', None),
            strategy=getattr(ns, 'strategy', None),
            tolerance=getattr(ns, 'tolerance', None),
            seed=getattr(ns, 'seed', 0),
            trials=getattr(ns, 'trials', 10),
            fmt=getattr(ns, 'format', 'table'),
            verbose=ns.verbose,
            config=ns.config,
            workers=ns.workers,
        )

    def validate(self):
        """Prüft alles, was vor der eigentlichen Arbeit prüfbar ist."""
        for label, path in (("--manifest", self.manifest), ("--weights", self.weights),
                            ("--model", self.model), ("--config", self.config)):
            if path is not None and not os.path.exists(path):
                raise UsageError(f"{label}: Datei nicht gefunden: {path}")
        if any(r < 1 for r in self.ranks):
            raise UsageError(f"Ränge müssen ≥ 1 sein, erhalten {list(self.ranks)}")
        if self.command == "compress" and bool(self.ranks) == (self.tolerance is not None):
            raise UsageError("compress braucht genau eines von --rank und --tolerance")
        if self.command == "sweep" and not self.ranks:
            raise UsageError("sweep braucht eine nicht-leere --ranks-Liste")
        if self.tolerance is not None and not 0 < self.tolerance < 1:
            raise UsageError(f"--tolerance muss in (0, 1) liegen, ist {self.tolerance}")
        if self.order is not None and self.order < 1:
            raise UsageError(f"--order muss ≥ 1 sein, ist {self.order}")
        if self.trials < 1:
            raise UsageError(f"--trials muss ≥ 1 sein, ist {self.trials}")
        return self


def _parse_ranks(text):
    try:
        ranks = tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise UsageError(f"--ranks: kommagetrennte Ganzzahlen erwartet, erhalten '{text}'")
    if not ranks:
        raise UsageError("--ranks darf nicht leer sein")
    return ranks


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ttconv", description="TT-Kompression von Faltungsschichten")
    parser.add_argument('-v', '--verbose', action='count', default=0, help='mehr Log-Ausgaben (-v INFO, -vv DEBUG)')
    parser.add_argument('--config', default=None, help='Settings-YAML (z.B. config/ttconv.yaml)')
    parser.add_argument('--workers', type=int, default=None, help='Threads für die Kompression (überschreibt Settings)')
    sub = parser.add_subparsers(dest='command', required=True)

    def manifest_args(p):
        p.add_argument('--manifest', required=True, help='Netzwerk-Manifest (YAML)')
        p.add_argument('--weights', default=None, help='dichte Gewichtsdatei; ohne → synthetisch')
        p.add_argument('--order', type=int, default=None, help='TT-Ordnung N (überschreibt Manifest)')
        p.add_argument('--strategy', choices=STRATEGIES, default=None, help='Faktorisierungsstrategie')
        p.add_argument('--seed', type=int, default=0, help='Seed für synthetische Gewichte')

    def format_arg(p):
        p.add_argument('--format', choices=('table', 'rows'), default='table',
                       help='Tabelle oder maschinenlesbare Zeilen (JSON Lines)')

    p = sub.add_parser('compress', help='Manifest komprimieren und Modelldatei schreiben')
    manifest_args(p)
    p.add_argument('--rank', type=int, default=None, help='uniformer TT-Rang r')
    p.add_argument('--tolerance', type=float, default=None, help='relative Fehlerschranke statt Rang')
    p.add_argument('--out', required=True, help='Ziel-Modelldatei')
    format_arg(p)

    p = sub.add_parser('verify', help='TT-Forward gegen dichtes Orakel prüfen')
    p.add_argument('--model', required=True)
    p.add_argument('--trials', type=int, default=10)
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('sweep', help='Rang-Studie')
    manifest_args(p)
    p.add_argument('--ranks', required=True, help='kommagetrennt, z.B. 16,8,4,2')
    p.add_argument('--out', required=True, help='Ausgabeordner')
    format_arg(p)

    p = sub.add_parser('report', help='Bericht einer Modelldatei')
    p.add_argument('--model', required=True)
    p.add_argument('--weights', default=None, help='Originalgewichte für Rekonstruktionsfehler')
    format_arg(p)

    p = sub.add_parser('reconstruct', help='dichte Gewichte aus einer Modelldatei')
    p.add_argument('--model', required=True)
    p.add_argument('--out', required=True, help='Ziel-Gewichtsdatei')

    return parser


# ============================================================
# UNTERBEFEHLE
# ============================================================

def _print_manifest(manifest):
    s = manifest_summary(manifest)
    print(f"Manifest '{s['name']}': {s['n_layers']} Layer, {s['n_selected']} selektiert "
          f"({s['selected_dense_params']:,} Parameter), {s['n_padded_layers']} mit Dummy-Kanälen, "
          f"Ordnung {s['order']} ({s['strategy']})")


def _print_report(report, cfg):
    if cfg.fmt == "rows":
        write_rows(report, sys.stdout)
    else:
        print_bericht(report)


def cmd_compress(cfg, settings):
    manifest = load_manifest(cfg.manifest, order=cfg.order, strategy=cfg.strategy, settings=settings)
    weights = load_weights(cfg.weights) if cfg.weights else None
    rank = cfg.ranks[0] if cfg.ranks else None
    kernels, report = compress_network(manifest, weights, rank=rank, tolerance=cfg.tolerance,
                                       seed=cfg.seed, settings=settings)
    save_model(kernels, manifest, cfg.out)
    if cfg.fmt == "table":
        _print_manifest(manifest)
    _print_report(report, cfg)
    return EXIT_OK


def _verify_extent(size, k, cap):
    return max(k, min(size, cap))


def cmd_verify(cfg, settings):
    kernels, manifest = load_model(cfg.model, settings=settings)
    tol = settings.oracle_tolerance
    worst = (0.0, None, None)
    failed = False

    print(f"{'layer_id':<28} {'trials':>6} {'max_dev':>10}  status")
    for pos, layer in enumerate(manifest.layers):
        kernel = kernels[layer.layer_id]
        if not isinstance(kernel, TTConvKernel):
            print(f"{layer.layer_id:<28} {'-':>6} {'-':>10}  pass-through")
            continue
        try:
            dense = reconstruct_kernel(kernel, settings)
        except TTIntegrityError as exc:
            print(f"{layer.layer_id:<28} {'-':>6} {'-':>10}  FEHLER ({exc})")
            failed = True
            continue

        spec = layer.spec
        h = _verify_extent(layer.input_size[0], spec.k, settings.verify_max_spatial)
        w = _verify_extent(layer.input_size[1], spec.k, settings.verify_max_spatial)
        rng = np.random.default_rng([cfg.seed, pos])
        layer_worst, layer_trial = 0.0, 0
        for trial in range(cfg.trials):
            fm = FeatureMap(rng.standard_normal((h, w, spec.in_channels)))
            dev = relative_deviation(tt_conv_forward(kernel, fm).data,
                                     dense_conv_forward(dense, fm).data)
            if dev > layer_worst:
                layer_worst, layer_trial = dev, trial
        ok = layer_worst <= tol
        failed = failed or not ok
        print(f"{layer.layer_id:<28} {cfg.trials:>6} {layer_worst:>10.3e}  {'OK' if ok else 'FEHLER'}")
        if layer_worst > worst[0]:
            worst = (layer_worst, layer.layer_id, layer_trial)

    print(f"max. relative Abweichung: {worst[0]:.3e} (Schranke {tol:g})")
    if failed:
        if worst[1] is not None and worst[0] > tol:
            print(f"schlechtester Layer: {worst[1]} (Versuch {worst[2]})")
        return EXIT_FAILURE
    return EXIT_OK


def cmd_sweep(cfg, settings):
    manifest = load_manifest(cfg.manifest, order=cfg.order, strategy=cfg.strategy, settings=settings)
    weights = load_weights(cfg.weights) if cfg.weights else None
    reports = rank_sweep(manifest, weights, cfg.ranks, seed=cfg.seed, settings=settings)
    export_sweep(reports, cfg.out)
    if cfg.fmt == "rows":
        for rep in reports:
            write_rows(rep, sys.stdout)
    else:
        print(f"Rang-Studie – {manifest.name}")
        _print_manifest(manifest)
        print(sweep_table(reports).to_string(index=False))
    return EXIT_OK


def cmd_report(cfg, settings):
    kernels, manifest = load_model(cfg.model, settings=settings)
    weights = load_weights(cfg.weights) if cfg.weights else None
    _print_report(report_from_model(kernels, manifest, weights, settings), cfg)
    return EXIT_OK


def cmd_reconstruct(cfg, settings):
    kernels, manifest = load_model(cfg.model, settings=settings)
    dense = NetworkCompressor(manifest, settings).reconstruct(kernels)
    save_weights(dense, cfg.out)
    print(f"{len(dense)} Layer → {cfg.out}")
    return EXIT_OK


COMMANDS = {
    'compress': cmd_compress,
    'verify': cmd_verify,
    'sweep': cmd_sweep,
    'report': cmd_report,
    'reconstruct': cmd_reconstruct,
}

_HINTS = {
    CompressionFailure: "Hinweis: Gewichtsdatei und Manifest müssen dieselben Layer und Formen haben.",
    ModelFileError: "Hinweis: Modelldatei neu mit 'compress' erzeugen.",
    TTIntegrityError: "Hinweis: Modelldatei ist vermutlich beschädigt.",
    ManifestValidationError: "Hinweis: Schema siehe README (ttconv-manifest/1).",
}


def _hint(exc):
    for cls, hint in _HINTS.items():
        if isinstance(exc, cls):
            return hint
    return None


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)

    level = logging.WARNING
    if ns.verbose == 1:
        level = logging.INFO
    elif ns.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s: %(message)s")
    logging.getLogger().setLevel(level)

    try:
        cfg = CliConfig.from_args(ns).validate()
        try:
            settings = load_settings(cfg.config).with_overrides(workers=cfg.workers)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"Settings: {exc}") from exc
        return COMMANDS[cfg.command](cfg, settings)
    except (UsageError, ManifestParseError, ManifestValidationError) as exc:
        print(f"{parser.prog}: Fehler: {exc}", file=sys.stderr)
        hint = _hint(exc)
        if hint:
            print(hint, file=sys.stderr)
        return EXIT_USAGE
    except (TTError, OSError) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        hint = _hint(exc)
        if hint:
            print(hint, file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
