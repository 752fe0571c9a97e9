"""
core/export.py – Standardisierte Export-Formate für Kompressionsberichte.

    - Tabelle (pandas, für Menschen)
    - Zeilen (JSON Lines, eine selbstbeschreibende Zeile pro Layer,
      stabile Feldnamen, jede Zeile gegen ROW_SCHEMA geprüft)
    - Rang-Studie: Vergleichstabelle + CSV + Excel mit mehreren Sheets
"""

import json
import logging
import os

import pandas as pd

logger = logging.getLogger(__name__)

# Vergleichswerte einer Rangstudie an einem YOLOv5s-Netz (selektierte Layer,
# VOC): Rang → (Kompression, Parameter in K, GFLOPs). Nur zur Einordnung;
# die dortige Layer-Auswahl ist unbekannt.
REFERENCE_TARGETS = {
    None: (1, 2467.84, 16.5),
    16: (24, 101.4, 18.4),
    8: (95, 25.9, 17.2),
    4: (367, 6.73, 16.7),
    2: (1363, 1.81, 16.6),
}

# Feldname → erlaubte Typen; 'record' unterscheidet Layer- und Summenzeilen
ROW_SCHEMA = {
    'record': (str,),
    'manifest': (str,),
    'rank': (int, type(None)),
    'tolerance': (float, type(None)),
    'layer_id': (str,),
    'selected': (bool,),
    'dense_params': (int,),
    'tt_params': (int,),
    'ratio': (float,),
    'dense_macs': (int,),
    'tt_macs': (int,),
    'bias_adds': (int,),
    'ranks': (str,),
    'rel_error': (float, type(None)),
}


class RowSchemaError(ValueError):
    """Eine ausgegebene Zeile entspricht nicht ROW_SCHEMA."""


def validate_row(row):
    """Prüft eine Zeile gegen ROW_SCHEMA (Felder, Typen, Reihenfolge egal)."""
    missing = set(ROW_SCHEMA) - set(row)
    extra = set(row) - set(ROW_SCHEMA)
    if missing or extra:
        raise RowSchemaError(f"Felder fehlen {sorted(missing)} / überzählig {sorted(extra)}")
    for key, types in ROW_SCHEMA.items():
        value = row[key]
        if isinstance(value, bool) and bool not in types:
            raise RowSchemaError(f"{key}: bool nicht erlaubt")
        if not isinstance(value, types):
            raise RowSchemaError(f"{key}: Typ {type(value).__name__} nicht erlaubt")
    if row['record'] not in ('layer', 'total'):
        raise RowSchemaError(f"record: '{row['record']}' unbekannt")
    return row


# ============================================================
# EINZELBERICHT
# ============================================================

def report_to_frame(report):
    """Layer-Zeilen als DataFrame (Manifest-Reihenfolge)."""
    columns = ['layer_id', 'selected', 'dense_params', 'tt_params', 'ratio',
               'dense_macs', 'tt_macs', 'bias_adds', 'ranks', 'rel_error']
    return pd.DataFrame([row.to_dict() for row in report.rows], columns=columns)


def format_table(report):
    df = report_to_frame(report)
    if df.empty:
        return "(keine Layer)"
    if df['rel_error'].isna().all():
        df = df.drop(columns=['rel_error'])
    return df.to_string(index=False)


def report_rows(report):
    """Alle Zeilen eines Berichts (Layer + eine Summenzeile), validiert."""
    common = {'record': 'layer', 'manifest': report.manifest_name,
              'rank': report.rank, 'tolerance': report.tolerance}
    rows = []
    for row in report.rows:
        d = dict(common, **row.to_dict())
        d['ratio'] = float(d['ratio'])
        d['rel_error'] = None if d['rel_error'] is None else float(d['rel_error'])
        rows.append(validate_row(d))

    agg = report.aggregates()
    total = dict(common, record='total', layer_id='*', selected=agg['n_selected'] > 0,
                 dense_params=agg['total_dense_params'], tt_params=agg['total_tt_params'],
                 ratio=float(agg['overall_ratio']), dense_macs=agg['total_dense_macs'],
                 tt_macs=agg['total_tt_macs'], bias_adds=agg['total_bias_adds'], ranks='',
                 rel_error=None if agg['weighted_error'] is None else float(agg['weighted_error']))
    rows.append(validate_row(total))
    return rows


def write_rows(report, stream):
    """JSON Lines mit sortierten Schlüsseln (byte-stabil)."""
    for row in report_rows(report):
        stream.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")


# ============================================================
# RANG-STUDIE
# ============================================================

def sweep_table(reports):
    """
    Vergleichstabelle: eine Zeile "original" plus eine Zeile pro Rang.

    Spalten: Rang, Parameter der selektierten Layer (K), Kompression,
    MACs aller Manifest-Layer (G) und die Referenzwerte.
    """
    rows = []
    if reports:
        first = reports[0]
        rows.append(_sweep_row("original", None, first.total_dense_params, 1.0,
                               first.total_dense_macs))
    for rep in reports:
        rows.append(_sweep_row(str(rep.rank), rep.rank, rep.total_tt_params,
                               float(f"{rep.overall_ratio:.4g}"), rep.total_tt_macs))
    return pd.DataFrame(rows)


def _sweep_row(label, rank, params, ratio, macs):
    ref = REFERENCE_TARGETS.get(rank, (None, None, None))
    return {
        'rank': label,
        'params_selected_k': round(params / 1000, 2),
        'comp_rate': ratio,
        'gmacs': round(macs / 1e9, 4),
        'reference_comp_rate': ref[0],
        'reference_params_k': ref[1],
        'reference_gflops': ref[2],
    }


def export_sweep(reports, output_dir):
    """
    Schreibt sweep.csv, rank_<r>.csv pro Rang und sweep.xlsx.

    Bei einem I/O-Fehler werden bereits geschriebene Dateien wieder entfernt.
    """
    written = []
    try:
        os.makedirs(output_dir, exist_ok=True)
        table = sweep_table(reports)

        path = os.path.join(output_dir, 'sweep.csv')
        written.append(path)
        table.to_csv(path, index=False, encoding='utf-8')

        for rep in reports:
            path = os.path.join(output_dir, f'rank_{rep.rank}.csv')
            written.append(path)
            report_to_frame(rep).to_csv(path, index=False, encoding='utf-8')

        path = os.path.join(output_dir, 'sweep.xlsx')
        written.append(path)
        with pd.ExcelWriter(path, engine='openpyxl') as writer:
            table.to_excel(writer, sheet_name='Vergleich', index=False)
            for i, rep in enumerate(reports):
                report_to_frame(rep).to_excel(writer, sheet_name=f'{i + 1} Rang {rep.rank}',
                                              index=False)
    except OSError:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise

    logger.info("Rang-Studie → %s (%d Dateien)", output_dir, len(written))
    return written
