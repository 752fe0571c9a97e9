"""
core/config.py – Laufzeit-Einstellungen (YAML).

Die Einstellungen sind optional: ohne Datei gelten die Defaults.
Unbekannte Schlüssel werden gemeldet, aber nicht als Fehler behandelt.

Verwendung:
    settings = load_settings("config/ttconv.yaml")
    settings.oracle_tolerance   → 1e-6
"""

import logging
import os
from dataclasses import dataclass, fields, replace

import yaml

logger = logging.getLogger(__name__)

STRATEGIES = ("balanced", "explicit")


@dataclass(frozen=True)
class Settings:
    element_budget: int = 2 ** 28      # max. Elemente einer dichten Rekonstruktion
    dummy_tolerance: float = 1e-12     # absolut, für Dummy-Kanal-Prüfung
    oracle_tolerance: float = 1e-6     # TT-Forward vs. dichtes Orakel
    default_order: int = 4
    default_strategy: str = "balanced"
    workers: int = 1
    verify_max_spatial: int = 16

    def __post_init__(self):
        problems = []
        if self.element_budget < 1:
            problems.append("element_budget muss ≥ 1 sein")
        if not self.dummy_tolerance > 0:
            problems.append("dummy_tolerance muss > 0 sein")
        if not self.oracle_tolerance > 0:
            problems.append("oracle_tolerance muss > 0 sein")
        if self.default_order < 1:
            problems.append("default_order muss ≥ 1 sein")
        if self.default_strategy not in STRATEGIES:
            problems.append(f"default_strategy muss eine von {STRATEGIES} sein")
        if self.workers < 1:
            problems.append("workers muss ≥ 1 sein")
        if self.verify_max_spatial < 1:
            problems.append("verify_max_spatial muss ≥ 1 sein")
        if problems:
            raise ValueError("; ".join(problems))

    def with_overrides(self, **overrides):
        """Kopie mit überschriebenen Feldern (None-Werte werden ignoriert)."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


DEFAULT_SETTINGS = Settings()


def load_settings(filepath=None):
    """Lädt Settings aus YAML; ohne Pfad → Defaults."""
    if filepath is None:
        return DEFAULT_SETTINGS
    if not os.path.exists(filepath):
        raise FileNotFoundError(f"Konfiguration nicht gefunden: {filepath}")

    with open(filepath, 'r', encoding='utf-8') as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{filepath}: Top-Level muss ein Mapping sein")

    known = {f.name for f in fields(Settings)}
    for key in sorted(set(data) - known):
        logger.warning("Unbekannter Konfigurationsschlüssel '%s' in %s", key, filepath)

    return Settings(**{k: v for k, v in data.items() if k in known})
