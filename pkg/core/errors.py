"""
core/errors.py – Fehlerhierarchie für TT-Kompression.

Alle Fehler erben von TTError. Werttypische Fehler erben zusätzlich von
ValueError bzw. IndexError, damit Aufrufer auch Builtins abfangen können.
"""


class TTError(Exception):
    """Basisklasse aller Fehler dieses Pakets."""


class TTRangeError(TTError, IndexError):
    """Index außerhalb des gültigen Bereichs."""

    def __init__(self, message, mode=None):
        super().__init__(message)
        self.mode = mode


class TTShapeError(TTError, ValueError):
    """Formen passen nicht zusammen."""


class TTDataError(TTError, ValueError):
    """Ungültige Daten (NaN, Inf, ...)."""


class TTPlanError(TTError, ValueError):
    """Faktorisierungsplan nicht erfüllbar."""


class TTCapacityError(TTError, MemoryError):
    """Ergebnis würde das konfigurierte Element-Budget überschreiten."""


class TTIntegrityError(TTError, ValueError):
    """Dummy-Kanäle rekonstruieren nicht zu Null – Modell vermutlich beschädigt."""


# ── Manifest ───────────────────────────────────────────

class ManifestParseError(TTError, ValueError):
    """YAML nicht lesbar; trägt Zeile/Spalte wenn bekannt."""

    def __init__(self, message, line=None, column=None):
        where = f" (Zeile {line}, Spalte {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ManifestValidationError(TTError, ValueError):
    """Manifest strukturell lesbar, aber inhaltlich ungültig.

    Sammelt ALLE Verstöße, nicht nur den ersten.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} Manifest-Verstöße:\n{lines}")


# ── Modelldateien ──────────────────────────────────────

class ModelFileError(TTError):
    """Basis für Fehler beim Lesen von Modelldateien."""


class CorruptionError(ModelFileError, ValueError):
    def __init__(self, message, section=None):
        prefix = f"[{section}] " if section else ""
        super().__init__(f"{prefix}{message}")
        self.section = section


class UnsupportedVersionError(ModelFileError, ValueError):
    def __init__(self, version, supported):
        super().__init__(
            f"Formatversion {version} wird nicht unterstützt (unterstützt: {supported})"
        )
        self.version = version


# ── Netzwerk-Ebene ─────────────────────────────────────

class CompressionFailure(TTError):
    """Ein oder mehrere Layer konnten nicht komprimiert werden.

    failures: Liste von (layer_id, Exception)
    """

    def __init__(self, failures):
        self.failures = list(failures)
        lines = "\n".join(f"  - {lid}: {exc}" for lid, exc in self.failures)
        super().__init__(f"{len(self.failures)} Layer fehlgeschlagen:\n{lines}")
