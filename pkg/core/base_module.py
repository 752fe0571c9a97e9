"""
core/base_module.py – Basis-Klasse für alle Layer-Module.

Jedes Modul (dicht, tt) erbt von SchichtModul und implementiert:
    - komprimiere(layer, kernel, ...) → komprimierter (oder durchgereichter) Kern
    - berichtszeile(layer, compressed, reference) → LayerReportRow
    - rekonstruiere(compressed) → DenseConvKernel
"""

from abc import ABC, abstractmethod

import numpy as np

from .config import DEFAULT_SETTINGS
from .tt_conv import bias_adds


class SchichtModul(ABC):
    """
    Abstrakte Basisklasse für Layer-Module.

    Jedes Modul:
        1. Hat eine Modul-ID und einen Namen
        2. Bekommt die Settings (Budgets, Toleranzen)
        3. Verändert nie die Eingangsgewichte
    """

    def __init__(self, modul_id, name, settings=None):
        """
        Args:
            modul_id: z.B. "dense", "tt"
            name: z.B. "TT-Kompression"
            settings: Settings-Instanz (None → Defaults)
        """
        self.modul_id = modul_id
        self.name = name
        self.settings = settings or DEFAULT_SETTINGS

    @abstractmethod
    def komprimiere(self, layer, kernel, rank=None, tolerance=None):
        """
        Args:
            layer: ManifestLayer
            kernel: DenseConvKernel mit den Originalgewichten

        Returns:
            DenseConvKernel (Pass-through) oder TTConvKernel
        """

    @abstractmethod
    def berichtszeile(self, layer, compressed, reference=None):
        """
        Eine Berichtszeile. Mit reference (DenseConvKernel) wird der
        relative Rekonstruktionsfehler eingetragen.
        """

    @abstractmethod
    def rekonstruiere(self, compressed):
        """Dichte Gewichte (DenseConvKernel) des komprimierten Layers."""

    def __repr__(self):
        return f"{type(self).__name__}({self.modul_id!r})"

    # ---- Hilfsmethoden für alle Module ----

    def _relativer_fehler(self, reference, approx):
        """‖W − Ŵ‖_F / ‖W‖_F; Null-Gewichte gelten als exakt darstellbar."""
        ref = float(np.linalg.norm(reference.weights))
        diff = float(np.linalg.norm(reference.weights - approx.weights))
        if ref == 0.0:
            return 0.0 if diff == 0.0 else float('inf')
        return diff / ref

    def _bias_additionen(self, layer):
        return bias_adds(layer.spec, layer.output_size)

