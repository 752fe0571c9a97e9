"""
modules/modul_tt.py – TT-Kompression selektierter Faltungsschichten.

Ablauf pro Layer:
    1. Kern auf die gepolsterten Kanäle bringen (Dummy-Kanäle = 0)
    2. TT-SVD über die Kette (k², c_1·ċ_1, ..., c_N·ċ_N)
    3. Kerne bleiben in float64; auf 32-Bit gerundet wird erst beim Speichern

MACs im Bericht kommen aus conv_flops mit den REALISIERTEN Rängen.
"""

import logging

from core.base_module import SchichtModul
from core.datamodel import LayerReportRow
from core.errors import TTShapeError
from core.tt_conv import conv_flops, decompose_kernel, reconstruct_kernel

logger = logging.getLogger(__name__)


class ModulTT(SchichtModul):

    def __init__(self, settings=None):
        super().__init__("tt", "TT-Kompression", settings)

    def komprimiere(self, layer, kernel, rank=None, tolerance=None):
        if rank is None and tolerance is None:
            raise TTShapeError(f"{layer.layer_id}: weder Rang noch Toleranz angegeben")
        if kernel.spec != layer.spec:
            raise TTShapeError(f"{layer.layer_id}: Kern passt nicht zum Manifest-Layer")
        ttk = decompose_kernel(kernel, rank=rank, tolerance=tolerance, settings=self.settings)
        logger.info("%s: Ränge %s, %d → %d Parameter",
                    layer.layer_id, "-".join(map(str, ttk.ranks)),
                    layer.spec.dense_params, ttk.param_count)
        return ttk

    def rekonstruiere(self, compressed):
        return reconstruct_kernel(compressed, self.settings)

    def berichtszeile(self, layer, compressed, reference=None):
        rel_error = None
        if reference is not None:
            rel_error = self._relativer_fehler(reference, self.rekonstruiere(compressed))
        return LayerReportRow(
            layer_id=layer.layer_id,
            selected=True,
            dense_params=layer.spec.dense_params,
            tt_params=compressed.param_count,
            dense_macs=conv_flops(layer.spec, "dense", layer.output_size),
            tt_macs=conv_flops(layer.spec, "tt", layer.output_size, compressed.ranks),
            bias_adds=self._bias_additionen(layer),
            ranks=compressed.ranks,
            rel_error=rel_error,
        )
