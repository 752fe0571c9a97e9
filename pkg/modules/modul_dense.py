"""
modules/modul_dense.py – Pass-through für nicht selektierte Layer.

Die Gewichte bleiben unverändert (dasselbe Objekt, dieselben Bytes);
im Bericht erscheint der Layer mit Verhältnis 1.
"""

from core.base_module import SchichtModul
from core.datamodel import LayerReportRow
from core.tt_conv import conv_flops


class ModulDicht(SchichtModul):

    def __init__(self, settings=None):
        super().__init__("dense", "Dichter Pass-through", settings)

    def komprimiere(self, layer, kernel, rank=None, tolerance=None):
        return kernel

    def rekonstruiere(self, compressed):
        return compressed

    def berichtszeile(self, layer, compressed, reference=None):
        macs = conv_flops(layer.spec, "dense", layer.output_size)
        return LayerReportRow(
            layer_id=layer.layer_id,
            selected=False,
            dense_params=layer.spec.dense_params,
            tt_params=layer.spec.dense_params,
            dense_macs=macs,
            tt_macs=macs,
            bias_adds=self._bias_additionen(layer),
            rel_error=None if reference is None else self._relativer_fehler(reference, compressed),
        )
