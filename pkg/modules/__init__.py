from .modul_dense import ModulDicht
from .modul_tt import ModulTT
