from .datamodel import (DenseTensor, TTTensor, TTMatrix, FactorizationPlan, ConvLayerSpec,
                        DenseConvKernel, TTConvKernel, FeatureMap, ManifestLayer,
                        NetworkManifest, LayerReportRow, CompressionReport)
from .config import Settings, load_settings
from .index_mapping import flat_to_multi, multi_to_flat, plan_factorization
from .tt_core import tt_decompose, tt_element, tt_reconstruct, tt_param_count
from .tt_conv import decompose_kernel, reconstruct_kernel, dense_conv_forward, tt_conv_forward, conv_flops
from .manifest import load_manifest
