"""Feature lifting, cross-view alignment, weighted fusion and vector decoding."""
from .cva import CvaParams, align_fuse, cva_apply, cva_layer, fit_cva, identity_cva, self_enhance
from .decode import decode_map
from .lss import FrustumTensor, hard_lss_pool, soft_lss_pool
from .snf import SnfParams, default_snf_params, snf_fuse

__all__ = ["CvaParams", "align_fuse", "cva_apply", "cva_layer", "fit_cva", "identity_cva",
           "self_enhance", "decode_map", "FrustumTensor", "hard_lss_pool", "soft_lss_pool",
           "SnfParams", "default_snf_params", "snf_fuse"]
