"""Low-rank uplink gradient compression with incremental basis replacement,
plus a small deterministic federated-learning simulator to exercise it."""
from .compressor import AblationMode, BasisState, CompressResult, ablation_mode, compress, init_basis
from .decompressor import MirrorState, decompress
from .linalg import TruncatedSvd, full_svd, orthonormality_defect, randomized_svd
from .reshape import GradientTensor, SegmentSpec, flatten_whdc, restore, segment
from .wire import CommLedger, UplinkPayload, decode, encode, record

__version__ = "0.1.0"

__all__ = [
    "AblationMode",
    "BasisState",
    "CommLedger",
    "CompressResult",
    "GradientTensor",
    "MirrorState",
    "SegmentSpec",
    "TruncatedSvd",
    "UplinkPayload",
    "ablation_mode",
    "compress",
    "decode",
    "decompress",
    "encode",
    "flatten_whdc",
    "full_svd",
    "init_basis",
    "orthonormality_defect",
    "randomized_svd",
    "record",
    "restore",
    "segment",
]
