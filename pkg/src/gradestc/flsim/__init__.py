from .codecs import CodecSpec, baseline_quant, baseline_topk, dequantize, densify
from .config import PartitionSpec, SimConfig, config_from_dict, load_config
from .data import Dataset, MixtureSpec, gaussian_mixture, partition_dataset
from .models import ModelSpec, build_model
from .sim import RoundReport, Simulation, local_train

__all__ = [
    "CodecSpec",
    "Dataset",
    "MixtureSpec",
    "ModelSpec",
    "PartitionSpec",
    "RoundReport",
    "SimConfig",
    "Simulation",
    "baseline_quant",
    "baseline_topk",
    "build_model",
    "config_from_dict",
    "dequantize",
    "densify",
    "gaussian_mixture",
    "load_config",
    "local_train",
    "partition_dataset",
]
