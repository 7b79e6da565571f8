"""Numpy 1-D network engine: layer kernels, parameter store, model graph."""
from .model import (BlockSpec, ModelConfig, SignalQualityNet, basic_block_backward,
                    basic_block_forward, block_plan, init_parameters, model_forward)
from .params import ParameterStore

__all__ = [
    "BlockSpec", "ModelConfig", "ParameterStore", "SignalQualityNet", "basic_block_backward",
    "basic_block_forward", "block_plan", "init_parameters", "model_forward",
]
