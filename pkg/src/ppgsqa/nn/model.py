"""Lightweight residual network with squeeze-and-excitation for 1-D segments.

Graph (per segment of length 960)::

    stem   conv k7 s2 p3 (in -> 32) -> BN -> ReLU -> maxpool k3 s2 p1
    layer1 2 x BasicBlock(32, stride 1)
    layer2 BasicBlock(32 -> 64, stride 2, 1x1 projection) -> BasicBlock(64)
    head   global average pool -> FC(64 -> 2, with bias)

BasicBlock: conv-BN-ReLU-dropout-conv-BN-dropout-[SE]-(+shortcut)-ReLU.
All convolutions and SE dense layers are bias-free.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from ..errors import NonFinite, ShapeMismatch, StaleCache
from . import functional as F
from .params import ParameterStore

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 3
    use_se: bool = True
    reduction_ratio: int = 8
    stem_filters: int = 32
    stage_filters: tuple[int, ...] = (32, 64)
    blocks_per_stage: tuple[int, ...] = (2, 2)
    dropout_p: float = 0.2
    num_classes: int = 2
    segment_len: int = 960

    def __post_init__(self):
        object.__setattr__(self, "stage_filters", tuple(int(c) for c in self.stage_filters))
        object.__setattr__(self, "blocks_per_stage", tuple(int(n) for n in self.blocks_per_stage))
        if not 1 <= self.in_channels <= 4:
            raise ValueError(f"in_channels must be 1..4, got {self.in_channels}")
        if len(self.stage_filters) != len(self.blocks_per_stage):
            raise ValueError("stage_filters and blocks_per_stage differ in length")
        if self.stage_filters[0] != self.stem_filters:
            raise ValueError("first stage width must equal stem width")
        if self.use_se and any(c % self.reduction_ratio for c in self.stage_filters):
            raise ValueError("reduction ratio must divide every stage width")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_filters"] = list(self.stage_filters)
        d["blocks_per_stage"] = list(self.blocks_per_stage)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["stage_filters"] = tuple(d["stage_filters"])
        d["blocks_per_stage"] = tuple(d["blocks_per_stage"])
        return cls(**d)


class BlockSpec(NamedTuple):
    name: str
    in_ch: int
    out_ch: int
    stride: int

    @property
    def projection(self) -> bool:
        return self.stride != 1 or self.in_ch != self.out_ch


def block_plan(config: ModelConfig) -> list[BlockSpec]:
    plan = []
    in_ch = config.stem_filters
    for s, (width, n) in enumerate(zip(config.stage_filters, config.blocks_per_stage)):
        for b in range(n):
            stride = 2 if (s > 0 and b == 0) else 1
            plan.append(BlockSpec(f"layer{s + 1}.block{b}", in_ch, width, stride))
            in_ch = width
    return plan


def _he_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, shape)


def _add_bn(store: ParameterStore, prefix: str, ch: int) -> None:
    store.add_param(f"{prefix}.weight", np.ones(ch))
    store.add_param(f"{prefix}.bias", np.zeros(ch))
    store.add_buffer(f"{prefix}.running_mean", np.zeros(ch))
    store.add_buffer(f"{prefix}.running_var", np.ones(ch))


def init_parameters(config: ModelConfig, rng, dtype=np.float32) -> ParameterStore:
    """Build the store in canonical order; weights are drawn from ``rng`` in
    that same order (He-uniform on fan-in)."""
    store = ParameterStore(dtype)

    def conv(name, o, i, k):
        store.add_param(name, _he_uniform(rng, (o, i, k), i * k))

    c0 = config.stem_filters
    conv("stem.conv.weight", c0, config.in_channels, 7)
    _add_bn(store, "stem.bn", c0)
    for spec in block_plan(config):
        p = spec.name
        conv(f"{p}.conv1.weight", spec.out_ch, spec.in_ch, 3)
        _add_bn(store, f"{p}.bn1", spec.out_ch)
        conv(f"{p}.conv2.weight", spec.out_ch, spec.out_ch, 3)
        _add_bn(store, f"{p}.bn2", spec.out_ch)
        if config.use_se:
            hidden = spec.out_ch // config.reduction_ratio
            store.add_param(f"{p}.se.fc1.weight", _he_uniform(rng, (hidden, spec.out_ch), spec.out_ch))
            store.add_param(f"{p}.se.fc2.weight", _he_uniform(rng, (spec.out_ch, hidden), hidden))
        if spec.projection:
            conv(f"{p}.shortcut.conv.weight", spec.out_ch, spec.in_ch, 1)
            _add_bn(store, f"{p}.shortcut.bn", spec.out_ch)
    width = config.stage_filters[-1]
    store.add_param("fc.weight", _he_uniform(rng, (config.num_classes, width), width))
    store.add_param("fc.bias", np.zeros(config.num_classes))
    return store


# -- building blocks ---------------------------------------------------------

def _bn_fwd(x, store, prefix, training):
    return F.batchnorm1d_forward(
        x, store[f"{prefix}.weight"], store[f"{prefix}.bias"],
        store.buffers.get(f"{prefix}.running_mean"), store.buffers.get(f"{prefix}.running_var"),
        training, momentum=BN_MOMENTUM, eps=BN_EPS)


def _bn_bwd(dy, cache, store, prefix):
    dx, dg, db = F.batchnorm1d_backward(dy, cache)
    store.set_grad(f"{prefix}.weight", dg)
    store.set_grad(f"{prefix}.bias", db)
    return dx


def basic_block_forward(x, store: ParameterStore, spec: BlockSpec, config: ModelConfig,
                        training: bool = False, rng=None):
    p = spec.name
    if x.shape[1] != spec.in_ch:
        raise ShapeMismatch(f"{p}: expected {spec.in_ch} channels, got {x.shape[1]}")
    c = {}
    h, c["conv1"] = F.conv1d_forward(x, store[f"{p}.conv1.weight"], stride=spec.stride, padding=1)
    h, c["bn1"] = _bn_fwd(h, store, f"{p}.bn1", training)
    h, c["relu1"] = F.relu_forward(h)
    h, c["drop1"] = F.dropout_forward(h, config.dropout_p, rng, training)
    h, c["conv2"] = F.conv1d_forward(h, store[f"{p}.conv2.weight"], stride=1, padding=1)
    h, c["bn2"] = _bn_fwd(h, store, f"{p}.bn2", training)
    h, c["drop2"] = F.dropout_forward(h, config.dropout_p, rng, training)
    if config.use_se:
        h, c["se"] = F.se_forward(h, store[f"{p}.se.fc1.weight"], store[f"{p}.se.fc2.weight"])
    if spec.projection:
        sc, c["sc_conv"] = F.conv1d_forward(x, store[f"{p}.shortcut.conv.weight"],
                                            stride=spec.stride, padding=0)
        sc, c["sc_bn"] = _bn_fwd(sc, store, f"{p}.shortcut.bn", training)
    else:
        sc = x
    out, c["relu2"] = F.relu_forward(h + sc)
    return out, c


def basic_block_backward(dout, cache, store: ParameterStore, spec: BlockSpec, config: ModelConfig):
    p = spec.name
    d = F.relu_backward(dout, cache["relu2"])
    if spec.projection:
        dsc = _bn_bwd(d, cache["sc_bn"], store, f"{p}.shortcut.bn")
        dx, dw, _ = F.conv1d_backward(dsc, cache["sc_conv"])
        store.set_grad(f"{p}.shortcut.conv.weight", dw)
    else:
        dx = d
    if config.use_se:
        d, dfc1, dfc2 = F.se_backward(d, cache["se"])
        store.set_grad(f"{p}.se.fc1.weight", dfc1)
        store.set_grad(f"{p}.se.fc2.weight", dfc2)
    d = F.dropout_backward(d, cache["drop2"])
    d = _bn_bwd(d, cache["bn2"], store, f"{p}.bn2")
    d, dw, _ = F.conv1d_backward(d, cache["conv2"])
    store.set_grad(f"{p}.conv2.weight", dw)
    d = F.dropout_backward(d, cache["drop1"])
    d = F.relu_backward(d, cache["relu1"])
    d = _bn_bwd(d, cache["bn1"], store, f"{p}.bn1")
    d, dw, _ = F.conv1d_backward(d, cache["conv1"])
    store.set_grad(f"{p}.conv1.weight", dw)
    return dx + d


class SignalQualityNet:
    """Forward/backward driver for the fixed residual-SE graph.

    A training-mode ``forward`` caches activations and dropout masks; the next
    ``backward`` consumes that cache and writes every gradient buffer of the
    store.
    """

    def __init__(self, config: ModelConfig, store: ParameterStore):
        self.config = config
        self.store = store
        self.plan = block_plan(config)
        self._cache = None
        self.shape_trace: list[tuple[int, ...]] = []

    @classmethod
    def initialize(cls, config: ModelConfig, rng, dtype=np.float32) -> "SignalQualityNet":
        return cls(config, init_parameters(config, rng, dtype))

    def forward(self, x, training: bool | None = None, rng=None):
        store = self.store
        training = store.training if training is None else training
        x = np.asarray(x, dtype=store.dtype)
        if x.ndim != 3 or x.shape[1] != self.config.in_channels:
            raise ShapeMismatch(f"model expects (B, {self.config.in_channels}, L), got {x.shape}")
        trace = [x.shape]
        c = {}
        h, c["stem_conv"] = F.conv1d_forward(x, store["stem.conv.weight"], stride=2, padding=3)
        h, c["stem_bn"] = _bn_fwd(h, store, "stem.bn", training)
        h, c["stem_relu"] = F.relu_forward(h)
        trace.append(h.shape)
        h, c["stem_pool"] = F.maxpool1d_forward(h, 3, 2, 1)
        trace.append(h.shape)
        for i, spec in enumerate(self.plan):
            h, c[spec.name] = basic_block_forward(h, store, spec, self.config, training, rng)
            last_in_stage = i + 1 == len(self.plan) or self.plan[i + 1].name.split(".")[0] != spec.name.split(".")[0]
            if last_in_stage:
                trace.append(h.shape)
        pooled, c["pool"] = F.adaptive_avgpool_forward(h)
        trace.append(pooled.shape + (1,))
        logits, c["fc"] = F.linear_forward(pooled, store["fc.weight"], store["fc.bias"])
        trace.append(logits.shape)
        if not np.all(np.isfinite(logits)):
            raise NonFinite("non-finite logits")
        self.shape_trace = trace
        self._cache = c if training else None
        return logits

    def activation_gates(self) -> list[np.ndarray]:
        """ReLU on/off masks and max-pool argmax indices of the last training
        forward, in graph order. Two forwards that agree on these lie in the
        same linear piece of the network."""
        if self._cache is None:
            raise StaleCache("no cached training forward")
        c = self._cache
        gates = [c["stem_relu"], c["stem_pool"][0]]
        for spec in self.plan:
            bc = c[spec.name]
            gates += [bc["relu1"], bc["relu2"]]
            if "se" in bc:
                gates.append(bc["se"][2] > 0)
        return gates

    def backward(self, dlogits):
        if self._cache is None:
            raise StaleCache("backward without a matching training-mode forward")
        c, self._cache = self._cache, None
        store = self.store
        dlogits = np.asarray(dlogits, dtype=store.dtype)
        d, dw, db = F.linear_backward(dlogits, c["fc"])
        store.set_grad("fc.weight", dw)
        store.set_grad("fc.bias", db)
        d = F.adaptive_avgpool_backward(d, c["pool"])
        for spec in reversed(self.plan):
            d = basic_block_backward(d, c[spec.name], store, spec, self.config)
        d = F.maxpool1d_backward(d, c["stem_pool"])
        d = F.relu_backward(d, c["stem_relu"])
        d = _bn_bwd(d, c["stem_bn"], store, "stem.bn")
        _, dw, _ = F.conv1d_backward(d, c["stem_conv"])
        store.set_grad("stem.conv.weight", dw)
        for name, g in store.grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFinite(f"non-finite gradient for {name}")
        return d


def model_forward(stack, store: ParameterStore, config: ModelConfig, training=False, rng=None):
    return SignalQualityNet(config, store).forward(stack, training, rng)
