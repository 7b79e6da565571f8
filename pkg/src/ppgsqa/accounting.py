"""Static parameter and multiply-accumulate accounting for a ModelConfig.

MAC conventions:

``elementwise`` (default)
    Conv1d = L_out * C_out * C_in * K, Linear = fan_in * fan_out, and one MAC
    per output element for BN, ReLU, pooling, sigmoid, residual add and SE
    scaling. Dropout is free (inference).
``conv_only``
    Only convolutions and dense layers.
``flops``
    ``elementwise`` with every count doubled (multiply and add counted apart).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .nn.functional import out_length
from .nn.model import ModelConfig, block_plan

CONVENTIONS = ("elementwise", "conv_only", "flops")


@dataclass
class LayerCost:
    name: str
    kind: str
    params: int
    macs: int
    output_shape: tuple[int, ...]


@dataclass
class CostReport:
    config: ModelConfig
    input_len: int
    convention: str
    rows: list[LayerCost] = field(default_factory=list)

    @property
    def params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def params_k(self) -> float:
        return self.params / 1000.0

    @property
    def mmac(self) -> float:
        return self.macs / 1e6

    def to_dict(self) -> dict:
        return {
            "model_config": self.config.to_dict(),
            "input_len": self.input_len,
            "convention": self.convention,
            "layers": [
                {**asdict(r), "output_shape": list(r.output_shape)} for r in self.rows
            ],
            "totals": {"params": self.params, "macs": self.macs,
                       "params_k": round(self.params_k, 2), "mmac": round(self.mmac, 2)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        lines = [f"{'layer':<36} {'kind':<18} {'params':>8} {'MACs':>11}  output"]
        lines.append("-" * len(lines[0]) + "-" * 10)
        for r in self.rows:
            shape = "x".join(str(s) for s in r.output_shape)
            lines.append(f"{r.name:<36} {r.kind:<18} {r.params:>8d} {r.macs:>11d}  {shape}")
        lines.append("-" * len(lines[0]) + "-" * 10)
        lines.append(f"total params: {self.params} ({self.params_k:.2f}k)")
        lines.append(f"total MACs:   {self.macs} ({self.mmac:.2f} MMAC, {self.convention})")
        return "\n".join(lines)


def _rows(config: ModelConfig, input_len: int) -> list[LayerCost]:
    rows: list[LayerCost] = []

    def add(name, kind, params, macs, shape):
        rows.append(LayerCost(name, kind, int(params), int(macs), tuple(shape)))

    def conv(name, c_in, c_out, k, s, p, L):
        L_out = out_length(L, k, s, p)
        add(name, "Conv1d", c_out * c_in * k, L_out * c_out * c_in * k, (c_out, L_out))
        return L_out

    def bn(name, c, L):
        add(name, "BatchNorm1d", 2 * c, c * L, (c, L))

    def relu(name, c, L):
        add(name, "ReLU", 0, c * L, (c, L))

    c0 = config.stem_filters
    L = conv("stem.conv", config.in_channels, c0, 7, 2, 3, input_len)
    bn("stem.bn", c0, L)
    relu("stem.relu", c0, L)
    L = out_length(L, 3, 2, 1)
    add("stem.maxpool", "MaxPool1d", 0, c0 * L, (c0, L))

    for spec in block_plan(config):
        p, c = spec.name, spec.out_ch
        L_in = L
        L = conv(f"{p}.conv1", spec.in_ch, c, 3, spec.stride, 1, L_in)
        bn(f"{p}.bn1", c, L)
        relu(f"{p}.relu1", c, L)
        conv(f"{p}.conv2", c, c, 3, 1, 1, L)
        bn(f"{p}.bn2", c, L)
        if config.use_se:
            hidden = c // config.reduction_ratio
            add(f"{p}.se.pool", "AdaptiveAvgPool1d", 0, c, (c, 1))
            add(f"{p}.se.fc1", "Linear", hidden * c, hidden * c, (hidden,))
            add(f"{p}.se.relu", "ReLU", 0, hidden, (hidden,))
            add(f"{p}.se.fc2", "Linear", c * hidden, c * hidden, (c,))
            add(f"{p}.se.sigmoid", "Sigmoid", 0, c, (c,))
            add(f"{p}.se.scale", "SEScale", 0, c * L, (c, L))
        if spec.projection:
            conv(f"{p}.shortcut.conv", spec.in_ch, c, 1, spec.stride, 0, L_in)
            bn(f"{p}.shortcut.bn", c, L)
        add(f"{p}.add", "Add", 0, c * L, (c, L))
        relu(f"{p}.relu2", c, L)

    width = config.stage_filters[-1]
    add("pool", "AdaptiveAvgPool1d", 0, width, (width, 1))
    add("fc", "Linear", width * config.num_classes + config.num_classes,
        width * config.num_classes, (config.num_classes,))
    return rows


def emit_cost_report(config: ModelConfig, input_len: int = 960,
                     convention: str = "elementwise") -> CostReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; pick one of {CONVENTIONS}")
    rows = _rows(config, input_len)
    if convention == "conv_only":
        for r in rows:
            if r.kind not in ("Conv1d", "Linear"):
                r.macs = 0
    elif convention == "flops":
        for r in rows:
            r.macs *= 2
    return CostReport(config, input_len, convention, rows)


def count_params(config: ModelConfig) -> int:
    return emit_cost_report(config).params


def count_macs(config: ModelConfig, input_len: int = 960, convention: str = "elementwise") -> int:
    return emit_cost_report(config, input_len, convention).macs
