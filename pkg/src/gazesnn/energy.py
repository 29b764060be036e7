"""Operation counting and the MAC/AC energy estimate.

A layer is charged per multiply-accumulate when it consumes real-valued
input ("mac" kind) and per accumulate when it consumes binary spikes
("spiking" kind): with 0/1 operands, each would-be multiply degenerates to a
conditional add, so spiking work scales with the measured firing rate and
the number of timesteps. ``timesteps`` on a cost row is the number of times
the layer actually executes in one inference: the stem runs once (its input
is static across timesteps), everything downstream runs every step.

Elementwise work (normalization after fusion, residual adds, scaling) is
excluded from the counts, which is noted in the report footer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .blocks import EgSpikeFormer, model_forward
from .errors import ContractError

MAC_LAYER = "mac"
SPIKING_LAYER = "spiking"

PJ_TO_MJ = 1e-9

DEFAULT_NOTES = (
    "elementwise ops (batch norm at inference, residual adds, scaling) excluded from counts",
    "stem layers execute once per inference: the input image is static across timesteps",
    "spiking matmul firing rate taken from its binary operand (query side when both are binary)",
)


@dataclass(frozen=True)
class EnergyConstants:
    """Energy per multiply-accumulate and per accumulate, picojoules."""

    e_mac_pj: float = 4.6
    e_ac_pj: float = 0.9

    def __post_init__(self):
        if self.e_mac_pj <= 0 or self.e_ac_pj <= 0:
            raise ContractError("energy constants must be positive")


# --- layer shape descriptors -------------------------------------------------


@dataclass(frozen=True)
class ConvShape:
    c_in: int
    c_out: int
    h_out: int
    w_out: int
    kernel: int
    groups: int = 1


@dataclass(frozen=True)
class MatmulShape:
    m: int
    k: int
    n: int


def count_flops(shape) -> int:
    """Multiply-accumulate count of one execution of a layer."""
    if isinstance(shape, ConvShape):
        dims = (shape.c_in, shape.c_out, shape.h_out, shape.w_out, shape.kernel, shape.groups)
        if any(d is None or d <= 0 for d in dims):
            raise ContractError(f"conv layer not fully shaped: {shape}")
        if shape.c_in % shape.groups:
            raise ContractError(f"groups {shape.groups} must divide c_in {shape.c_in}")
        return shape.c_out * shape.h_out * shape.w_out * (
            shape.kernel * shape.kernel * shape.c_in // shape.groups
        )
    if isinstance(shape, MatmulShape):
        if any(d is None or d <= 0 for d in (shape.m, shape.k, shape.n)):
            raise ContractError(f"matmul layer not fully shaped: {shape}")
        return shape.m * shape.k * shape.n
    raise ContractError(f"unknown layer description: {shape!r}")


def count_sops(shape, firing_rate: float, timesteps: int) -> float:
    """Accumulate count of a spike-driven layer over a full inference."""
    if not 0.0 <= firing_rate <= 1.0:
        raise ContractError(f"firing_rate must be in [0, 1], got {firing_rate}")
    if timesteps < 1:
        raise ContractError(f"timesteps must be >= 1, got {timesteps}")
    return firing_rate * timesteps * count_flops(shape)


# --- cost rows and the report -------------------------------------------------


@dataclass
class LayerCost:
    """Per-layer op counts: kind, ops per execution, executions, firing rate."""

    layer_name: str
    kind: str
    flops_per_timestep: int
    timesteps: int
    firing_rate: float | None = None

    def __post_init__(self):
        if self.kind not in (MAC_LAYER, SPIKING_LAYER):
            raise ContractError(f"kind must be '{MAC_LAYER}' or '{SPIKING_LAYER}', got {self.kind!r}")
        if self.flops_per_timestep < 0:
            raise ContractError(f"flops_per_timestep must be >= 0, got {self.flops_per_timestep}")
        if self.timesteps < 1:
            raise ContractError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.kind == SPIKING_LAYER:
            if self.firing_rate is None or not 0.0 <= self.firing_rate <= 1.0:
                raise ContractError(
                    f"spiking layer {self.layer_name!r} needs firing_rate in [0, 1], "
                    f"got {self.firing_rate}"
                )
        elif self.firing_rate is not None:
            raise ContractError(f"mac layer {self.layer_name!r} must not carry a firing rate")

    def op_count(self) -> float:
        """MACs for mac layers, ACs for spiking layers, over one inference."""
        if self.kind == MAC_LAYER:
            return float(self.flops_per_timestep) * self.timesteps
        return self.firing_rate * self.timesteps * float(self.flops_per_timestep)


@dataclass
class LayerEnergy:
    layer_name: str
    kind: str
    ops: float
    energy_mj: float
    firing_rate: float | None
    timesteps: int


@dataclass
class EnergyReport:
    layers: list
    total_mac_mj: float
    total_spiking_mj: float
    total_mj: float
    constants: EnergyConstants
    timesteps: int
    notes: tuple = DEFAULT_NOTES

    def to_json_dict(self) -> dict:
        return {
            "schema": "energy-report/1",
            "constants": {"e_mac_pj": self.constants.e_mac_pj, "e_ac_pj": self.constants.e_ac_pj},
            "timesteps": self.timesteps,
            "layers": [
                {
                    "layer": le.layer_name,
                    "kind": le.kind,
                    "ops": le.ops,
                    "energy_mj": le.energy_mj,
                    "firing_rate": le.firing_rate,
                    "timesteps": le.timesteps,
                }
                for le in self.layers
            ],
            "total_mac_mj": self.total_mac_mj,
            "total_spiking_mj": self.total_spiking_mj,
            "total_mj": self.total_mj,
            "notes": list(self.notes),
        }

    def format_table(self) -> str:
        rows = [f"{'layer':<16} {'kind':<8} {'rate':>6} {'execs':>5} {'ops':>14} {'energy (mJ)':>14}"]
        rows.append("-" * len(rows[0]))
        for le in self.layers:
            rate = f"{le.firing_rate:.3f}" if le.firing_rate is not None else "-"
            rows.append(
                f"{le.layer_name:<16} {le.kind:<8} {rate:>6} {le.timesteps:>5} "
                f"{le.ops:>14.0f} {le.energy_mj:>14.9f}"
            )
        rows.append("-" * len(rows[0]))
        rows.append(f"{'mac total':<38} {self.total_mac_mj:>26.9f}")
        rows.append(f"{'spiking total':<38} {self.total_spiking_mj:>26.9f}")
        rows.append(f"{'grand total':<38} {self.total_mj:>26.9f}")
        for note in self.notes:
            rows.append(f"note: {note}")
        return "\n".join(rows)

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["layer", "kind", "firing_rate", "timesteps", "ops", "energy_mj"])
            for le in self.layers:
                writer.writerow([
                    le.layer_name, le.kind,
                    "" if le.firing_rate is None else repr(le.firing_rate),
                    le.timesteps, repr(le.ops), repr(le.energy_mj),
                ])


def estimate_energy(costs, constants: EnergyConstants = EnergyConstants()) -> EnergyReport:
    """Total energy: MAC count times e_mac plus AC count times e_ac, in mJ."""
    costs = list(costs)
    if not costs:
        raise ContractError("estimate_energy needs at least one layer cost")
    layers = []
    total_mac = 0.0
    total_spiking = 0.0
    for cost in costs:
        ops = cost.op_count()
        per_op = constants.e_mac_pj if cost.kind == MAC_LAYER else constants.e_ac_pj
        mj = ops * per_op * PJ_TO_MJ
        if cost.kind == MAC_LAYER:
            total_mac += mj
        else:
            total_spiking += mj
        layers.append(LayerEnergy(cost.layer_name, cost.kind, ops, mj, cost.firing_rate, cost.timesteps))
    return EnergyReport(
        layers=layers,
        total_mac_mj=total_mac,
        total_spiking_mj=total_spiking,
        total_mj=total_mac + total_spiking,
        constants=constants,
        timesteps=max(c.timesteps for c in costs),
    )


# --- whole-model profiling ----------------------------------------------------


def measure_firing_rates(model: EgSpikeFormer, images, timesteps: int) -> dict:
    """Mean firing rate per spiking site over a calibration batch."""
    sums: dict[str, float] = {}
    count = 0
    with tn.no_grad():
        for img in images:
            res = model_forward(model, img, timesteps=timesteps, training=False)
            for site, rate in res.firing_rates.items():
                sums[site] = sums.get(site, 0.0) + rate
            count += 1
    if count == 0:
        raise ContractError("profiling needs at least one calibration image")
    return {site: total / count for site, total in sums.items()}


def model_layer_costs(model: EgSpikeFormer, rates: dict, timesteps: int) -> list:
    """Cost rows for every counted layer of the classifier.

    Spiking rows are the layers consuming binary trains: the depthwise conv
    fed by each conv block's neurons and the two attention matmuls. The
    pointwise conv consumes conv output (integer-valued, not binary), the
    q/k/v and output projections consume the real-valued residual stream,
    so those are mac rows, executed once per timestep. The stem executes
    once per inference.
    """
    cfg = model.config
    h = w = cfg.image_size
    c, cin = cfg.stem_channels, cfg.in_channels
    n, d, pd = cfg.num_tokens, cfg.token_dim, cfg.patch_dim
    t = int(timesteps)

    costs = [
        LayerCost("stem.dw", MAC_LAYER, count_flops(ConvShape(cin, cin, h, w, 3, groups=cin)), 1),
        LayerCost("stem.pw", MAC_LAYER, count_flops(ConvShape(cin, c, h, w, 1)), 1),
    ]
    for i in range(cfg.num_conv_blocks):
        costs.append(LayerCost(
            f"conv{i}.dw", SPIKING_LAYER,
            count_flops(ConvShape(c, c, h, w, 3, groups=c)), t,
            firing_rate=rates[f"conv{i}.sn"],
        ))
        costs.append(LayerCost(f"conv{i}.pw", MAC_LAYER, count_flops(ConvShape(c, c, h, w, 1)), t))
    costs.append(LayerCost("tokenizer", MAC_LAYER, count_flops(MatmulShape(n, pd, d)), t))
    for i in range(cfg.num_attention_blocks):
        for tag in ("q", "k", "v"):
            costs.append(LayerCost(
                f"attn{i}.proj_{tag}", MAC_LAYER, count_flops(MatmulShape(n, d, d)), t
            ))
        costs.append(LayerCost(
            f"attn{i}.qk", SPIKING_LAYER, count_flops(MatmulShape(n, d, n)), t,
            firing_rate=rates[f"attn{i}.q"],
        ))
        costs.append(LayerCost(
            f"attn{i}.av", SPIKING_LAYER, count_flops(MatmulShape(n, n, d)), t,
            firing_rate=rates[f"attn{i}.v"],
        ))
        costs.append(LayerCost(
            f"attn{i}.proj_out", MAC_LAYER, count_flops(MatmulShape(n, d, d)), t
        ))
    costs.append(LayerCost("head", MAC_LAYER, count_flops(MatmulShape(1, d, cfg.num_classes)), t))
    return costs


def profile_model(model: EgSpikeFormer, images, timesteps: int,
                  constants: EnergyConstants = EnergyConstants()) -> EnergyReport:
    """Measure firing rates on a calibration batch and price the model."""
    rates = measure_firing_rates(model, images, timesteps)
    return estimate_energy(model_layer_costs(model, rates, timesteps), constants)


def report_to_json(report: EnergyReport) -> str:
    return json.dumps(report.to_json_dict(), sort_keys=True)
