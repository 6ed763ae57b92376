"""Accuracy profiles, speed-ups, heatmaps, and the FLOP cost model.

Speed-up accounting counts one sentence through one layer as one abstract
operation. Layer-wise early exit at layer L_e saves L / (L_e + 1); the 2D
strategy saves (m * L) / operations_used per sample. Dataset-level 2D
speed-up is reported two ways: the ratio of total full operations to
total used operations (headline; reflects the compute actually saved)
and the mean of per-sample ratios.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .datamodel import ProbeGrid
from .engine import (
    EEConfig,
    build_trace,
    deepest_visited_layer,
    run_from_trace,
    run_layerwise,
    step_size,
)
from .errors import EmptyFilter, NotReachable


def layer_accuracy_profile(dataset: list[ProbeGrid]) -> np.ndarray:
    """acc[l] = fraction of samples the layer-l classifier gets right (last sentence)."""
    if not dataset:
        raise ValueError("empty dataset")
    L = dataset[0].num_layers
    correct = np.zeros(L)
    for grid in dataset:
        preds = grid.cells[:, grid.num_sentences - 1].argmax(axis=1)
        correct += preds == grid.label
    return correct / len(dataset)


def accuracy_threshold(profile: np.ndarray, allowed_loss: float) -> float:
    """Best layer accuracy minus the allowed loss."""
    if not 0.0 <= allowed_loss < 1.0:
        raise ValueError(f"allowed loss must be in [0, 1), got {allowed_loss}")
    return float(profile.max()) - allowed_loss


def optimal_exit_layer(profile: np.ndarray, acc_thr: float) -> int:
    """Smallest layer whose accuracy reaches acc_thr."""
    hits = np.nonzero(profile >= acc_thr)[0]
    if hits.size == 0:
        raise NotReachable(f"no layer reaches accuracy {acc_thr}")
    return int(hits[0])


def speedup_layerwise(num_layers: int, exit_layer: int) -> float:
    if not 0 <= exit_layer < num_layers:
        raise ValueError(f"exit_layer {exit_layer} outside [0, {num_layers})")
    return num_layers / (exit_layer + 1)


def speedup_2d(num_sentences: int, num_layers: int, operations_used: int) -> float:
    if operations_used < 1:
        raise ValueError("operations_used must be >= 1")
    return (num_sentences * num_layers) / operations_used


@dataclass
class SampleResult:
    label: int
    predicted_label: int
    operations_used: int
    exited_early: bool
    exit_layer: int | None
    exit_sentence: int | None
    full_ops: int  # m * L for this sample

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "predicted_label": self.predicted_label,
            "operations_used": self.operations_used,
            "exited_early": self.exited_early,
            "exit_layer": self.exit_layer,
            "exit_sentence": self.exit_sentence,
            "full_ops": self.full_ops,
        }


@dataclass
class EvalReport:
    accuracy: float
    total_ops: int
    total_full_ops: int
    speedup_total: float
    speedup_mean: float
    per_sample: list[SampleResult] = field(default_factory=list)

    def to_json(self, include_samples: bool = True) -> dict:
        obj = {
            "accuracy": self.accuracy,
            "total_ops": self.total_ops,
            "total_full_ops": self.total_full_ops,
            "speedup_total": self.speedup_total,
            "speedup_mean": self.speedup_mean,
            "samples": len(self.per_sample),
        }
        if include_samples:
            obj["per_sample"] = [s.to_json() for s in self.per_sample]
        return obj


def evaluate_2d(dataset: list[ProbeGrid], cfg: EEConfig, traces=None) -> EvalReport:
    """Run 2D early exit over a dataset and aggregate accuracy and speed-up.

    Passing precomputed traces (from engine.build_trace, same order as the
    dataset) avoids recomputing per-step argmax/confidence when sweeping
    thresholds.
    """
    if not dataset:
        raise ValueError("empty dataset")
    if traces is None:
        traces = [build_trace(g) for g in dataset]
    per_sample = []
    correct = 0
    total_ops = 0
    total_full = 0
    ratios = np.empty(len(dataset))
    for i, (grid, trace) in enumerate(zip(dataset, traces)):
        outcome = run_from_trace(trace, cfg)
        full = grid.num_layers * grid.num_sentences
        correct += outcome.predicted_label == grid.label
        total_ops += outcome.operations_used
        total_full += full
        ratios[i] = full / outcome.operations_used
        per_sample.append(SampleResult(
            label=grid.label,
            predicted_label=outcome.predicted_label,
            operations_used=outcome.operations_used,
            exited_early=outcome.exited_early,
            exit_layer=outcome.exit_step.layer if outcome.exit_step else None,
            exit_sentence=outcome.exit_step.sentence if outcome.exit_step else None,
            full_ops=full,
        ))
    return EvalReport(
        accuracy=correct / len(dataset),
        total_ops=total_ops,
        total_full_ops=total_full,
        speedup_total=total_full / total_ops,
        speedup_mean=float(ratios.mean()),
        per_sample=per_sample,
    )


def _filter_by_m(dataset: list[ProbeGrid], fixed_m: int) -> list[ProbeGrid]:
    subset = [g for g in dataset if g.num_sentences == fixed_m]
    if not subset:
        raise EmptyFilter(f"no sample has exactly {fixed_m} sentences")
    return subset


def cell_accuracy_heatmap(dataset: list[ProbeGrid], fixed_m: int) -> np.ndarray:
    """(L, fixed_m) matrix: per-cell argmax accuracy over same-length samples."""
    subset = _filter_by_m(dataset, fixed_m)
    L = subset[0].num_layers
    correct = np.zeros((L, fixed_m))
    for grid in subset:
        correct += grid.cells.argmax(axis=2) == grid.label
    return correct / len(subset)


def block_accuracy_curve(dataset: list[ProbeGrid], fixed_m: int) -> np.ndarray:
    """Accuracy of the prediction held at the end of each progression block.

    Block s ends at the newest sentence's deepest active layer, i.e. cell
    (min((s+1)*step, L) - 1, s).
    """
    subset = _filter_by_m(dataset, fixed_m)
    L = subset[0].num_layers
    delta = step_size(L, fixed_m)
    layers = np.minimum((np.arange(1, fixed_m + 1)) * delta, L) - 1
    correct = np.zeros(fixed_m)
    for grid in subset:
        preds = grid.cells[layers, np.arange(fixed_m)].argmax(axis=1)
        correct += preds == grid.label
    return correct / len(subset)


# ----------------------------------------------------------------------
# FLOP cost model for one transformer layer processing sentence s
# ----------------------------------------------------------------------

@dataclass
class CostModelInput:
    tps: float  # average tokens per sentence
    embed_dim: int
    exp_f: float  # MLP expansion factor
    sentence_index: int = 0

    def __post_init__(self):
        if self.tps <= 0 or self.embed_dim <= 0 or self.exp_f <= 0:
            raise ValueError("tps, embed_dim and exp_f must be positive")
        if self.sentence_index < 0:
            raise ValueError("sentence_index must be >= 0")


@dataclass
class CostModelResult:
    qkv_flops: float
    attention_flops: float
    mlp_flops: float
    attention_coefficient: float  # flops per unit of sentence index
    crossover_s: float

    def to_json(self) -> dict:
        return {
            "qkv_flops": self.qkv_flops,
            "attention_flops": self.attention_flops,
            "mlp_flops": self.mlp_flops,
            "attention_coefficient": self.attention_coefficient,
            "crossover_s": self.crossover_s,
        }


def cost_model(inp: CostModelInput) -> CostModelResult:
    """Per-layer FLOP terms; attention grows linearly with the sentence index.

    The qkv and MLP terms are constant per sentence, so the attention term
    only dominates once s exceeds crossover_s = (qkv + mlp) / (tps^2 * D),
    on the order of 10^3 sentences for review-sized inputs.
    """
    d = float(inp.embed_dim)
    qkv = 3.0 * inp.tps * d * d
    mlp = 2.0 * inp.tps * d * d * inp.exp_f
    coeff = inp.tps * inp.tps * d
    return CostModelResult(
        qkv_flops=qkv,
        attention_flops=inp.sentence_index * coeff,
        mlp_flops=mlp,
        attention_coefficient=coeff,
        crossover_s=(qkv + mlp) / coeff,
    )


# ----------------------------------------------------------------------
# Delimited exports
# ----------------------------------------------------------------------

def write_heatmap_csv(matrix: np.ndarray, path) -> None:
    r"""Layer x sentence matrix with a `layer\sentence` corner header."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer\\sentence"] + list(range(matrix.shape[1])))
        for layer in range(matrix.shape[0]):
            writer.writerow([layer] + [repr(v) for v in matrix[layer].tolist()])


def write_block_curve_csv(curve: np.ndarray, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["block", "accuracy"])
        for s, v in enumerate(curve.tolist()):
            writer.writerow([s, repr(v)])


def write_samples_csv(report: EvalReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "predicted_label", "operations_used",
                         "exited_early", "exit_layer", "exit_sentence", "full_ops"])
        for s in report.per_sample:
            writer.writerow([s.label, s.predicted_label, s.operations_used,
                             int(s.exited_early),
                             "" if s.exit_layer is None else s.exit_layer,
                             "" if s.exit_sentence is None else s.exit_sentence,
                             s.full_ops])
