"""2D early-exit inference over probe grids.

Input arrives sentence by sentence; each new sentence s activates the
first min((s+1)*step, L) layers, where step = max(1, L // m). Older
sentences pass only through the newly activated layers, the new sentence
through all active ones. Every (layer, sentence) visit is one abstract
operation. Per operation the winning class's confidence margin
(max - second max) is accumulated if it exceeds tau_ignore; once any
class's accumulator exceeds tau_acc (both strictly), inference stops.
With no early stop, the prediction comes from the deepest visited layer
of the last sentence and the operation count is the actual number of
steps executed (equal to L*m only when m divides L).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .datamodel import ProbeGrid


@dataclass
class EEConfig:
    """The two inference thresholds."""

    tau_ignore: float
    tau_acc: float

    def __post_init__(self):
        if not (math.isfinite(self.tau_ignore) and math.isfinite(self.tau_acc)):
            raise ValueError("thresholds must be finite")
        if not 0.0 <= self.tau_ignore <= 1.0:
            raise ValueError(f"tau_ignore must be in [0, 1], got {self.tau_ignore}")
        if self.tau_acc < 0.0:
            raise ValueError(f"tau_acc must be >= 0, got {self.tau_acc}")


@dataclass
class TraversalStep:
    layer: int
    sentence: int
    op_index: int


@dataclass
class EEOutcome:
    predicted_label: int
    operations_used: int
    exited_early: bool
    exit_step: TraversalStep | None
    accumulators: np.ndarray  # per-class confidence sums at termination


def step_size(num_layers: int, num_sentences: int) -> int:
    """Layers newly activated per arriving sentence: max(1, L // m)."""
    if num_layers < 1 or num_sentences < 1:
        raise ValueError("need num_layers >= 1 and num_sentences >= 1")
    return max(1, num_layers // num_sentences)


def confidence(dist: np.ndarray) -> float:
    """Margin between the largest and second-largest class probability."""
    top = np.sort(np.asarray(dist))
    return float(top[-1] - top[-2])


@lru_cache(maxsize=256)
def _plan_arrays(num_layers: int, num_sentences: int) -> tuple[np.ndarray, np.ndarray]:
    """(layers, sentences) index arrays along the traversal order; cached read-only."""
    delta = step_size(num_layers, num_sentences)
    layers, sentences = [], []
    for s in range(num_sentences):
        layers_to_traverse = min((s + 1) * delta, num_layers)
        for s1 in range(s + 1):
            start_layer = 0 if s1 == s else delta * s
            for layer in range(start_layer, layers_to_traverse):
                layers.append(layer)
                sentences.append(s1)
    out = (np.array(layers, dtype=np.int64), np.array(sentences, dtype=np.int64))
    out[0].setflags(write=False)
    out[1].setflags(write=False)
    return out


def traversal_plan(num_layers: int, num_sentences: int) -> list[TraversalStep]:
    """Full (layer, sentence) visit order with 0-based operation indices."""
    layers, sentences = _plan_arrays(num_layers, num_sentences)
    return [TraversalStep(layer=int(l), sentence=int(s), op_index=i)
            for i, (l, s) in enumerate(zip(layers, sentences))]


def plan_length(num_layers: int, num_sentences: int) -> int:
    return _plan_arrays(num_layers, num_sentences)[0].shape[0]


def deepest_visited_layer(num_layers: int, num_sentences: int) -> int:
    """Last layer any sentence reaches; < L-1 when m does not divide L."""
    delta = step_size(num_layers, num_sentences)
    return min(num_sentences * delta, num_layers) - 1


@dataclass
class GridTrace:
    """Per-step argmax/confidence of one grid along the traversal plan.

    Precomputing this once makes sweeping many (tau_ignore, tau_acc)
    settings cheap; run_from_trace is the single execution path and is
    what run_2d delegates to.
    """

    layers: np.ndarray
    sentences: np.ndarray
    preds: np.ndarray
    confs: np.ndarray
    num_classes: int
    fallback_pred: int


def build_trace(grid: ProbeGrid) -> GridTrace:
    layers, sentences = _plan_arrays(grid.num_layers, grid.num_sentences)
    cells = grid.cells[layers, sentences]  # (P, C)
    preds = cells.argmax(axis=1)
    top = np.sort(cells, axis=1)
    confs = top[:, -1] - top[:, -2]
    fallback_cell = grid.cells[deepest_visited_layer(grid.num_layers, grid.num_sentences),
                               grid.num_sentences - 1]
    return GridTrace(
        layers=layers,
        sentences=sentences,
        preds=preds,
        confs=confs,
        num_classes=grid.num_classes,
        fallback_pred=int(fallback_cell.argmax()),
    )


def run_from_trace(trace: GridTrace, cfg: EEConfig) -> EEOutcome:
    active = trace.confs > cfg.tau_ignore
    contrib = np.where(active, trace.confs, 0.0)

    # Accumulators only grow, so the first index where a class's running
    # sum exceeds tau_acc is the step that triggered it.
    exit_idx = None
    cums = np.empty((trace.num_classes, trace.confs.shape[0]))
    for c in range(trace.num_classes):
        cums[c] = np.cumsum(np.where(trace.preds == c, contrib, 0.0))
        crossed = cums[c] > cfg.tau_acc
        if crossed[-1]:
            first = int(np.argmax(crossed))
            if exit_idx is None or first < exit_idx:
                exit_idx = first

    if exit_idx is not None:
        return EEOutcome(
            predicted_label=int(trace.preds[exit_idx]),
            operations_used=exit_idx + 1,
            exited_early=True,
            exit_step=TraversalStep(
                layer=int(trace.layers[exit_idx]),
                sentence=int(trace.sentences[exit_idx]),
                op_index=exit_idx,
            ),
            accumulators=cums[:, exit_idx].copy(),
        )
    return EEOutcome(
        predicted_label=trace.fallback_pred,
        operations_used=trace.confs.shape[0],
        exited_early=False,
        exit_step=None,
        accumulators=cums[:, -1].copy(),
    )


def run_2d(grid: ProbeGrid, cfg: EEConfig) -> EEOutcome:
    """2D early-exit inference for one sample."""
    return run_from_trace(build_trace(grid), cfg)


def run_layerwise(grid: ProbeGrid, exit_layer: int) -> int:
    """Layer-wise baseline: argmax of the last sentence's cell at exit_layer."""
    if not 0 <= exit_layer < grid.num_layers:
        raise ValueError(f"exit_layer {exit_layer} outside [0, {grid.num_layers})")
    return int(grid.cells[exit_layer, grid.num_sentences - 1].argmax())


def run_full(grid: ProbeGrid) -> int:
    """Prediction of the deepest layer on the last sentence."""
    return run_layerwise(grid, grid.num_layers - 1)
