"""Grid datasets and their JSONL persistence.

A dataset file is JSON Lines: the first line is the manifest object, each
following line one sample. Probe grids store an L x m matrix of class
probability vectors, embedding grids an L x m matrix of D-dimensional
sentence embeddings. L and the class/embedding dimension are global to a
dataset; the sentence count m may vary per sample.

Cell (i, k) is expected to be produced from sentences 0..k only (causal
construction); this cannot be verified from file contents and is relied
upon by the inference engine.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    InconsistentShape,
    NormalizationError,
    SchemaError,
)

# |sum(probs) - 1| must stay below this for every stored distribution.
DIST_TOL = 1e-5

KIND_PROBE = "probe"
KIND_EMBEDDING = "embedding"


@dataclass
class DatasetManifest:
    kind: str
    num_classes: int
    num_layers: int
    samples: int
    embed_dim: int | None = None
    class_names: list[str] | None = None
    provenance: str = ""

    def to_json(self) -> dict:
        obj = {
            "kind": self.kind,
            "num_classes": self.num_classes,
            "num_layers": self.num_layers,
            "samples": self.samples,
        }
        if self.embed_dim is not None:
            obj["embed_dim"] = self.embed_dim
        if self.class_names is not None:
            obj["class_names"] = self.class_names
        obj["provenance"] = self.provenance
        return obj


@dataclass
class ProbeGrid:
    """Per-sample L x m matrix of class probability vectors."""

    label: int
    cells: np.ndarray  # shape (L, m, C), float64

    @property
    def num_layers(self) -> int:
        return self.cells.shape[0]

    @property
    def num_sentences(self) -> int:
        return self.cells.shape[1]

    @property
    def num_classes(self) -> int:
        return self.cells.shape[2]


@dataclass
class EmbeddingGrid:
    """Per-sample L x m matrix of sentence embeddings."""

    label: int
    cells: np.ndarray  # shape (L, m, D), float64

    @property
    def num_layers(self) -> int:
        return self.cells.shape[0]

    @property
    def num_sentences(self) -> int:
        return self.cells.shape[1]

    @property
    def embed_dim(self) -> int:
        return self.cells.shape[2]


def validate_distribution(probs: np.ndarray, where: str = "") -> None:
    """Check one probability vector: C >= 2, finite, sums to 1 within DIST_TOL."""
    if probs.ndim != 1 or probs.shape[0] < 2:
        raise SchemaError(f"{where}: distribution needs >= 2 classes, got shape {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise SchemaError(f"{where}: non-finite probability value")
    if np.any(probs < 0):
        raise NormalizationError(f"{where}: negative probability")
    total = float(probs.sum())
    if abs(total - 1.0) > DIST_TOL:
        raise NormalizationError(f"{where}: probabilities sum to {total!r}, expected 1 +/- {DIST_TOL}")


def validate_probe_grid(grid: ProbeGrid, sample_index: int | None = None) -> None:
    tag = f"sample {sample_index}" if sample_index is not None else "grid"
    if grid.cells.ndim != 3:
        raise SchemaError(f"{tag}: probe cells must be L x m x C, got shape {grid.cells.shape}")
    L, m, C = grid.cells.shape
    if L < 1 or m < 1:
        raise SchemaError(f"{tag}: need L >= 1 and m >= 1, got L={L}, m={m}")
    if C < 2:
        raise SchemaError(f"{tag}: need C >= 2, got C={C}")
    if not (0 <= grid.label < C):
        raise SchemaError(f"{tag}: label {grid.label} outside [0, {C})")
    if not np.all(np.isfinite(grid.cells)):
        raise SchemaError(f"{tag}: non-finite cell value")
    sums = grid.cells.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > DIST_TOL)
    if bad.size:
        layer, sent = bad[0]
        raise NormalizationError(
            f"{tag} layer {layer} sentence {sent}: probabilities sum to "
            f"{sums[layer, sent]!r}, expected 1 +/- {DIST_TOL}"
        )
    if np.any(grid.cells < 0):
        layer, sent, _ = np.argwhere(grid.cells < 0)[0]
        raise NormalizationError(f"{tag} layer {layer} sentence {sent}: negative probability")


def validate_embedding_grid(grid: EmbeddingGrid, sample_index: int | None = None) -> None:
    tag = f"sample {sample_index}" if sample_index is not None else "grid"
    if grid.cells.ndim != 3:
        raise SchemaError(f"{tag}: embedding cells must be L x m x D, got shape {grid.cells.shape}")
    L, m, D = grid.cells.shape
    if L < 1 or m < 1 or D < 1:
        raise SchemaError(f"{tag}: need L, m, D >= 1, got L={L}, m={m}, D={D}")
    if grid.label < 0:
        raise SchemaError(f"{tag}: negative label {grid.label}")
    if not np.all(np.isfinite(grid.cells)):
        raise SchemaError(f"{tag}: non-finite cell value")


def _parse_cells(raw, line_no: int) -> np.ndarray:
    try:
        cells = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"line {line_no}: ragged or non-numeric cells ({exc})") from None
    if cells.ndim != 3:
        raise SchemaError(f"line {line_no}: cells must be a 3-level nested list, got {cells.ndim} levels")
    return cells


def load_dataset(path) -> tuple[DatasetManifest, list]:
    """Load and validate a JSONL dataset; returns (manifest, grids)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise SchemaError(f"{path}: empty file")

    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} line 1: invalid JSON ({exc})") from None
    for key in ("kind", "num_classes", "num_layers", "samples"):
        if key not in head:
            raise SchemaError(f"{path} line 1: manifest missing field {key!r}")
    kind = head["kind"]
    if kind not in (KIND_PROBE, KIND_EMBEDDING):
        raise SchemaError(f"{path} line 1: unknown kind {kind!r}")
    if kind == KIND_EMBEDDING and "embed_dim" not in head:
        raise SchemaError(f"{path} line 1: embedding manifest missing field 'embed_dim'")
    manifest = DatasetManifest(
        kind=kind,
        num_classes=int(head["num_classes"]),
        num_layers=int(head["num_layers"]),
        samples=int(head["samples"]),
        embed_dim=int(head["embed_dim"]) if head.get("embed_dim") is not None else None,
        class_names=head.get("class_names"),
        provenance=head.get("provenance", ""),
    )
    if manifest.samples < 1:
        raise SchemaError(f"{path}: manifest declares {manifest.samples} samples, need >= 1")
    if manifest.num_classes < 2:
        raise SchemaError(f"{path}: manifest declares {manifest.num_classes} classes, need >= 2")
    if manifest.num_layers < 1:
        raise SchemaError(f"{path}: manifest declares {manifest.num_layers} layers, need >= 1")

    grids = []
    for idx, line in enumerate(lines[1:]):
        line_no = idx + 2
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path} line {line_no}: invalid JSON ({exc})") from None
        if "label" not in record or "cells" not in record:
            raise SchemaError(f"{path} line {line_no}: sample missing 'label' or 'cells'")
        cells = _parse_cells(record["cells"], line_no)
        if cells.shape[0] != manifest.num_layers:
            raise InconsistentShape(
                f"{path} sample {idx}: {cells.shape[0]} layers, dataset has {manifest.num_layers}"
            )
        if kind == KIND_PROBE:
            grid = ProbeGrid(label=int(record["label"]), cells=cells)
            if cells.shape[2] != manifest.num_classes:
                raise InconsistentShape(
                    f"{path} sample {idx}: {cells.shape[2]} classes, dataset has {manifest.num_classes}"
                )
            validate_probe_grid(grid, sample_index=idx)
        else:
            grid = EmbeddingGrid(label=int(record["label"]), cells=cells)
            if cells.shape[2] != manifest.embed_dim:
                raise InconsistentShape(
                    f"{path} sample {idx}: embed_dim {cells.shape[2]}, dataset has {manifest.embed_dim}"
                )
            validate_embedding_grid(grid, sample_index=idx)
            if grid.label >= manifest.num_classes:
                raise SchemaError(
                    f"{path} sample {idx}: label {grid.label} outside [0, {manifest.num_classes})"
                )
        grids.append(grid)

    if len(grids) != manifest.samples:
        raise SchemaError(f"{path}: manifest declares {manifest.samples} samples, file has {len(grids)}")
    return manifest, grids


def save_dataset(manifest: DatasetManifest, grids, path) -> None:
    """Validate and write a dataset; load_dataset(path) round-trips exactly."""
    if not grids:
        raise SchemaError("cannot save a dataset with 0 samples")
    if manifest.samples != len(grids):
        raise SchemaError(f"manifest declares {manifest.samples} samples, got {len(grids)} grids")
    for idx, grid in enumerate(grids):
        if grid.num_layers != manifest.num_layers:
            raise InconsistentShape(
                f"sample {idx}: {grid.num_layers} layers, manifest has {manifest.num_layers}"
            )
        if manifest.kind == KIND_PROBE:
            if not isinstance(grid, ProbeGrid):
                raise SchemaError(f"sample {idx}: expected ProbeGrid for kind 'probe'")
            if grid.num_classes != manifest.num_classes:
                raise InconsistentShape(
                    f"sample {idx}: {grid.num_classes} classes, manifest has {manifest.num_classes}"
                )
            validate_probe_grid(grid, sample_index=idx)
        elif manifest.kind == KIND_EMBEDDING:
            if not isinstance(grid, EmbeddingGrid):
                raise SchemaError(f"sample {idx}: expected EmbeddingGrid for kind 'embedding'")
            if grid.embed_dim != manifest.embed_dim:
                raise InconsistentShape(
                    f"sample {idx}: embed_dim {grid.embed_dim}, manifest has {manifest.embed_dim}"
                )
            validate_embedding_grid(grid, sample_index=idx)
        else:
            raise SchemaError(f"unknown manifest kind {manifest.kind!r}")

    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(manifest.to_json()) + "\n")
            for grid in grids:
                record = {"label": int(grid.label), "cells": grid.cells.tolist()}
                fh.write(json.dumps(record) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write dataset to {path}: {exc}") from exc


def apply_adapters(emb: EmbeddingGrid, adapters) -> ProbeGrid:
    """Run one adapter per layer over an embedding grid, yielding a probe grid."""
    from .adapters import adapter_forward_batch

    L = emb.num_layers
    if len(adapters) != L:
        raise DimensionMismatch(f"grid has {L} layers but {len(adapters)} adapters given")
    for i, params in enumerate(adapters):
        if params.input_dim != emb.embed_dim:
            raise DimensionMismatch(
                f"adapter {i} expects input_dim {params.input_dim}, grid has embed_dim {emb.embed_dim}"
            )
    layers = [adapter_forward_batch(adapters[i], emb.cells[i]) for i in range(L)]
    return ProbeGrid(label=emb.label, cells=np.stack(layers, axis=0))
