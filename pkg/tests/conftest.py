import numpy as np
import pytest

from ee2d.datamodel import EmbeddingGrid, ProbeGrid


def lattice_cells(rng, num_layers, num_sentences, num_classes, denom=20):
    """Random distributions on the k/denom lattice (exact integer sums)."""
    cells = np.empty((num_layers, num_sentences, num_classes))
    for i in range(num_layers):
        for k in range(num_sentences):
            cuts = np.sort(rng.integers(0, denom + 1, size=num_classes - 1))
            parts = np.diff(np.concatenate(([0], cuts, [denom])))
            cells[i, k] = parts / denom
    return cells


def lattice_probe_grid(rng, num_layers, num_sentences, num_classes, denom=20):
    return ProbeGrid(
        label=int(rng.integers(0, num_classes)),
        cells=lattice_cells(rng, num_layers, num_sentences, num_classes, denom),
    )


def random_probe_grid(rng, num_layers, num_sentences, num_classes):
    raw = rng.random((num_layers, num_sentences, num_classes)) + 1e-3
    cells = raw / raw.sum(axis=2, keepdims=True)
    return ProbeGrid(label=int(rng.integers(0, num_classes)), cells=cells)


def random_embedding_grid(rng, num_layers, num_sentences, embed_dim, num_classes=2):
    return EmbeddingGrid(
        label=int(rng.integers(0, num_classes)),
        cells=rng.normal(size=(num_layers, num_sentences, embed_dim)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
