import numpy as np
import pytest

from ee2d.errors import SpecError
from ee2d.synth import SynthSpec, class_directions, generate_dataset, manifest_for, spec_from_json


def base_spec(**overrides):
    kw = dict(num_samples=30, num_classes=3, num_layers=4, embed_dim=8,
              sentences=(2, 5), noise_sigma=0.1, seed=42)
    kw.update(overrides)
    return SynthSpec(**kw)


def test_deterministic_under_seed():
    a = generate_dataset(base_spec())
    b = generate_dataset(base_spec())
    assert len(a) == len(b) == 30
    for ga, gb in zip(a, b):
        assert ga.label == gb.label
        assert np.array_equal(ga.cells, gb.cells)


def test_distinct_seeds_differ():
    a = generate_dataset(base_spec())
    c = generate_dataset(base_spec(seed=43))
    assert any(not np.array_equal(ga.cells, gc.cells) for ga, gc in zip(a, c))


def test_noiseless_cells_exact():
    spec = base_spec(noise_sigma=0.0, sentences=3)
    mu = class_directions(3, 8)
    for grid in generate_dataset(spec):
        expected = np.broadcast_to(mu[grid.label], (4, 3, 8))
        assert np.array_equal(grid.cells, expected)


def test_ramps_scale_cells():
    spec = base_spec(noise_sigma=0.0, sentences=2,
                     layer_ramp=[1.0, 0.5, 0.25, 0.0],
                     sentence_ramp=[1.0, 0.5])
    grid = generate_dataset(spec)[0]
    mu = class_directions(3, 8)[grid.label]
    assert np.array_equal(grid.cells[0, 0], mu)
    assert np.array_equal(grid.cells[1, 1], 0.25 * mu)
    assert np.all(grid.cells[3] == 0.0)


def test_class_balance():
    for n in (30, 31, 32):
        labels = [g.label for g in generate_dataset(base_spec(num_samples=n))]
        counts = np.bincount(labels, minlength=3)
        assert counts.max() - counts.min() <= 1


def test_sentence_range_respected():
    ms = [g.num_sentences for g in generate_dataset(base_spec(num_samples=100))]
    assert min(ms) >= 2 and max(ms) <= 5
    assert len(set(ms)) > 1  # the range is actually sampled


def test_spec_errors():
    with pytest.raises(SpecError):
        base_spec(embed_dim=2)  # D < C
    with pytest.raises(SpecError):
        base_spec(layer_ramp=[1.0, 1.0])  # wrong length
    with pytest.raises(SpecError):
        base_spec(sentence_ramp=[1.0])  # needs max-m entries
    with pytest.raises(SpecError):
        base_spec(noise_sigma=-1.0)
    with pytest.raises(SpecError):
        base_spec(layer_ramp=[2.0, 1.0, 1.0, 1.0])  # multiplier outside [0, 1]
    with pytest.raises(SpecError):
        base_spec(num_samples=0)


def test_spec_from_json_round_trip():
    obj = {
        "num_samples": 12, "num_classes": 2, "num_layers": 3, "embed_dim": 4,
        "sentences": [2, 4], "noise_sigma": 0.5, "seed": 9,
        "sentence_ramp": [1.0, 0.5, 0.25, 0.0],
    }
    spec = spec_from_json(obj)
    assert spec.sentences == (2, 4)
    assert np.allclose(spec.sentence_ramp, [1.0, 0.5, 0.25, 0.0])
    assert np.allclose(spec.layer_ramp, 1.0)
    with pytest.raises(SpecError):
        spec_from_json({"num_samples": 1})


def test_manifest_matches_generation():
    spec = base_spec()
    manifest = manifest_for(spec)
    grids = generate_dataset(spec)
    assert manifest.samples == len(grids)
    assert manifest.num_layers == grids[0].num_layers
    assert manifest.embed_dim == grids[0].embed_dim
    assert manifest.kind == "embedding"


def test_noiseless_positive_ramps_are_fully_learnable():
    # every cell with a positive combined multiplier classifies perfectly
    from ee2d.adapters import MODE_ADAPTER_ONLY, TrainConfig, train_adapters
    from ee2d.datamodel import apply_adapters

    spec = base_spec(num_samples=40, num_classes=2, sentences=2, noise_sigma=0.0,
                     layer_ramp=[1.0, 0.7, 0.4, 0.2], sentence_ramp=[1.0, 0.3])
    data = generate_dataset(spec)
    heads, _ = train_adapters(data, TrainConfig(learning_rate=0.05, epochs=15, seed=0),
                              MODE_ADAPTER_ONLY, hidden_dim=16)
    for grid in data:
        probe = apply_adapters(grid, heads)
        assert np.all(probe.cells.argmax(axis=2) == grid.label)
