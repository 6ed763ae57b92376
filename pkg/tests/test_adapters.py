import math

import numpy as np
import pytest

from ee2d.adapters import (
    MODE_ADAPTER_ONLY,
    MODE_JOINT,
    AdapterParams,
    TrainConfig,
    adapter_accuracy,
    adapter_forward,
    adapter_loss,
    aggregate_ft_loss,
    default_layer_weights,
    grad_check,
    init_adapter,
    layer_training_inputs,
    load_adapters,
    mean_embedding,
    prefix_embeddings,
    save_adapters,
    train_adapters,
)
from ee2d.datamodel import EmbeddingGrid
from ee2d.errors import DimensionMismatch, InconsistentShape, NonFiniteLoss, SchemaError
from ee2d.synth import SynthSpec, generate_dataset

from conftest import random_embedding_grid


def hand_adapter():
    # D=2, H=1, C=2; relu(x0 + x1) then logits (2h, 0)
    return AdapterParams(w1=np.array([[1.0], [1.0]]), b1=np.zeros(1),
                         w2=np.array([[2.0, 0.0]]), b2=np.zeros(2))


def zero_adapter(D=3, H=4, C=3):
    return AdapterParams(w1=np.zeros((D, H)), b1=np.zeros(H),
                         w2=np.zeros((H, C)), b2=np.zeros(C))


def test_forward_zero_params_uniform():
    probs = adapter_forward(zero_adapter(), np.array([1.0, -2.0, 0.5]))
    assert np.allclose(probs, 1 / 3)
    assert probs.sum() == pytest.approx(1.0)


def test_forward_hand_values():
    p = hand_adapter()
    probs = adapter_forward(p, np.array([1.0, 1.0]))
    assert probs[0] == pytest.approx(math.exp(4) / (math.exp(4) + 1), abs=1e-12)
    assert probs[1] == pytest.approx(1 / (math.exp(4) + 1), abs=1e-12)
    # negative input is clipped by the ReLU: logits (0, 0)
    assert np.allclose(adapter_forward(p, np.array([-1.0, -1.0])), [0.5, 0.5])


def test_forward_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        adapter_forward(hand_adapter(), np.array([1.0, 2.0, 3.0]))


def test_forward_always_valid_distribution(rng):
    for _ in range(30):
        D, H, C = 5, 4, 3
        p = AdapterParams(w1=rng.normal(scale=10, size=(D, H)), b1=rng.normal(size=H),
                          w2=rng.normal(scale=10, size=(H, C)), b2=rng.normal(size=C))
        probs = adapter_forward(p, rng.normal(scale=50, size=D))
        assert np.all(probs >= 0)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_prefix_embeddings():
    cells = np.array([[[0.0, 2.0], [2.0, 0.0], [4.0, 4.0]]])  # L=1, m=3, D=2
    emb = EmbeddingGrid(label=0, cells=cells)
    prefixes = prefix_embeddings(emb, 0)
    assert np.allclose(prefixes[0], [0.0, 2.0])  # single-element mean
    assert np.allclose(prefixes[1], [1.0, 1.0])  # two-point mean
    assert np.allclose(prefixes[2], [2.0, 2.0])
    same = EmbeddingGrid(label=0, cells=np.tile([[3.0, -1.0]], (2, 4, 1)))
    assert np.allclose(prefix_embeddings(same, 1), [3.0, -1.0])


def test_adapter_loss_values():
    # probability 1 on the label -> loss 0
    sure = AdapterParams(w1=np.array([[1.0], [1.0]]), b1=np.zeros(1),
                         w2=np.array([[40.0, 0.0]]), b2=np.zeros(2))
    emb = EmbeddingGrid(label=0, cells=np.array([[[1.0, 1.0]]]))
    assert adapter_loss(sure, emb, 0) == pytest.approx(0.0, abs=1e-12)

    # uniform output, C=3 -> ln 3
    emb3 = EmbeddingGrid(label=2, cells=np.ones((1, 2, 3)))
    assert adapter_loss(zero_adapter(), emb3, 0) == pytest.approx(math.log(3), abs=1e-12)

    # mean embedding [1, 1] through the hand adapter, label 1
    emb2 = EmbeddingGrid(label=1, cells=np.array([[[0.0, 2.0], [2.0, 0.0]]]))
    assert adapter_loss(hand_adapter(), emb2, 0) == pytest.approx(math.log(1 + math.exp(4)), abs=1e-10)


def test_adapter_loss_permutation_invariant(rng):
    emb = random_embedding_grid(rng, 2, 5, 4)
    p = init_adapter(4, 3, rng, hidden_dim=6)
    base = adapter_loss(p, emb, 1)
    for _ in range(5):
        perm = rng.permutation(5)
        shuffled = EmbeddingGrid(label=emb.label, cells=emb.cells[:, perm, :])
        assert adapter_loss(p, shuffled, 1) == pytest.approx(base, rel=1e-12)


def test_aggregate_loss_values(rng):
    emb = random_embedding_grid(rng, 1, 3, 4)
    p = init_adapter(4, 3, rng, hidden_dim=6)
    lam1 = aggregate_ft_loss([p], emb, [1.0])
    probs = adapter_forward(p, prefix_embeddings(emb, 0).mean(axis=0))
    assert lam1 == pytest.approx(-math.log(probs[emb.label]), abs=1e-12)

    assert aggregate_ft_loss([p], emb, [0.0]) == 0.0

    # L=2 composition of hand-computed terms
    cells = np.stack([np.tile([1.0, 1.0], (2, 1)), np.tile([-1.0, -1.0], (2, 1))])
    emb2 = EmbeddingGrid(label=1, cells=cells)
    expected = 0.1 * math.log(1 + math.exp(4)) + 0.8 * math.log(2)
    got = aggregate_ft_loss([hand_adapter(), hand_adapter()], emb2, [0.1, 0.8])
    assert got == pytest.approx(expected, abs=1e-10)


def test_aggregate_loss_is_order_sensitive(rng):
    # prefix structure weights earlier sentences more: a witness permutation changes the loss
    cells = np.array([[[5.0, 0.0], [0.0, 5.0]]])  # L=1, m=2, D=2
    emb = EmbeddingGrid(label=0, cells=cells)
    swapped = EmbeddingGrid(label=0, cells=cells[:, ::-1, :].copy())
    p = init_adapter(2, 2, rng, hidden_dim=3)
    a = aggregate_ft_loss([p], emb, [1.0])
    b = aggregate_ft_loss([p], swapped, [1.0])
    assert abs(a - b) > 1e-9


def test_aggregate_loss_dimension_mismatch(rng):
    emb = random_embedding_grid(rng, 2, 2, 3)
    p = init_adapter(3, 2, rng, hidden_dim=2)
    with pytest.raises(DimensionMismatch):
        aggregate_ft_loss([p], emb, [0.5, 0.5])


def test_default_layer_weights():
    lam = default_layer_weights(4)
    assert np.allclose(lam, [0.1, 0.1, 0.1, 0.8])


# ----------------------------------------------------------------------
# gradient checks
# ----------------------------------------------------------------------

def small_setup(rng, L=3, m=4, D=6, C=3, H=8):
    emb = random_embedding_grid(rng, L, m, D, num_classes=C)
    heads = [init_adapter(D, C, rng, hidden_dim=H) for _ in range(L)]
    return emb, heads


def test_grad_check_adapter_loss(rng):
    emb, heads = small_setup(rng)
    err = grad_check(MODE_ADAPTER_ONLY, heads, emb, eps=1e-5, layer=1, num_coords=60, seed=5)
    assert err < 1e-4


def test_grad_check_joint_loss(rng):
    emb, heads = small_setup(rng)
    err = grad_check(MODE_JOINT, heads, emb, eps=1e-5, lam=[0.1, 0.1, 0.8], num_coords=60, seed=5)
    assert err < 1e-4


def test_grad_zero_for_dead_relu_unit(rng):
    emb, heads = small_setup(rng, L=1)
    p = heads[0]
    p.w1[:, 0] = 0.0
    p.b1[0] = -100.0  # unit 0 never activates; loss constant in w1[:, 0]
    from ee2d.adapters import _analytic_gradient_single

    grads = _analytic_gradient_single(p, mean_embedding(emb, 0), emb.label)
    assert np.all(grads["w1"][:, 0] == 0.0)
    eps = 1e-5
    orig = p.w1[0, 0]
    p.w1[0, 0] = orig + eps
    up = adapter_loss(p, emb, 0)
    p.w1[0, 0] = orig - eps
    down = adapter_loss(p, emb, 0)
    p.w1[0, 0] = orig
    assert (up - down) / (2 * eps) == 0.0


# ----------------------------------------------------------------------
# training
# ----------------------------------------------------------------------

def separable_dataset(n=60, C=2, L=2, m=3, D=4, seed=3):
    spec = SynthSpec(num_samples=n, num_classes=C, num_layers=L, embed_dim=D,
                     sentences=m, noise_sigma=0.0, seed=seed)
    return generate_dataset(spec)


def test_training_reaches_separable_accuracy():
    data = separable_dataset()
    cfg = TrainConfig(learning_rate=0.05, epochs=10, seed=1)
    heads, trace = train_adapters(data, cfg, MODE_ADAPTER_ONLY, hidden_dim=16)
    inputs, labels = layer_training_inputs(data, MODE_ADAPTER_ONLY)
    assert adapter_accuracy(heads[-1], inputs[-1], labels) >= 0.99
    assert np.all(np.isfinite(trace))
    assert trace.shape == (10, 2)


def test_training_single_sample_overfits():
    data = separable_dataset(n=1)
    cfg = TrainConfig(learning_rate=0.05, epochs=10, seed=2)
    _, trace = train_adapters(data, cfg, MODE_ADAPTER_ONLY, num_classes=2, hidden_dim=8)
    assert trace[-1, -1] < trace[0, -1]


def test_joint_zero_weights_leave_params_unchanged():
    data = separable_dataset(n=8)
    cfg = TrainConfig(learning_rate=0.05, epochs=3, seed=4,
                      layer_weights=np.zeros(2))
    heads, trace = train_adapters(data, cfg, MODE_JOINT, hidden_dim=8)
    for i, p in enumerate(heads):
        fresh = init_adapter(4, 2, np.random.default_rng(np.random.SeedSequence([4, i])),
                             hidden_dim=8)
        assert np.array_equal(p.w1, fresh.w1)
        assert np.array_equal(p.b2, fresh.b2)
    assert np.all(trace == 0.0)


def test_adapter_only_layers_independent_of_execution():
    data = separable_dataset(n=24, L=3)
    cfg = TrainConfig(learning_rate=0.02, epochs=3, seed=7)
    seq, t_seq = train_adapters(data, cfg, MODE_ADAPTER_ONLY, hidden_dim=8)
    par, t_par = train_adapters(data, cfg, MODE_ADAPTER_ONLY, hidden_dim=8, threads=3)
    for a, b in zip(seq, par):
        for key, arr in a.arrays().items():
            assert np.array_equal(arr, b.arrays()[key])
    assert np.array_equal(t_seq, t_par)


def test_training_rejects_inconsistent_shapes(rng):
    data = [random_embedding_grid(rng, 2, 3, 4), random_embedding_grid(rng, 3, 3, 4)]
    with pytest.raises(InconsistentShape):
        train_adapters(data, TrainConfig(), MODE_ADAPTER_ONLY)


def test_training_nonfinite_loss_aborts():
    # overflow-scale embeddings push the forward pass to inf - inf = nan
    cells = np.full((2, 2, 4), 1e308)
    data = [EmbeddingGrid(label=i % 2, cells=cells) for i in range(4)]
    cfg = TrainConfig(learning_rate=0.01, epochs=2, seed=1)
    with np.errstate(all="ignore"):
        with pytest.raises(NonFiniteLoss):
            train_adapters(data, cfg, MODE_ADAPTER_ONLY, num_classes=2, hidden_dim=8)


def test_last_incomplete_batch_is_used():
    data = separable_dataset(n=10)
    cfg = TrainConfig(learning_rate=0.05, epochs=1, batch_size=8, seed=1)
    heads, _ = train_adapters(data, cfg, MODE_ADAPTER_ONLY, hidden_dim=8)
    fresh = init_adapter(4, 2, np.random.default_rng(np.random.SeedSequence([1, 0])), hidden_dim=8)
    # two optimizer steps happened (8 + 2 samples), so params moved
    assert not np.array_equal(heads[0].w1, fresh.w1)


# ----------------------------------------------------------------------
# persistence
# ----------------------------------------------------------------------

def test_adapter_round_trip(tmp_path, rng):
    heads = [init_adapter(5, 3, rng, hidden_dim=4) for _ in range(3)]
    path = tmp_path / "adapters.jsonl"
    save_adapters(heads, path)
    loaded = load_adapters(path)
    assert len(loaded) == 3
    for a, b in zip(heads, loaded):
        for key, arr in a.arrays().items():
            assert np.array_equal(arr, b.arrays()[key])


def test_load_adapters_rejects_bad_files(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"layer": 0, "w1": [[1]], "b1": [0]}\n')
    with pytest.raises(SchemaError):
        load_adapters(path)
    path.write_text('{"layer": 1, "w1": [[1]], "b1": [0], "w2": [[1, 2]], "b2": [0, 0]}\n')
    with pytest.raises(SchemaError):  # layer indices must start at 0
        load_adapters(path)
