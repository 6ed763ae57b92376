"""Synthetic embedding-grid generator.

Class signal lives along C mutually orthogonal unit directions (the first
C basis vectors). Cell (i, k) of a class-y sample is
layer_ramp[i] * sentence_ramp[k] * mu_y plus isotropic gaussian noise, so
ramps control where along the layer and sentence axes the label becomes
readable. Early-signal and late-signal regimes are both expressible,
which is what makes the 2D advantage and its absence reproducible at
desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .datamodel import DatasetManifest, EmbeddingGrid, KIND_EMBEDDING
from .errors import SpecError


@dataclass
class SynthSpec:
    num_samples: int
    num_classes: int
    num_layers: int
    embed_dim: int
    sentences: tuple[int, int]  # inclusive (min_m, max_m); a single int means fixed m
    layer_ramp: np.ndarray | None = None  # default: all ones
    sentence_ramp: np.ndarray | None = None  # default: all ones, length max_m
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sentences, int):
            self.sentences = (self.sentences, self.sentences)
        else:
            self.sentences = (int(self.sentences[0]), int(self.sentences[1]))
        if self.layer_ramp is None:
            self.layer_ramp = np.ones(self.num_layers)
        else:
            self.layer_ramp = np.asarray(self.layer_ramp, dtype=np.float64)
        if self.sentence_ramp is None:
            self.sentence_ramp = np.ones(self.sentences[1])
        else:
            self.sentence_ramp = np.asarray(self.sentence_ramp, dtype=np.float64)
        self.validate()

    def validate(self):
        if self.num_samples < 1:
            raise SpecError("num_samples must be >= 1")
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if self.num_layers < 1:
            raise SpecError("num_layers must be >= 1")
        if self.embed_dim < self.num_classes:
            raise SpecError(
                f"embed_dim {self.embed_dim} < num_classes {self.num_classes}: "
                "orthogonal class directions need embed_dim >= num_classes"
            )
        lo, hi = self.sentences
        if lo < 1 or hi < lo:
            raise SpecError(f"bad sentence range {self.sentences}")
        if self.layer_ramp.shape[0] != self.num_layers:
            raise SpecError(f"layer_ramp has length {self.layer_ramp.shape[0]}, need {self.num_layers}")
        if self.sentence_ramp.shape[0] != hi:
            raise SpecError(f"sentence_ramp has length {self.sentence_ramp.shape[0]}, need max m = {hi}")
        for name, ramp in (("layer_ramp", self.layer_ramp), ("sentence_ramp", self.sentence_ramp)):
            if np.any(ramp < 0) or np.any(ramp > 1):
                raise SpecError(f"{name} multipliers must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise SpecError("noise_sigma must be >= 0")


def spec_from_json(obj: dict) -> SynthSpec:
    """Build a SynthSpec from a parsed JSON object (the CLI spec file)."""
    try:
        return SynthSpec(
            num_samples=int(obj["num_samples"]),
            num_classes=int(obj["num_classes"]),
            num_layers=int(obj["num_layers"]),
            embed_dim=int(obj["embed_dim"]),
            sentences=obj["sentences"],
            layer_ramp=obj.get("layer_ramp"),
            sentence_ramp=obj.get("sentence_ramp"),
            noise_sigma=float(obj.get("noise_sigma", 0.0)),
            seed=int(obj.get("seed", 0)),
        )
    except KeyError as exc:
        raise SpecError(f"synth spec missing field {exc}") from None


def load_spec(path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        return spec_from_json(json.load(fh))


def class_directions(num_classes: int, embed_dim: int) -> np.ndarray:
    """First C standard basis vectors as (C, D) unit rows."""
    mu = np.zeros((num_classes, embed_dim))
    mu[np.arange(num_classes), np.arange(num_classes)] = 1.0
    return mu


def generate_dataset(spec: SynthSpec) -> list[EmbeddingGrid]:
    """Deterministic generation; per-sample streams are seeded by (seed, index)."""
    head_rng = np.random.default_rng(np.random.SeedSequence([spec.seed]))
    n, C = spec.num_samples, spec.num_classes
    # Balanced labels (counts differ by at most 1), shuffled.
    labels = np.array([i % C for i in range(n)], dtype=np.int64)
    head_rng.shuffle(labels)
    lo, hi = spec.sentences
    ms = head_rng.integers(lo, hi + 1, size=n)
    mu = class_directions(C, spec.embed_dim)

    grids = []
    for idx in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, idx]))
        m = int(ms[idx])
        signal = np.einsum(
            "i,k->ik", spec.layer_ramp, spec.sentence_ramp[:m]
        )[:, :, None] * mu[labels[idx]][None, None, :]
        noise = rng.normal(0.0, spec.noise_sigma, size=signal.shape) if spec.noise_sigma > 0 else 0.0
        grids.append(EmbeddingGrid(label=int(labels[idx]), cells=signal + noise))
    return grids


def manifest_for(spec: SynthSpec) -> DatasetManifest:
    return DatasetManifest(
        kind=KIND_EMBEDDING,
        num_classes=spec.num_classes,
        num_layers=spec.num_layers,
        samples=spec.num_samples,
        embed_dim=spec.embed_dim,
        provenance=f"synthetic seed={spec.seed} noise_sigma={spec.noise_sigma}",
    )
