"""Embedding-grid extraction from pretrained causal language models.

One forward pass per sample: the text is split into sentences, each
sentence tokenized separately (no special tokens), the pieces are
concatenated after an optional BOS token, and every transformer layer's
output hidden states are mean-pooled over each sentence's token span.
Causal attention guarantees that the pooled state of sentence k at any
layer depends only on sentences 0..k, which is the contract the grid
files declare to their consumers. BOS/prompt positions are excluded
from every pooling window.

Output is the grid JSONL format: a manifest line followed by one
{"label": ..., "cells": [[...]]} line per sample, cells indexed
[layer][sentence].
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass

import numpy as np

from .splitter import split_sentences


@dataclass
class ExtractionJob:
    model_id: str
    input_path: str
    output_path: str
    max_sentences: int | None = None
    shard: tuple[int, int] | None = None  # (index, count)
    device: str = "cpu"
    num_classes: int | None = None


def read_samples(path) -> list[tuple[int, str]]:
    """Parse a `label<TAB>text` TSV."""
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path} line {line_no}: expected label<TAB>text")
            label, text = line.split("\t", 1)
            try:
                samples.append((int(label), text))
            except ValueError:
                raise ValueError(f"{path} line {line_no}: label {label!r} is not an integer") from None
    if not samples:
        raise ValueError(f"{path}: no samples")
    return samples


def load_model(model_id: str, device: str = "cpu"):
    import torch
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(model_id)
    # eager attention keeps masked (future) positions exactly zero-weighted,
    # so shared prefixes pool to bit-identical embeddings
    model = AutoModelForCausalLM.from_pretrained(model_id, attn_implementation="eager")
    model.eval()
    model.to(device)
    return tokenizer, model


def sample_grid(tokenizer, model, text: str, max_sentences: int | None, device: str):
    """One forward pass -> (L, m, D) float64 cells, or None if no usable sentence."""
    import torch

    try:
        sentences = split_sentences(text)
    except ValueError:
        return None
    if max_sentences is not None:
        sentences = sentences[:max_sentences]
    spans = []
    ids = []
    bos = tokenizer.bos_token_id
    if bos is not None:
        ids.append(bos)
    for sentence in sentences:
        piece = tokenizer(sentence, add_special_tokens=False)["input_ids"]
        if not piece:
            continue
        spans.append((len(ids), len(ids) + len(piece)))
        ids.extend(piece)
    if not spans:
        return None
    max_pos = getattr(model.config, "max_position_embeddings", None)
    if max_pos is not None and len(ids) > max_pos:
        spans = [(a, min(b, max_pos)) for a, b in spans if a < max_pos]
        ids = ids[:max_pos]
    with torch.no_grad():
        out = model(torch.tensor([ids], device=device), output_hidden_states=True)
    # hidden_states[0] is the embedding table output; layer i lives at [i + 1]
    layers = out.hidden_states[1:]
    cells = np.stack([
        np.stack([layer[0, a:b].mean(dim=0).double().cpu().numpy() for a, b in spans])
        for layer in layers
    ])
    return cells


def extract(job: ExtractionJob) -> dict:
    """Run the extraction job; returns a summary with skip/shape counts."""
    samples = read_samples(job.input_path)
    tokenizer, model = load_model(job.model_id, job.device)
    num_layers = model.config.num_hidden_layers

    records = []
    skipped = 0
    for idx, (label, text) in enumerate(samples):
        if job.shard is not None and idx % job.shard[1] != job.shard[0]:
            continue
        cells = sample_grid(tokenizer, model, text, job.max_sentences, job.device)
        if cells is None:
            skipped += 1
            continue
        records.append((label, cells))
    if skipped:
        print(f"skipped {skipped} sample(s) with no usable sentences", file=sys.stderr)
    if not records:
        raise ValueError("no sample produced a grid")

    embed_dim = records[0][1].shape[2]
    num_classes = job.num_classes if job.num_classes is not None \
        else max(label for label, _ in records) + 1
    manifest = {
        "kind": "embedding",
        "num_classes": int(num_classes),
        "num_layers": int(num_layers),
        "samples": len(records),
        "embed_dim": int(embed_dim),
        "provenance": f"model={job.model_id} layers={num_layers} pooling=sentence-mean "
                      f"attention=causal bos-excluded",
    }
    with open(job.output_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest) + "\n")
        for label, cells in records:
            fh.write(json.dumps({"label": int(label), "cells": cells.tolist()}) + "\n")
    return {
        "written": len(records),
        "skipped": skipped,
        "num_layers": num_layers,
        "embed_dim": embed_dim,
        "output": job.output_path,
    }


# ----------------------------------------------------------------------
# Optional adapter application (shares only the JSONL wire formats with
# the consumer toolkit)
# ----------------------------------------------------------------------

def load_adapter_stack(path) -> list[dict]:
    stack = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            stack[int(obj["layer"])] = {
                "w1": np.asarray(obj["w1"], dtype=np.float64),
                "b1": np.asarray(obj["b1"], dtype=np.float64),
                "w2": np.asarray(obj["w2"], dtype=np.float64),
                "b2": np.asarray(obj["b2"], dtype=np.float64),
            }
    return [stack[i] for i in sorted(stack)]


def _head_forward(head: dict, x: np.ndarray) -> np.ndarray:
    hidden = np.maximum(x @ head["w1"] + head["b1"], 0.0)
    logits = hidden @ head["w2"] + head["b2"]
    logits -= logits.max(axis=-1, keepdims=True)
    exps = np.exp(logits)
    return exps / exps.sum(axis=-1, keepdims=True)


def embeddings_to_probes(emb_path, adapters_path, probe_path) -> int:
    """Convert an embedding JSONL into a probe JSONL with per-layer heads."""
    heads = load_adapter_stack(adapters_path)
    with open(emb_path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    manifest = json.loads(lines[0])
    if manifest.get("kind") != "embedding":
        raise ValueError(f"{emb_path}: expected an embedding file")
    if len(heads) != manifest["num_layers"]:
        raise ValueError(f"{adapters_path}: {len(heads)} adapters for "
                         f"{manifest['num_layers']} layers")
    num_classes = heads[0]["w2"].shape[1]
    out_manifest = dict(manifest)
    out_manifest["kind"] = "probe"
    out_manifest["num_classes"] = int(num_classes)
    out_manifest.pop("embed_dim", None)
    out_manifest["provenance"] = manifest.get("provenance", "") + f" | adapters={adapters_path}"
    with open(probe_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(out_manifest) + "\n")
        for line in lines[1:]:
            record = json.loads(line)
            cells = np.asarray(record["cells"], dtype=np.float64)
            probes = np.stack([_head_forward(heads[i], cells[i]) for i in range(len(heads))])
            fh.write(json.dumps({"label": record["label"], "cells": probes.tolist()}) + "\n")
    return len(lines) - 1
