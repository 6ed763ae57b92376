import os
import shutil
import sys

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")

CORPUS = [
    "Excellent product! It is great. I recommend Dr. Smith.",
    "The battery lasts long. Shipping was slow. Happy overall.",
    "Wait... what? Yes!! Ok.",
    "Bring pens, paper, etc. to class. Thanks.",
    "Use citrus, e.g. lemons. They work fine.",
    "It is cheap, i.e. affordable. Buy it now.",
    "Cats vs. dogs again. A classic debate.",
    "Acme Inc. shipped fast. Five stars from me.",
    "Meet me on St. Mark street. We talk there.",
    "Ask Mr. Brown. He knows. Mrs. Lee agrees. Ms. Park too.",
    "Prof. Hale teaches math. It is a hard class.",
    "Why??? Who knows. Sigh.",
    "Really?! I had no idea. Wow.",
    "So.. strange.. but true.",
    "no punctuation at all",
    "Tabs\tand  spaces. Still fine.",
    "Stop!! Now! Please.",
    "One word. Two words here. Three little words now.",
    "This is... fine. Really.",
    "Ends without punctuation. last words",
    "Great value. Would buy again. Fast delivery. Nice box.",
    "Terrible support! Waited weeks. Never again.",
    "Average at best. Nothing special. It works though.",
    "Loved it! My cat approves. The cat is picky.",
    "Solid build quality. Feels heavy. Looks premium.",
]


def primary_cli():
    """Command prefix for the consumer toolkit's CLI (its public surface)."""
    exe = shutil.which("ee2d")
    if exe:
        return [exe]
    return [sys.executable, "-m", "ee2d.cli"]


@pytest.fixture(scope="session")
def tiny_model(tmp_path_factory):
    """A local, randomly initialized 2-layer causal LM with a word-level tokenizer."""
    import torch
    from tokenizers import Tokenizer, models, pre_tokenizers, trainers
    from transformers import LlamaConfig, LlamaForCausalLM, PreTrainedTokenizerFast

    path = tmp_path_factory.mktemp("model") / "tiny-causal-lm"
    tok = Tokenizer(models.WordLevel(unk_token="[UNK]"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    trainer = trainers.WordLevelTrainer(special_tokens=["[UNK]", "<s>"], vocab_size=2000)
    tok.train_from_iterator(CORPUS, trainer)
    fast = PreTrainedTokenizerFast(tokenizer_object=tok, unk_token="[UNK]", bos_token="<s>")

    config = LlamaConfig(
        vocab_size=fast.vocab_size + 8,
        hidden_size=16,
        intermediate_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        num_key_value_heads=2,
        max_position_embeddings=256,
    )
    torch.manual_seed(0)
    model = LlamaForCausalLM(config)
    model.save_pretrained(path)
    fast.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def review_tsv(tmp_path_factory):
    """label<TAB>text fixture: includes a 1-sentence sample, a shared first
    sentence pair (rows 1 and 2), and an empty-text row that must be skipped."""
    rows = [
        (0, "Just fine."),
        (1, "Excellent product! It is great. I recommend Dr. Smith."),
        (0, "Excellent product! Broke after a week. Terrible support."),
        (1, "The battery lasts long. Shipping was slow. Happy overall."),
        (0, "   "),
        (1, "Loved it! My cat approves."),
    ]
    path = tmp_path_factory.mktemp("data") / "reviews.tsv"
    path.write_text("".join(f"{label}\t{text}\n" for label, text in rows), encoding="utf-8")
    return str(path)
