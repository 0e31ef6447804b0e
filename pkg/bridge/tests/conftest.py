import pytest


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """Randomly initialized mini masked LM saved to disk (no network)."""
    torch = pytest.importorskip("torch")
    transformers = pytest.importorskip("transformers")
    from transformers import BertConfig, BertForMaskedLM, BertTokenizer

    words = [
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
        "beginning", "inside", "outside",
        "in", "the", "sentence", "above", ",", "word", "refers", "to",
        "of", "a", "disease", "entity", ".", "\"", "was", "made",
        "diagnosis", "young", "boy", "tumor", "found", "no", "signs",
        "##ness", "##ing", "out", "side",
    ]
    vocab = {w: i for i, w in enumerate(words)}
    directory = tmp_path_factory.mktemp("tiny-model")
    tokenizer = BertTokenizer(vocab=vocab)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=32,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=64,
        max_position_embeddings=128,
    )
    torch.manual_seed(1234)
    model = BertForMaskedLM(config)
    model.save_pretrained(directory)
    tokenizer.save_pretrained(directory)
    return directory
