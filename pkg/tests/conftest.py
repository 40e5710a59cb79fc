import pytest
import torch

from hatescope import synth
from hatescope.corpus import make_folds
from hatescope.detector import TrainingConfig, train
from hatescope.encoder import build_encoder, pretrain_mlm
from hatescope.tokenizer import SPECIAL_TOKENS

# fast settings shared by the small trained fixtures
SMALL_TRAINING = TrainingConfig(learning_rate=2e-3, max_epochs=10, batch_size=8, seed=0, token_dropout=0.5,
                                blank_rate=0.5)


@pytest.fixture(scope="session")
def small_synth():
    return synth.generate(400, 0.5, seed=3)


@pytest.fixture(scope="session")
def small_detector(small_synth):
    corpus = small_synth.corpus
    fold = make_folds(corpus, 5, 0)[0]
    return train(corpus.subset(fold.train_ids), corpus.subset(fold.val_ids, "val"), SMALL_TRAINING,
                 embedding_dim=32)


@pytest.fixture(scope="session")
def small_mlm(small_synth):
    enc = build_encoder(small_synth.corpus.texts, embedding_dim=32, seed=0)
    pretrain_mlm(enc, small_synth.corpus.texts, epochs=4, seed=0)
    return enc


@pytest.fixture(scope="session")
def tiny_encoder():
    texts = ["the quiet teacher spoke", "a busy driver waited today", "unbelievably long words appear"] * 3
    return build_encoder(texts, min_word_count=1, embedding_dim=16, layer_count=2, head_count=2, seed=7)


@pytest.fixture(scope="session")
def tiny_external(tiny_encoder):
    """Randomly initialized BERT masked-LM behind the adapter, with a pretrained-style
    vocabulary layout (markers not at the front, a reserved entry)."""
    transformers = pytest.importorskip("transformers")
    from hatescope.external import ExternalEncoder
    from hatescope.tokenizer import WordPieceTokenizer

    words = [t for t in tiny_encoder.tokenizer.vocab if t not in SPECIAL_TOKENS]
    vocab = ["[PAD]", "[unused0]"] + words[:3] + ["[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words[3:]
    config = transformers.BertConfig(vocab_size=len(vocab), hidden_size=16, num_hidden_layers=2,
                                     num_attention_heads=2, intermediate_size=32, max_position_embeddings=64,
                                     attn_implementation="eager")
    with torch.random.fork_rng():
        torch.manual_seed(0)
        model = transformers.BertForMaskedLM(config)
    return ExternalEncoder(model, WordPieceTokenizer(vocab, 64))


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)


acceptance_key = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion; the test body calls
    ``verdict(name, detail)`` before asserting so the detail survives a failure."""
    lines = request.config.stash.setdefault(acceptance_key, [])
    state = {}

    def record(name, detail=""):
        state["name"], state["detail"] = name, detail

    yield record
    if state:
        report = getattr(request.node, "rep_call", None)
        status = "FAIL"
        if report is not None and (report.passed or report.skipped):
            status = "PASS" if report.passed else "SKIP"
        if status == "SKIP":
            state["detail"] = report.longrepr[2].removeprefix("Skipped: ")
        lines.append(f"{status}  {state['name']}  {state['detail']}".rstrip())


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    report = yield
    if report.when == "call":
        item.rep_call = report
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(acceptance_key, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
