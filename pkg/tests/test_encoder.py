import numpy as np
import pytest
import torch
from torch import nn

from hatescope.encoder import (
    BuiltinEncoder,
    EmbeddingSequence,
    EncoderError,
    HeadSelector,
    MeanPoolEncoder,
    TextEncoder,
    assert_alignment,
    build_encoder,
    gradient_wrt_embeddings,
    load_encoder,
    mlm_predict,
    pretrain_mlm,
    save_encoder,
)
from hatescope.tokenizer import MASK

FD_RELATIVE_STEP = 1e-4  # step length as a fraction of the input norm
FD_TOLERANCE = 1e-4


def _random_head(d, seed):
    g = torch.Generator().manual_seed(seed)
    head = nn.Linear(d, 2).double()
    with torch.no_grad():
        head.weight.copy_(torch.randn(2, d, generator=g, dtype=torch.float64))
        head.bias.copy_(torch.randn(2, generator=g, dtype=torch.float64))
    return head


def _random_ids(enc, rng, length):
    ordinary = [i for i in range(len(enc.tokenizer)) if i not in enc.tokenizer.special_ids]
    body = rng.choice(ordinary, size=length).tolist()
    return [enc.tokenizer.cls_id] + body + [enc.tokenizer.sep_id]


# every encoder behind the contract runs the same alignment and gradient checks
ENCODERS = ["tiny_encoder", "tiny_external"]


@pytest.fixture(params=ENCODERS)
def any_encoder(request):
    return request.getfixturevalue(request.param)


def test_satisfies_contract(any_encoder):
    assert isinstance(any_encoder, TextEncoder)
    assert isinstance(MeanPoolEncoder(any_encoder.tokenizer), TextEncoder)


def test_same_seed_same_parameters():
    texts = ["one two three", "two three four"] * 2
    a = build_encoder(texts, min_word_count=1, embedding_dim=8, seed=3)
    b = build_encoder(texts, min_word_count=1, embedding_dim=8, seed=3)
    for (na, pa), (nb, pb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert na == nb and torch.equal(pa, pb)


def test_embed_is_token_plus_position(tiny_encoder):
    enc = tiny_encoder
    t = enc.tokenizer.pad(enc.tokenize("the quiet teacher"), 8)
    e1, e2 = enc.embed(t).vectors, enc.embed(t).vectors
    assert torch.equal(e1, e2)
    assert e1.shape == (8, enc.embedding_dim)
    pos = enc.position_embedding.weight
    # two pad positions share the token part and differ in the position part
    assert torch.allclose(e1[6] - pos[6], e1[7] - pos[7])
    assert not torch.allclose(e1[6], e1[7])


def test_embed_rejects_unknown_id(tiny_encoder):
    with pytest.raises(EncoderError):
        tiny_encoder.embed_ids(torch.tensor([0, len(tiny_encoder.tokenizer)]))


def test_encode_shape_and_purity(any_encoder):
    e = any_encoder.embed(any_encoder.tokenize("a busy driver waited"))
    a = any_encoder.encode(e)
    b = any_encoder.encode(e)
    assert a.contextual.shape == e.vectors.shape
    assert torch.equal(a.contextual, b.contextual)
    assert torch.equal(a.pooled, a.contextual[0])


def test_encode_dimension_mismatch(any_encoder):
    with pytest.raises(EncoderError):
        any_encoder.encode(EmbeddingSequence(torch.zeros(4, any_encoder.embedding_dim + 1, dtype=torch.float64)))


def test_permutation_changes_pooled_output(small_detector):
    enc = small_detector.encoder
    words = "the quiet teacher from the city spoke today".split()
    swapped = list(words)
    swapped[1], swapped[4] = swapped[4], swapped[1]
    a = enc.encode(enc.embed(enc.tokenize(" ".join(words)))).pooled
    b = enc.encode(enc.embed(enc.tokenize(" ".join(swapped)))).pooled
    assert not torch.allclose(a, b)


def test_constant_head_has_zero_gradient(any_encoder):
    e = any_encoder.embed(any_encoder.tokenize("the quiet teacher"))
    grad = gradient_wrt_embeddings(any_encoder, e, lambda out: torch.tensor(3.0, dtype=torch.float64))
    assert torch.count_nonzero(grad) == 0


def test_meanpool_linear_head_gradient(tiny_encoder):
    enc = MeanPoolEncoder(tiny_encoder.tokenizer, dim=6, seed=1)
    w = torch.arange(1.0, 7.0, dtype=torch.float64)
    e = enc.embed(enc.tokenize("a busy driver waited today"))
    grad = enc.gradient_wrt_embeddings(e, lambda out: out.pooled @ w)
    n = e.length
    assert torch.allclose(grad, (w / n).expand(n, -1), atol=1e-12)


def test_selector_out_of_range():
    with pytest.raises(EncoderError):
        HeadSelector(nn.Linear(4, 2), 2)


def test_gradient_matches_central_differences(any_encoder):
    """Directional derivatives on 120 random inputs, plus coordinate checks."""
    enc = any_encoder
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(120):
        ids = _random_ids(enc, rng, int(rng.integers(1, 10)))
        e = enc.embed_ids(torch.tensor(ids)).detach()
        head = _random_head(enc.embedding_dim, trial)
        target = HeadSelector(head, trial % 2, "prob" if trial % 3 else "logit")
        grad = gradient_wrt_embeddings(enc, EmbeddingSequence(e), target)
        v = torch.from_numpy(rng.standard_normal(e.shape))
        v /= v.norm()
        h = FD_RELATIVE_STEP * float(e.norm())

        def f(x):
            with torch.no_grad():
                return float(target(enc.encode(EmbeddingSequence(x))))

        numeric = (f(e + h * v) - f(e - h * v)) / (2 * h)
        analytic = float((grad * v).sum())
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
        worst = max(worst, rel)
        if trial < 5:
            for _ in range(5):
                i, j = int(rng.integers(e.shape[0])), int(rng.integers(e.shape[1]))
                unit = torch.zeros_like(e)
                unit[i, j] = 1.0
                numeric = (f(e + h * unit) - f(e - h * unit)) / (2 * h)
                rel = abs(numeric - float(grad[i, j])) / max(abs(numeric), abs(float(grad[i, j])), 1e-6)
                worst = max(worst, rel)
    assert worst <= FD_TOLERANCE


def test_batched_gradient_matches_single(any_encoder):
    enc = any_encoder
    target = HeadSelector(_random_head(enc.embedding_dim, 5), 1)
    e = enc.embed(enc.tokenize("the quiet teacher spoke")).vectors
    stack = torch.stack([e, 0.5 * e])
    batched = gradient_wrt_embeddings(enc, EmbeddingSequence(stack), target)
    for row in range(2):
        single = gradient_wrt_embeddings(enc, EmbeddingSequence(stack[row]), target)
        assert torch.allclose(batched[row], single, atol=1e-12)


@pytest.fixture(scope="module")
def fixed_context_mlm():
    names = ["anna", "boris", "chen", "dara", "emil", "fern", "gus", "hana"]
    texts = [f"{n} always drinks green tea" for n in names] * 6
    enc = build_encoder(texts, min_word_count=1, embedding_dim=32, seed=0)
    pretrain_mlm(enc, texts, epochs=25, learning_rate=3e-3, seed=0, mask_prob=0.3)
    return enc


def test_mlm_recovers_deterministic_word(fixed_context_mlm):
    enc = fixed_context_mlm
    fills = enc.mlm_predict(enc.tokenize(f"gus always drinks {MASK} tea"), 1)
    assert fills[0][0].token == "green"


def test_mlm_two_masks_ranked(fixed_context_mlm):
    enc = fixed_context_mlm
    fills = mlm_predict(enc, enc.tokenize(f"{MASK} always {MASK} green tea"), 4)
    assert len(fills) == 2 and all(len(f) == 4 for f in fills)
    for ranked in fills:
        probs = [f.prob for f in ranked]
        assert probs == sorted(probs, reverse=True)
        assert not {f.id for f in ranked} & set(enc.tokenizer.special_ids)


def test_mlm_errors(fixed_context_mlm):
    enc = fixed_context_mlm
    with pytest.raises(EncoderError):
        enc.mlm_predict(enc.tokenize("no mask here"), 1)
    with pytest.raises(EncoderError):
        enc.mlm_predict(enc.tokenize(MASK), len(enc.tokenizer))


def test_save_load_round_trip(tmp_path, tiny_encoder):
    save_encoder(tiny_encoder, tmp_path / "a")
    back = load_encoder(tmp_path / "a")
    assert isinstance(back, BuiltinEncoder)
    e = tiny_encoder.embed(tiny_encoder.tokenize("the busy teacher"))
    assert torch.equal(tiny_encoder.encode(e).contextual, back.encode(back.embed(back.tokenize("the busy teacher"))).contextual)
    save_encoder(back, tmp_path / "b")
    assert (tmp_path / "a" / "weights.bin").read_bytes() == (tmp_path / "b" / "weights.bin").read_bytes()


def test_load_rejects_unknown_version(tmp_path, tiny_encoder):
    save_encoder(tiny_encoder, tmp_path)
    m = (tmp_path / "manifest.json").read_text().replace('"format_version": 1', '"format_version": 99')
    (tmp_path / "manifest.json").write_text(m)
    with pytest.raises(EncoderError):
        load_encoder(tmp_path)


def test_alignment_invariants(any_encoder):
    for text in ["", "unbelievably long words appear", "the quiet teacher spoke"]:
        assert_alignment(any_encoder.tokenize(text))
