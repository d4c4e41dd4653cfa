import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from bitriple.encoder import (
    EncoderStateError,
    LookupEncoder,
    PretrainedEncoder,
    ProjectionParams,
    TinyEncoder,
    TokenEncoding,
    build_backend,
    build_vocab,
    project,
)


def set_linear(layer, weight, bias):
    with torch.no_grad():
        layer.weight.copy_(torch.as_tensor(weight, dtype=layer.weight.dtype))
        layer.bias.copy_(torch.as_tensor(bias, dtype=layer.bias.dtype))


def params_from(ws, bs, wo, bo, wr, br, dtype=torch.float64):
    p = ProjectionParams(len(bs)).to(dtype)
    set_linear(p.subject, ws, bs)
    set_linear(p.object, wo, bo)
    set_linear(p.relation, wr, br)
    return p


def numpy_projection(h, summary, ws, bs, wo, bo, wr, br):
    """Row-by-row reference."""
    hs_cls = ws @ summary + bs
    ho_cls = wo @ summary + bo
    hs = np.stack([ws @ row + bs + ho_cls for row in h])
    ho = np.stack([wo @ row + bo + hs_cls for row in h])
    hr = np.stack([wr @ row + br for row in h])
    return hs, ho, hr


def test_zero_projection_gives_zero():
    z = np.zeros((3, 3))
    p = params_from(z, np.zeros(3), z, np.zeros(3), z, np.zeros(3))
    enc = TokenEncoding(torch.randn(4, 3, dtype=torch.float64), torch.randn(3, dtype=torch.float64))
    f = project(enc, p)
    for t in (f.hs, f.ho, f.hr):
        assert torch.count_nonzero(t) == 0


def test_identity_projection_adds_summary():
    eye = np.eye(2)
    p = params_from(eye, np.zeros(2), eye, np.zeros(2), eye, np.zeros(2))
    h = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64)
    f = project(TokenEncoding(h, h[0]), p)
    assert f.hs.tolist() == [[2.0, 4.0], [4.0, 6.0]]
    assert f.ho.tolist() == [[2.0, 4.0], [4.0, 6.0]]
    assert f.hr.tolist() == h.tolist()


def test_hand_computed_projection():
    # hs_pre = [[2,4],[4,8]], ho_pre = [[2,0],[4,2]], hs_cls = [2,4], ho_cls = [2,0]
    p = params_from([[1, 0], [0, 2]], [1, 0], [[0, 1], [1, 0]], [0, -1], np.eye(2), [0.5, 0.5])
    h = torch.tensor([[1.0, 2.0], [3.0, 4.0]], dtype=torch.float64)
    f = project(TokenEncoding(h, h[0]), p)
    assert f.hs.tolist() == [[4.0, 4.0], [6.0, 8.0]]
    assert f.ho.tolist() == [[4.0, 4.0], [6.0, 6.0]]
    assert f.hr.tolist() == [[1.5, 2.5], [3.5, 4.5]]
    assert f.hs_cls.tolist() == [2.0, 4.0] and f.ho_cls.tolist() == [2.0, 0.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6), st.integers(1, 7))
def test_projection_matches_numpy(seed, d, length):
    rng = np.random.default_rng(seed)
    mats = [rng.normal(size=s) for s in [(d, d), (d,)] * 3]
    h = rng.normal(size=(length, d))
    summary = rng.normal(size=d)
    f = project(TokenEncoding(torch.tensor(h), torch.tensor(summary)), params_from(*mats))
    for got, want in zip((f.hs, f.ho, f.hr), numpy_projection(h, summary, *mats)):
        np.testing.assert_allclose(got.detach().numpy(), want, atol=1e-12)


def test_projection_is_affine_in_encoder_vectors():
    torch.manual_seed(0)
    p = ProjectionParams(4).double()
    h1, h2 = torch.randn(2, 3, 4, dtype=torch.float64)
    s = torch.randn(4, dtype=torch.float64)
    a = 0.3
    f1 = project(TokenEncoding(h1, s), p)
    f2 = project(TokenEncoding(h2, s), p)
    fm = project(TokenEncoding(a * h1 + (1 - a) * h2, s), p)
    torch.testing.assert_close(fm.hs, a * f1.hs + (1 - a) * f2.hs)
    torch.testing.assert_close(fm.hr, a * f1.hr + (1 - a) * f2.hr)


def test_injection_is_constant_across_rows():
    torch.manual_seed(1)
    p = ProjectionParams(4).double()
    h = torch.randn(5, 4, dtype=torch.float64)
    a = project(TokenEncoding(h, torch.zeros(4, dtype=torch.float64)), p)
    b = project(TokenEncoding(h, torch.randn(4, dtype=torch.float64)), p)
    diff = b.hs - a.hs
    torch.testing.assert_close(diff, diff[:1].expand_as(diff))
    torch.testing.assert_close(b.hr, a.hr)


def test_projection_gradcheck():
    torch.manual_seed(2)
    p = ProjectionParams(3).double()
    h = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    s = torch.randn(3, dtype=torch.float64, requires_grad=True)

    def fn(h, s):
        f = project(TokenEncoding(h, s), p)
        return f.hs, f.ho, f.hr

    assert torch.autograd.gradcheck(fn, (h, s), eps=1e-6, atol=1e-8)


def test_width_mismatch_and_empty_input():
    p = ProjectionParams(4)
    with pytest.raises(ValueError, match="width"):
        project(TokenEncoding(torch.zeros(2, 3), torch.zeros(3)), p)
    enc = LookupEncoder(["[PAD]", "[UNK]", "a"], torch.eye(3))
    with pytest.raises(ValueError):
        enc.encode([])


def test_lookup_backend_and_batch_projection():
    vocab = ["[PAD]", "[UNK]", "[CLS]", "x", "y"]
    enc = LookupEncoder(vocab, torch.arange(15, dtype=torch.float32).reshape(5, 3))
    one = enc.encode(["x", "zz"])
    assert one.vectors.tolist() == [[9, 10, 11], [3, 4, 5]]
    assert one.summary.tolist() == [9, 10, 11]
    batch = enc.encode_batch([["x"], ["y", "x"]])
    assert batch.mask.tolist() == [[True, False], [True, True]]
    p = ProjectionParams(3)
    torch.testing.assert_close(project(batch, p).select(1).hs, project(enc.encode(["y", "x"]), p).hs)


def test_tiny_backend_shapes_and_padding_independence():
    torch.manual_seed(0)
    vocab = build_vocab([["a", "b", "c"]])
    assert vocab[:3] == ["[PAD]", "[UNK]", "[CLS]"]
    enc = TinyEncoder(vocab, dim=8, layers=1, heads=2).eval()
    single = enc.encode(["a", "b"])
    assert single.vectors.shape == (2, 8) and single.summary.shape == (8,)
    padded = enc.encode_batch([["a", "b"], ["a", "b", "c", "c"]])
    torch.testing.assert_close(padded.vectors[0, :2], single.vectors, atol=1e-5, rtol=1e-5)
    with pytest.raises(ValueError):
        TinyEncoder(vocab, dim=128)
    with pytest.raises(ValueError):
        build_backend("nonsense")


def test_pretrained_requires_load():
    with pytest.raises(EncoderStateError):
        PretrainedEncoder("unused").encode(["a"])


@pytest.fixture(scope="module")
def tiny_bert(tmp_path_factory):
    from transformers import BertConfig, BertModel, BertTokenizerFast

    path = tmp_path_factory.mktemp("bert")
    words = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "new", "york", "##er", "lives", "in", "john"]
    (path / "vocab.txt").write_text("\n".join(words) + "\n")
    BertTokenizerFast(vocab_file=str(path / "vocab.txt"), do_lower_case=True).save_pretrained(path)
    torch.manual_seed(0)
    config = BertConfig(vocab_size=len(words), hidden_size=8, num_hidden_layers=1, num_attention_heads=2,
                        intermediate_size=16, max_position_embeddings=32)
    BertModel(config).save_pretrained(path)
    return path


def test_pretrained_backend_first_subword(tiny_bert):
    enc = PretrainedEncoder(str(tiny_bert)).load()
    enc.model.eval()
    out = enc.encode(["John", "lives", "in", "Yorker"])
    assert out.vectors.shape == (4, 8) and enc.dim == 8
    raw = enc.tokenizer([["John", "lives", "in", "Yorker"]], is_split_into_words=True, return_tensors="pt")
    hidden = enc.model(**raw).last_hidden_state[0]
    # [CLS] john lives in york ##er [SEP]: word 3 starts at subword 4
    torch.testing.assert_close(out.vectors[3], hidden[4])
    torch.testing.assert_close(out.summary, hidden[0])
    f = ProjectionParams(8)(out)
    assert f.hs.shape == (4, 8)
