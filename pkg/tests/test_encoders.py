"""Visual pyramid and phrase encoder behavior."""
import numpy as np
import pytest

from cbce.encoders import PhraseEncoder, PhraseSet, VisualEncoder, Vocabulary
from cbce.gradcheck import grad_check
from cbce.model import CbceNet, ModelConfig
from cbce.tensor import Tensor, backward, tsum

PHRASES = ["move by rotating", "spherical", "can roll", "outdoor activities"]


def _vocab():
    return Vocabulary.from_corpus(PHRASES + ["hold water", "sharp edge", "grasp the handle"])


def test_pyramid_shape_contract_toy_config():
    enc = VisualEncoder(c_out=32, feat_h=10, feat_w=10, rng=np.random.default_rng(0))
    img = Tensor(np.random.default_rng(1).random((80, 80, 3)))
    pyr = enc.forward(img)
    assert sorted(pyr.levels) == [3, 4, 5]
    for lvl in (3, 4, 5):
        assert pyr.levels[lvl].shape == (10, 10, 32)


def test_pyramid_differs_for_different_images():
    enc = VisualEncoder(rng=np.random.default_rng(2))
    rng = np.random.default_rng(3)
    a = enc.forward(Tensor(rng.random((80, 80, 3))))
    b = enc.forward(Tensor(rng.random((80, 80, 3))))
    assert not np.allclose(a.levels[5].data, b.levels[5].data)


def test_image_below_total_stride_rejected():
    enc = VisualEncoder(rng=np.random.default_rng(4))
    with pytest.raises(ValueError, match="stride"):
        enc.forward(Tensor(np.zeros((16, 16, 3))))


def test_gradient_reaches_first_stage_from_level5_loss():
    enc = VisualEncoder(
        stage_channels=(4, 4, 4, 4, 4), c_out=2, feat_h=2, feat_w=2,
        rng=np.random.default_rng(5),
    )
    img = Tensor(np.random.default_rng(6).random((32, 32, 3)), requires_grad=True)
    params = dict(enc.parameters())
    rep = grad_check(
        lambda *_: tsum(enc.forward(img).levels[5]),
        [img, params["stage1.w"], params["stage1.b"]],
        max_coords_per_tensor=6,
        rng=np.random.default_rng(7),
    )
    assert rep.passed, rep
    backward(tsum(enc.forward(img).levels[5]))
    assert np.any(params["stage1.w"].grad)


def test_phrase_order_invariance_exact():
    vocab = _vocab()
    enc = PhraseEncoder(len(vocab), c_l=16, rng=np.random.default_rng(8))
    fwd = enc.forward(vocab.encode_phrases(PHRASES)).data
    rev = enc.forward(vocab.encode_phrases(PHRASES[::-1])).data
    np.testing.assert_array_equal(fwd, rev)


def test_identical_phrases_equal_single_phrase():
    vocab = _vocab()
    enc = PhraseEncoder(len(vocab), c_l=16, rng=np.random.default_rng(9))
    one = enc.forward(vocab.encode_phrases(["can roll"])).data
    four = enc.forward(vocab.encode_phrases(["can roll"] * 4)).data
    np.testing.assert_array_equal(one, four)


def test_pooled_feature_dominates_each_phrase():
    vocab = _vocab()
    enc = PhraseEncoder(len(vocab), c_l=16, rng=np.random.default_rng(10))
    pooled = enc.forward(vocab.encode_phrases(PHRASES)).data
    for p in PHRASES:
        single = enc.forward(vocab.encode_phrases([p])).data
        assert (pooled >= single - 1e-12).all()


def test_empty_phrase_rejected():
    vocab = _vocab()
    with pytest.raises(ValueError, match="empty phrase"):
        vocab.encode_phrases(["can roll", "  ...  "])
    enc = PhraseEncoder(len(vocab), c_l=8, rng=np.random.default_rng(11))
    with pytest.raises(ValueError, match="empty phrase"):
        enc.encode_phrase(np.array([], dtype=np.int64))
    with pytest.raises(ValueError, match="empty phrase"):
        PhraseSet(ids=np.zeros((1, 3), dtype=np.int64), lengths=np.array([0]), vocab_size=5)


def test_vocabulary_round_trip_and_unk(tmp_path):
    vocab = _vocab()
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    loaded = Vocabulary.load(path)
    assert loaded.tokens == vocab.tokens
    ids = loaded.encode("Spherical, UNSEEN-word!")
    assert ids[0] == loaded.index["spherical"]
    assert ids[1] == 1  # UNK
    assert loaded.unknown_tokens(["unseenword spherical"]) == ["unseenword"]


def test_vocab_file_format(tmp_path):
    vocab = _vocab()
    path = tmp_path / "vocab.txt"
    vocab.save(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "<pad>" and lines[1] == "<unk>"
    assert len(lines) == len(vocab)


def test_all_parameters_receive_gradient_end_to_end():
    vocab = _vocab()
    cfg = ModelConfig(feat_h=4, feat_w=4, c_i=8, c_l=8, c_f=8, c_a=8, rank=4,
                      backbone_channels=(4, 4, 4, 4, 4))
    net = CbceNet(cfg, len(vocab), rng=12)
    rng = np.random.default_rng(13)
    img = rng.random((40, 40, 3))
    mask = (rng.random((40, 40)) > 0.7).astype(float)
    ps = vocab.encode_phrases(PHRASES)
    backward(net.loss(img, ps, mask))
    dead = [k for k, t in net.parameters().items() if t.grad is None or not np.any(t.grad)]
    # the pad row of the embedding is legitimately unused; nothing else may be
    assert dead == [], f"dead branches: {dead}"
