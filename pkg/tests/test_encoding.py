import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swfield.encoding import (
    BackboneProvider, EmbeddingStore, EncodingError, FourierConfig, MissingEmbeddingError, MockBackbone,
    PositionalFeatures, StoreProvider, build_feature, fourier_encode, fourier_encode_grad, normalize_coords,
    normalize_lat, normalize_lon, patchify, pretrain_backbone, write_embedding_store,
)


def test_normalize_examples():
    assert normalize_lat(45.0) == 0.5
    assert normalize_lon(180.0) == 0.0
    assert normalize_lon(0.0) == -1.0


def test_normalize_range_errors():
    with pytest.raises(EncodingError):
        normalize_lat(91.0)
    with pytest.raises(EncodingError):
        normalize_lon(360.0)
    with pytest.raises(EncodingError):
        normalize_coords([[0.0, 0.0, 0.0]])


def test_fourier_examples():
    assert np.allclose(fourier_encode(0.0, 3), [0, 1, 0, 1, 0, 1], atol=0)
    assert np.allclose(fourier_encode(0.5, 2), [1, 0, 0, -1], atol=1e-15)
    x = np.random.default_rng(0).uniform(-1, 1, 20)
    assert np.allclose((fourier_encode(x, 4) ** 2).sum(axis=-1), 4.0, atol=1e-12)


def test_fourier_ordering():
    x = 0.3
    out = fourier_encode(x, 3)
    expected = []
    for k in range(3):
        expected += [np.sin(2 ** k * np.pi * x), np.cos(2 ** k * np.pi * x)]
    assert np.array_equal(out, expected)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.integers(1, 12))
def test_fourier_norm_and_derivative(x, L):
    enc = fourier_encode(x, L)
    assert enc.shape == (2 * L,)
    assert abs((enc ** 2).sum() - L) < 1e-12
    h = 1e-7
    fd = (fourier_encode(x + h, L) - fourier_encode(x - h, L)) / (2 * h)
    an = fourier_encode_grad(x, L)
    assert np.linalg.norm(fd - an) <= 1e-6 * max(np.linalg.norm(an), 1e-300)


def test_bands_must_be_positive():
    with pytest.raises(EncodingError):
        fourier_encode(0.1, 0)


def test_feature_dimension_reference():
    cfg = FourierConfig(10)
    out = build_feature(np.zeros((1, 1024)), np.zeros((1, 4)), cfg)
    assert out.shape == (1, 1104)
    assert cfg.feature_dim(1024) == 1104


@pytest.mark.parametrize("D", [1, 16, 128])
@pytest.mark.parametrize("L", [1, 4, 10])
@pytest.mark.parametrize("C", [1, 2, 4])
def test_feature_dimension_grid(D, L, C):
    names = ("sc_lat", "sc_lon", "fp_lat", "fp_lon")[:C]
    out = build_feature(np.ones((3, D)), np.zeros((3, C)), FourierConfig(L, names))
    assert out.shape == (3, D + 2 * L * C)


def test_zero_embedding_layout():
    out = build_feature(np.zeros((1, 5)), np.zeros((1, 4)), FourierConfig(2))
    assert np.array_equal(out[0, :5], np.zeros(5))
    assert np.array_equal(out[0, 5:], np.tile(fourier_encode(0.0, 2), 4))


def test_permuting_coords_permutes_blocks():
    cfg = FourierConfig(3)
    c = np.array([[0.1, -0.4, 0.7, 0.2]])
    emb = np.arange(4.0)[None]
    a = build_feature(emb, c, cfg)
    b = build_feature(emb, c[:, [2, 0, 3, 1]], cfg)
    blocks = a[0, 4:].reshape(4, 6)
    assert np.array_equal(b[0, :4], a[0, :4])
    assert np.array_equal(b[0, 4:].reshape(4, 6), blocks[[2, 0, 3, 1]])


def test_feature_shape_error():
    with pytest.raises(EncodingError):
        build_feature(np.zeros((1, 8)), np.zeros((1, 3)), FourierConfig(2))


def test_positional_transformer():
    X = np.column_stack([np.ones((2, 3)), [[10.0, 20.0, -5.0, 300.0], [0.0, 0.0, 0.0, 0.0]]])
    out = PositionalFeatures(n_bands=2).fit_transform(X)
    assert out.shape == (2, 3 + 16)
    assert np.array_equal(out[:, 3:], build_feature(np.ones((2, 0)), normalize_coords(X[:, 3:]), FourierConfig(2)))


# -- embedding store ----------------------------------------------------------

def test_store_roundtrip(tmp_path, rng):
    keys = np.array([1_600_000_000 + 720 * i for i in range(5)])
    vecs = rng.normal(size=(5, 7)).astype(np.float32)
    write_embedding_store(tmp_path / "e.sweb", keys, vecs)
    store = EmbeddingStore(tmp_path / "e.sweb")
    for k, v in zip(keys, vecs):
        assert store.get(k).tobytes() == v.tobytes()
    assert np.array_equal(store.matrix(), vecs)
    assert StoreProvider(store).get(keys[2]).tobytes() == vecs[2].tobytes()


def test_store_layout_bytes(tmp_path):
    write_embedding_store(tmp_path / "e.sweb", [42, -7], np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = (tmp_path / "e.sweb").read_bytes()
    head = struct.unpack_from("<4sHII", raw, 0)
    assert head == (b"SWEB", 1, 2, 2)
    index = [struct.unpack_from("<qQ", raw, 14 + 16 * i) for i in range(2)]
    assert index == [(42, 46), (-7, 54)]
    assert struct.unpack_from("<4f", raw, 46) == (1.0, 2.0, 3.0, 4.0)
    assert len(raw) == 62


def test_store_rereads_are_stable(tmp_path, rng):
    write_embedding_store(tmp_path / "e.sweb", [1, 2], rng.normal(size=(2, 3)))
    before = (tmp_path / "e.sweb").read_bytes()
    store = EmbeddingStore(tmp_path / "e.sweb")
    a = store.get(1).tobytes()
    assert store.get(1).tobytes() == a
    assert (tmp_path / "e.sweb").read_bytes() == before


def test_store_missing_key(tmp_path):
    write_embedding_store(tmp_path / "e.sweb", [1], np.zeros((1, 2)))
    with pytest.raises(MissingEmbeddingError):
        EmbeddingStore(tmp_path / "e.sweb").get(99)


def test_store_rejects_bad_magic(tmp_path):
    (tmp_path / "bad.sweb").write_bytes(b"XXXX" + b"\0" * 20)
    with pytest.raises(EncodingError):
        EmbeddingStore(tmp_path / "bad.sweb")


# -- mock backbone ------------------------------------------------------------

def test_zero_weights_zero_embedding(rng):
    bb = MockBackbone((16, 16, 3), patch=8, dim=5)
    assert np.array_equal(bb.forward(rng.normal(size=(2, 16, 16, 3))), np.zeros((2, 5)))


def test_constant_image_identity_projection():
    bb = MockBackbone((8, 8, 1), patch=4, dim=16, weight=np.eye(16))
    out = bb.forward(np.full((8, 8, 1), 2.5))
    assert np.array_equal(out[0], np.full(16, 2.5))


def test_seeded_determinism(rng):
    img = rng.normal(size=(3, 32, 32, 10))
    a = MockBackbone.random(seed=4).forward(img)
    b = MockBackbone.random(seed=4).forward(img)
    assert np.array_equal(a, b)
    assert a.shape == (3, 128)


def test_pooled_path_equals_forward(rng):
    bb = MockBackbone.random(seed=1, image_shape=(16, 16, 2), patch=4, dim=6)
    bb.bias = rng.normal(size=6)
    img = rng.normal(size=(4, 16, 16, 2))
    assert np.allclose(bb.forward_pooled(bb.pool(img)), bb.forward(img), atol=1e-12)


def test_patchify_order():
    x = np.arange(16.0).reshape(1, 4, 4, 1)
    p = patchify(x, 2)
    assert p[0, 0].tolist() == [0, 1, 4, 5]
    assert p[0, 3].tolist() == [10, 11, 14, 15]


def test_backbone_shape_errors(rng):
    with pytest.raises(EncodingError):
        MockBackbone((30, 30, 1), patch=8)
    with pytest.raises(EncodingError):
        MockBackbone((16, 16, 1), patch=8, dim=4).forward(rng.normal(size=(1, 8, 8, 1)))


def test_backbone_provider(rng):
    bb = MockBackbone.random(seed=2, image_shape=(8, 8, 1), patch=4, dim=3)
    imgs = rng.normal(size=(2, 8, 8, 1))
    prov = BackboneProvider(bb, imgs, [100, 200])
    assert np.allclose(prov.get(200), bb.forward(imgs[1:2])[0])
    with pytest.raises(MissingEmbeddingError):
        prov.get(300)


def test_pretrain_whitens_leading_components(rng):
    # a few strong directions plus isotropic noise
    n = 400
    signal = rng.normal(size=(n, 2)) @ rng.normal(size=(2, 16)) * 3.0
    pooled = signal + 0.1 * rng.normal(size=(n, 16))
    images = pooled.reshape(n, 4, 4, 1)  # one patch per image, so the pooled patch is the sample
    bb = pretrain_backbone(images, dim=8, patch=4)
    emb = bb.forward(images)
    kept = np.flatnonzero(np.abs(bb.weight).sum(axis=1) > 0)
    assert list(kept) == [0, 1]
    assert np.allclose(emb[:, kept].mean(axis=0), 0.0, atol=1e-9)
    assert np.allclose(np.cov(emb[:, kept].T), np.eye(2), atol=1e-9)
    assert np.array_equal(pretrain_backbone(images, dim=8, patch=4).weight, bb.weight)
