"""Model inputs: Fourier-encoded coordinates, embedding storage and a toy backbone."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

DEFAULT_COORDS = ("sc_lat", "sc_lon", "fp_lat", "fp_lon")


class EncodingError(ValueError):
    pass


class MissingEmbeddingError(KeyError):
    pass


# ---------------------------------------------------------------------------
# Positional encoding
# ---------------------------------------------------------------------------

def coord_kind(name: str) -> str:
    if name.endswith("lat"):
        return "lat"
    if name.endswith("lon"):
        return "lon"
    raise EncodingError(f"cannot infer lat/lon kind of coordinate {name!r}")


def normalize_lat(lat):
    lat = np.asarray(lat, dtype=float)
    if np.any(~((lat >= -90.0) & (lat <= 90.0))):
        raise EncodingError("latitude outside [-90, 90]")
    return lat / 90.0


def normalize_lon(lon):
    lon = np.asarray(lon, dtype=float)
    if np.any(~((lon >= 0.0) & (lon < 360.0))):
        raise EncodingError("longitude outside [0, 360)")
    return lon / 180.0 - 1.0


def normalize_coords(coords, names: Sequence[str] = DEFAULT_COORDS) -> np.ndarray:
    """Map latitude/longitude columns (degrees) onto [-1, 1]."""
    c = np.atleast_2d(np.asarray(coords, dtype=float))
    if c.shape[-1] != len(names):
        raise EncodingError(f"expected {len(names)} coordinate columns, got {c.shape[-1]}")
    out = np.empty_like(c)
    for j, name in enumerate(names):
        out[..., j] = normalize_lat(c[..., j]) if coord_kind(name) == "lat" else normalize_lon(c[..., j])
    return out


def _angles(x, n_bands: int) -> np.ndarray:
    if n_bands < 1:
        raise EncodingError("number of frequency bands must be >= 1")
    freqs = np.pi * 2.0 ** np.arange(n_bands)
    return np.asarray(x, dtype=float)[..., None] * freqs


def fourier_encode(x, n_bands: int) -> np.ndarray:
    """``[sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(L-1) pi x), cos(2^(L-1) pi x)]``.

    Works elementwise: input shape ``s`` gives output shape ``s + (2L,)``.
    """
    a = _angles(x, n_bands)
    out = np.empty(a.shape[:-1] + (2 * n_bands,))
    out[..., 0::2] = np.sin(a)
    out[..., 1::2] = np.cos(a)
    return out


def fourier_encode_grad(x, n_bands: int) -> np.ndarray:
    """Elementwise derivative of :func:`fourier_encode` with respect to ``x``."""
    a = _angles(x, n_bands)
    freqs = np.pi * 2.0 ** np.arange(n_bands)
    out = np.empty(a.shape[:-1] + (2 * n_bands,))
    out[..., 0::2] = freqs * np.cos(a)
    out[..., 1::2] = -freqs * np.sin(a)
    return out


@dataclass(frozen=True)
class FourierConfig:
    n_bands: int = 10
    coords: tuple[str, ...] = DEFAULT_COORDS

    def __post_init__(self):
        if self.n_bands < 1:
            raise EncodingError("n_bands must be >= 1")
        for c in self.coords:
            coord_kind(c)

    @property
    def encoded_dim(self) -> int:
        return 2 * self.n_bands * len(self.coords)

    def feature_dim(self, embedding_dim: int) -> int:
        return embedding_dim + self.encoded_dim


def encode_coords(normalized, n_bands: int) -> np.ndarray:
    """(n, C) normalised coordinates to (n, 2LC), one 2L block per coordinate."""
    c = np.atleast_2d(np.asarray(normalized, dtype=float))
    return fourier_encode(c, n_bands).reshape(c.shape[0], -1)


def build_feature(embedding, normalized_coords, config: FourierConfig) -> np.ndarray:
    """Concatenate ``[embedding | gamma(c_1) | ... | gamma(c_C)]`` row-wise."""
    emb = np.atleast_2d(np.asarray(embedding, dtype=float))
    coords = np.atleast_2d(np.asarray(normalized_coords, dtype=float))
    if coords.shape[1] != len(config.coords):
        raise EncodingError(
            f"got {coords.shape[1]} coordinates, config lists {len(config.coords)}")
    if emb.shape[0] != coords.shape[0]:
        raise EncodingError("embedding and coordinate batches differ in length")
    return np.concatenate([emb, encode_coords(coords, config.n_bands)], axis=1)


class PositionalFeatures(TransformerMixin, BaseEstimator):
    """Pass the leading embedding columns through and Fourier-encode the trailing coordinates.

    Input rows are ``[embedding (D) | coords in degrees (C)]``; output rows are
    ``[embedding | gamma(normalised coords)]`` with width ``D + 2 L C``.
    """

    def __init__(self, n_bands: int = 10, coords: Sequence[str] = DEFAULT_COORDS):
        self.n_bands = n_bands
        self.coords = coords

    def fit(self, X, y=None):
        X = check_array(X)
        n_coords = len(self.coords)
        if X.shape[1] < n_coords:
            raise EncodingError("fewer columns than coordinates")
        self.config_ = FourierConfig(int(self.n_bands), tuple(self.coords))
        self.n_features_in_ = X.shape[1]
        self.embedding_dim_ = X.shape[1] - n_coords
        return self

    def transform(self, X):
        check_is_fitted(self, "config_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise EncodingError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        D = self.embedding_dim_
        return build_feature(X[:, :D], normalize_coords(X[:, D:], self.config_.coords), self.config_)


# ---------------------------------------------------------------------------
# Embedding store (SWEB)
# ---------------------------------------------------------------------------

SWEB_MAGIC = b"SWEB"
SWEB_VERSION = 1
_SWEB_HEAD = struct.Struct("<4sHII")
_SWEB_REC = struct.Struct("<qQ")


def write_embedding_store(path: str | Path, keys, vectors) -> np.ndarray:
    """Write a SWEB file; returns each row's absolute byte offset."""
    keys = np.asarray(keys, dtype=np.int64)
    vecs = np.asarray(vectors, dtype="<f4")
    if vecs.ndim != 2 or vecs.shape[0] != keys.shape[0]:
        raise EncodingError("vectors must be (count, dim) matching keys")
    if len(np.unique(keys)) != len(keys):
        raise EncodingError("embedding keys must be unique")
    if not np.isfinite(vecs).all():
        raise EncodingError("embeddings must be finite")
    count, dim = vecs.shape
    payload_start = _SWEB_HEAD.size + count * _SWEB_REC.size
    offsets = payload_start + np.arange(count, dtype=np.int64) * dim * 4
    with open(path, "wb") as fh:
        fh.write(_SWEB_HEAD.pack(SWEB_MAGIC, SWEB_VERSION, count, dim))
        for k, off in zip(keys, offsets):
            fh.write(_SWEB_REC.pack(int(k), int(off)))
        fh.write(vecs.tobytes(order="C"))
    return offsets


class EmbeddingStore:
    """Read-only SWEB reader backed by a memory map."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            head = fh.read(_SWEB_HEAD.size)
            if len(head) < _SWEB_HEAD.size:
                raise EncodingError("truncated SWEB header")
            magic, version, count, dim = _SWEB_HEAD.unpack(head)
            if magic != SWEB_MAGIC:
                raise EncodingError(f"bad magic {magic!r}")
            if version != SWEB_VERSION:
                raise EncodingError(f"unsupported SWEB version {version}")
            index = np.frombuffer(fh.read(count * _SWEB_REC.size),
                                  dtype=np.dtype([("key", "<i8"), ("off", "<u8")]))
        self.count, self.dim = int(count), int(dim)
        self.keys = index["key"].astype(np.int64)
        self.offsets = index["off"].astype(np.int64)
        self._pos = {int(k): i for i, k in enumerate(self.keys)}
        self._mm = np.memmap(self.path, dtype=np.uint8, mode="r")

    def __len__(self) -> int:
        return self.count

    def __contains__(self, key) -> bool:
        return int(key) in self._pos

    def get(self, image_key) -> np.ndarray:
        try:
            i = self._pos[int(image_key)]
        except KeyError:
            raise MissingEmbeddingError(f"no embedding for image key {image_key}") from None
        return self.read_at(int(self.offsets[i]))

    def read_at(self, offset: int) -> np.ndarray:
        raw = self._mm[offset: offset + 4 * self.dim]
        return np.frombuffer(raw.tobytes(), dtype="<f4").copy()

    def matrix(self) -> np.ndarray:
        """All rows in index order, shape (count, dim)."""
        return np.stack([self.read_at(int(o)) for o in self.offsets]) if self.count else \
            np.zeros((0, self.dim), dtype=np.float32)


# ---------------------------------------------------------------------------
# Mock backbone
# ---------------------------------------------------------------------------

def patchify(images, patch: int) -> np.ndarray:
    """(n, H, W, C) -> (n, n_patches, patch*patch*C), patches in row-major order."""
    x = np.asarray(images)
    n, H, W, C = x.shape
    if H % patch or W % patch:
        raise EncodingError(f"image {H}x{W} not divisible by patch size {patch}")
    x = x.reshape(n, H // patch, patch, W // patch, patch, C).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(n, (H // patch) * (W // patch), patch * patch * C)


class MockBackbone:
    """Patchify, project each patch linearly, mean-pool to a D-vector.

    Stands in for a pretrained image encoder so that fine-tuning can be
    exercised. Because projection and pooling are both linear, the forward
    pass equals projecting the mean patch; :meth:`pool` exposes that for
    training loops that cache pooled patches.
    """

    def __init__(self, image_shape=(32, 32, 10), patch: int = 8, dim: int = 128,
                 weight=None, bias=None):
        self.image_shape = tuple(int(s) for s in image_shape)
        self.patch = int(patch)
        self.dim = int(dim)
        H, W, C = self.image_shape
        if H % self.patch or W % self.patch:
            raise EncodingError("image size must be divisible by the patch size")
        self.patch_dim = self.patch * self.patch * C
        self.weight = np.zeros((self.dim, self.patch_dim)) if weight is None else np.asarray(weight, float)
        self.bias = np.zeros(self.dim) if bias is None else np.asarray(bias, float)
        if self.weight.shape != (self.dim, self.patch_dim) or self.bias.shape != (self.dim,):
            raise EncodingError("backbone parameter shapes do not match configuration")

    @classmethod
    def random(cls, seed: int = 0, scale: float = 0.02, **kw) -> "MockBackbone":
        bb = cls(**kw)
        rng = np.random.default_rng(seed)
        bb.weight = rng.normal(0.0, scale, size=bb.weight.shape)
        bb.bias = np.zeros(bb.dim)
        return bb

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def copy(self) -> "MockBackbone":
        return MockBackbone(self.image_shape, self.patch, self.dim, self.weight.copy(), self.bias.copy())

    def _check(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=float)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.image_shape:
            raise EncodingError(f"image shape {x.shape[1:]} != configured {self.image_shape}")
        return x

    def forward(self, images) -> np.ndarray:
        patches = patchify(self._check(images), self.patch)
        return (patches @ self.weight.T + self.bias).mean(axis=1)

    __call__ = forward

    def backward(self, images, grad_out) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given dL/d(embedding), shape (n, D)."""
        patches = patchify(self._check(images), self.patch)
        g = np.asarray(grad_out, dtype=float)
        n_patches = patches.shape[1]
        grad_w = np.einsum("nd,npk->dk", g, patches) / n_patches
        return {"weight": grad_w, "bias": g.sum(axis=0)}

    def pool(self, images) -> np.ndarray:
        """Mean patch per image, shape (n, patch_dim)."""
        return patchify(self._check(images), self.patch).mean(axis=1)

    def forward_pooled(self, pooled) -> np.ndarray:
        return np.asarray(pooled) @ self.weight.T + self.bias

    def backward_pooled(self, pooled, grad_out) -> dict[str, np.ndarray]:
        g = np.asarray(grad_out)
        return {"weight": g.T @ np.asarray(pooled), "bias": g.sum(axis=0)}


def pretrain_backbone(images, dim: int = 128, patch: int = 8, edge_margin: float = 1.25) -> MockBackbone:
    """Unsupervised fit: whitened projection onto the leading principal directions of mean patches.

    Only components whose variance clears the isotropic-noise bulk are kept;
    the bulk edge is estimated from the median eigenvalue and the
    Marchenko-Pastur ratio ``(1 + sqrt(p/n))**2``. Kept outputs are centred and
    scaled to unit variance, remaining output rows are zero. This is the
    optimum of a linear denoising autoencoder with a whitened code.
    """
    images = np.asarray(images, dtype=float)
    bb = MockBackbone(images.shape[1:], patch, dim)
    pooled = bb.pool(images)
    n, p = pooled.shape
    if n < 2:
        raise EncodingError("need at least two images to pretrain")
    mean = pooled.mean(axis=0)
    _, s, vt = np.linalg.svd(pooled - mean, full_matrices=False)
    lam = s ** 2 / (n - 1)
    edge = np.median(lam) * (1.0 + np.sqrt(p / n)) ** 2 * edge_margin
    k = int(np.clip((lam > edge).sum(), 1, min(dim, len(lam))))
    weight = np.zeros((dim, bb.patch_dim))
    weight[:k] = vt[:k] / np.sqrt(lam[:k])[:, None]
    # fix the SVD sign ambiguity so pretraining is reproducible across LAPACK builds
    signs = np.sign(weight[np.arange(k), np.abs(weight[:k]).argmax(axis=1)])
    weight[:k] *= signs[:, None]
    bb.weight = weight
    bb.bias = -weight @ mean
    return bb


# ---------------------------------------------------------------------------
# Providers
# ---------------------------------------------------------------------------

class EmbeddingProvider(Protocol):
    def get(self, image_key) -> np.ndarray: ...


class StoreProvider:
    def __init__(self, store: EmbeddingStore):
        self.store = store

    def get(self, image_key) -> np.ndarray:
        return self.store.get(image_key)


class BackboneProvider:
    """Embeds images on demand with a (possibly trainable) mock backbone."""

    def __init__(self, backbone: MockBackbone, images, keys):
        self.backbone = backbone
        self.images = images
        self._pos = {int(k): i for i, k in enumerate(np.asarray(keys, dtype=np.int64))}

    def get(self, image_key) -> np.ndarray:
        try:
            i = self._pos[int(image_key)]
        except KeyError:
            raise MissingEmbeddingError(f"no image for key {image_key}") from None
        return self.backbone.forward(self.images[i][None])[0]
