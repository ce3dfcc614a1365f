import numpy as np

from swfield.connectivity import Split
from swfield.encoding import MockBackbone, pretrain_backbone
from swfield.harness.config import TrainConfig
from swfield.harness.dataset import FieldDataset
from swfield.neural.heads import HeadConfig


def tiny_dataset(n=600, n_img=60, seed=0, shape=(8, 8, 2), noise=0.3):
    """Four well-separated image classes, random coordinates, 60/20/20 split."""
    rng = np.random.default_rng(seed)
    img_class = np.arange(n_img) % 4
    protos = rng.normal(size=(4,) + shape)
    images = protos[img_class] + noise * rng.normal(size=(n_img,) + shape)
    image_index = rng.integers(0, n_img, n)
    labels = img_class[image_index]
    coords = np.column_stack([rng.uniform(-10, 10, n), rng.uniform(0, 359, n),
                              rng.uniform(-10, 10, n), rng.uniform(0, 359, n)])
    split = np.array([Split.TRAIN] * int(n * 0.6) + [Split.VALIDATION] * int(n * 0.2)
                     + [Split.TEST] * (n - int(n * 0.6) - int(n * 0.2)), dtype=object)
    return FieldDataset(image_index=image_index, coords=coords, labels=labels,
                        timestamps=np.arange(n, dtype=float) * 60.0, split=split,
                        interp=rng.random(n) < 0.1, image_keys=np.arange(n_img) * 720, images=images)


def tiny_backbone(data, dim=8, patch=4):
    return pretrain_backbone(data.images, dim=dim, patch=patch)


def tiny_config(**kw):
    base = dict(head=HeadConfig("linear", hidden=16, dropout=0.1), n_bands=2, epochs=4, patience=3,
                batch_size=32, lr=1e-2)
    base.update(kw)
    return TrainConfig(**base)


__all__ = ["tiny_dataset", "tiny_backbone", "tiny_config", "MockBackbone"]
