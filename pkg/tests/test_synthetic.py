import numpy as np
import pytest

from dataeff.formats import load_dataset
from dataeff.image import apply_op, AugmentationOp
from dataeff.synthetic import make_prototypes, make_synthetic, write_dataset


def test_shapes_and_labels():
    images, labels = make_synthetic(num_classes=4, per_class=3, size=8, seed=1)
    assert len(images) == 12
    assert {im.shape for im in images} == {(8, 8, 3)}
    assert np.bincount(labels).tolist() == [3, 3, 3, 3]


def test_seeded():
    a, _ = make_synthetic(3, 2, 6, seed=5)
    b, _ = make_synthetic(3, 2, 6, seed=5)
    c, _ = make_synthetic(3, 2, 6, seed=6)
    assert [im.data for im in a] == [im.data for im in b]
    assert [im.data for im in a] != [im.data for im in c]


def test_prototypes_are_symmetric():
    protos = make_prototypes(3, 8, np.random.default_rng(0))
    for p in protos:
        np.testing.assert_allclose(p, p[:, ::-1], atol=1e-9)
        np.testing.assert_allclose(p, np.rot90(p, 1, axes=(0, 1)), atol=1e-9)


def test_noise_free_samples_survive_geometric_ops():
    images, _ = make_synthetic(2, 1, 8, seed=0, noise=0.0, distractor=0.0)
    img = images[0]
    assert apply_op(img, AugmentationOp("horizontal-flip")).data == img.data
    assert apply_op(img, AugmentationOp("rotate90", 1)).data == img.data


def test_write_and_load(tmp_path):
    images, labels = make_synthetic(3, 2, 4, seed=0)
    write_dataset(tmp_path, images, labels)
    ds = load_dataset(tmp_path)
    assert ds.classes == ["class0", "class1", "class2"]
    assert ds.labels.tolist() == labels.tolist()
    assert [im.data for im in ds.images] == [im.data for im in images]


def test_bad_arguments():
    with pytest.raises(ValueError):
        make_synthetic(num_classes=1)
