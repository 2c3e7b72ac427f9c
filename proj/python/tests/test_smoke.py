import numpy as np
import pytest

import selfcolor as sc


def test_conv2d_matches_naive():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(1, 2, 6, 6))
    w = rng.uniform(-1, 1, size=(3, 2, 3, 3))
    b = rng.uniform(-1, 1, size=(3,))
    y = sc.conv2d(x, w, b, stride=1, pad=0)
    assert y.shape == (1, 3, 4, 4)
    for f in range(3):
        for oy in range(4):
            for ox in range(4):
                ref = b[f] + np.sum(x[0, :, oy:oy + 3, ox:ox + 3] * w[f])
                assert abs(y[0, f, oy, ox] - ref) < 1e-9


def test_relu_softmax_pool():
    assert sc.relu(np.array([-1.0, 2.0])).tolist() == [0.0, 2.0]
    s = sc.softmax(np.array([[0.0, 0.0]]), 1)
    assert np.allclose(s, 0.5)
    p = sc.maxpool2d(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
    assert p.reshape(-1).tolist() == [4.0]


def test_colorspace_round_trip():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, size=(3, 8, 8))
    back = sc.lab_to_rgb(sc.rgb_to_lab(img))
    assert np.max(np.abs(back - img)) < 1e-4

    gray = sc.rgb_to_gray(img)
    ref = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
    assert np.max(np.abs(gray[0] - ref)) < 1e-6


def test_histogram_target_normalized():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 1, size=(3, 9, 9))
    hue, chroma = sc.histogram_target(img, 4, 4)
    assert hue.shape == (32,)
    assert abs(hue.sum() - 1.0) < 1e-6
    assert abs(chroma.sum() - 1.0) < 1e-6
    assert (hue >= 0).all() and (chroma >= 0).all()


def test_network_forward_shapes():
    net = sc.Network.build("mini-vgg", 1, seed=3)
    acts = net.forward(np.zeros((2, 1, 32, 32)))
    assert acts["pool1"].shape == (2, 16, 16, 16)
    assert acts["pool3"].shape == (2, 64, 4, 4)
    assert acts["conv8_relu"].shape == (2, 128, 4, 4)

    cols = net.hypercolumns(np.random.default_rng(4).uniform(0, 1, (1, 1, 32, 32)),
                            [(0, 0), (16, 16), (31, 31)])
    assert cols.shape == (3, 16 + 32 + 64 + 128)


def test_receptive_field_chain():
    rf, stride = sc.receptive_field("vgg16-shaped", "pool5")
    assert stride == 32
    rf2, stride2 = sc.receptive_field("mini-vgg", "conv1_relu")
    assert rf2 == 3 and stride2 == 1


def test_shapes_dataset_and_hierarchy():
    data = sc.generate_shapes(image_size=24, num_classes=12,
                              splits={"train": 24}, seed=7)
    train = data["train"]
    assert len(train) == 24
    labels = {item["label"] for item in train}
    assert labels == set(range(12))
    assert train[0]["image"].shape == (3, 24, 24)
    assert train[0]["mask"].shape == (24, 24)

    names = sc.shape_class_names()
    mapping = sc.hierarchy_cut_mapping(sc.default_shapes_hierarchy(), names, 4)
    assert mapping == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]

    buckets = sc.random_bucket_mapping(12, 4, 11)
    assert set(buckets) == {0, 1, 2, 3}


def test_end_to_end_micro_run(tmp_path):
    sc.save_shapes_dataset(24, 4, {"unlabeled": 32, "train": 24, "test": 12}, 5,
                           str(tmp_path / "data"))
    loss, top1 = sc.pretrain_and_transfer(str(tmp_path / "data"),
                                          str(tmp_path / "run"), seed=1,
                                          pretrain_epochs=1.0, max_epochs=2.0,
                                          crop=16)
    assert np.isfinite(loss)
    assert 0.0 <= top1 <= 1.0
    assert (tmp_path / "run" / "pretrain" / "metrics.csv").exists()
