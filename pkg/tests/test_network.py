import numpy as np
import pytest

from flim.errors import (BadWindowError, DimMismatchError, EmptyInputError,
                         InsufficientMarkersError)
from flim.filters import FilterBank, MarkerStats
from flim.image_io import Image
from flim.markers import MarkerSet, rasterize_strokes
from flim.network import (MODE_PRESERVING, MODE_STRIDED, LayerSpec,
                          NetworkSpec, conv_forward, extract_features,
                          feature_length, fit_output_norm, forward,
                          learn_network, load_network, max_pool, pooled_shape,
                          relu, save_network)
from flim.synthetic import blob_tile, stripe_tile

from oracles import naive_conv, naive_max_pool


def _random_bank(rng, k=3, m=2, n_filters=4):
    filt = rng.standard_normal((n_filters, k, k, m))
    filt /= np.linalg.norm(filt.reshape(n_filters, -1), axis=1)[:, None, None, None]
    mean = rng.random((k, k, m))
    std = 0.5 + rng.random((k, k, m))
    return FilterBank(filters=filt.astype(np.float32),
                      classes=np.ones(n_filters, dtype=np.int32),
                      stats=MarkerStats(mean=mean.astype(np.float32),
                                        std=std.astype(np.float32)))


def test_conv_identity_k1_constant_image():
    stats = MarkerStats(mean=np.zeros((1, 1, 1), np.float32),
                        std=np.ones((1, 1, 1), np.float32))
    bank = FilterBank(filters=np.ones((1, 1, 1, 1), np.float32),
                      classes=np.array([1], np.int32), stats=stats)
    image = np.full((4, 4, 1), 0.7, dtype=np.float32)
    out = conv_forward(image, bank)
    assert out.shape == (4, 4, 1)
    assert np.allclose(out, 0.7, atol=1e-6)


def test_conv_self_filter_gives_patch_norm():
    # a filter built from the standardized patch at q responds with its norm
    rng = np.random.default_rng(0)
    image = rng.random((7, 7, 2)).astype(np.float32)
    mean = rng.random((3, 3, 2)).astype(np.float32)
    std = (0.5 + rng.random((3, 3, 2))).astype(np.float32)
    q = (3, 4)  # (y, x), interior
    patch = (image[2:5, 3:6] - mean) / std
    norm = float(np.linalg.norm(patch))
    filt = (patch / norm)[None].astype(np.float32)
    bank = FilterBank(filters=filt, classes=np.array([1], np.int32),
                      stats=MarkerStats(mean=mean, std=std))
    out = conv_forward(image, bank)
    assert out[q[0], q[1], 0] == pytest.approx(norm, rel=1e-5)


def test_conv_matches_naive_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        h, w = int(rng.integers(5, 12)), int(rng.integers(5, 12))
        m = int(rng.integers(1, 4))
        k = int(rng.choice([1, 3, 5]))
        bank = _random_bank(rng, k=k, m=m, n_filters=int(rng.integers(1, 6)))
        image = rng.random((h, w, m)).astype(np.float32)
        out = conv_forward(image, bank)
        oracle = naive_conv(image.astype(np.float64),
                            bank.filters.astype(np.float64),
                            bank.stats.mean.astype(np.float64),
                            bank.stats.std.astype(np.float64))
        assert np.abs(out - oracle).max() < 1e-5


def test_conv_dim_mismatch():
    rng = np.random.default_rng(2)
    bank = _random_bank(rng, m=3)
    with pytest.raises(DimMismatchError):
        conv_forward(np.zeros((5, 5, 2)), bank)


def test_relu():
    assert np.all(relu(np.full((2, 2, 1), -3.0)) == 0.0)
    positive = np.full((2, 2, 1), 2.5)
    assert np.array_equal(relu(positive), positive)
    rng = np.random.default_rng(3)
    mixed = rng.standard_normal((4, 5, 2))
    assert np.array_equal(relu(mixed), np.maximum(mixed, 0.0))


def test_max_pool_identity():
    rng = np.random.default_rng(4)
    rep = rng.random((5, 6, 2))
    assert np.array_equal(max_pool(rep, 1, 1, MODE_STRIDED), rep)


def test_max_pool_shape_90_3_4():
    rep = np.zeros((90, 90, 1))
    out = max_pool(rep, 3, 4, MODE_STRIDED)
    assert out.shape == (22, 22, 1)
    assert pooled_shape(90, 90, 3, 4) == (22, 22)


def test_max_pool_matches_sliding_oracle():
    rng = np.random.default_rng(5)
    rep = rng.random((9, 9, 3))
    out = max_pool(rep, 3, 2, MODE_STRIDED)
    assert np.array_equal(out, naive_max_pool(rep, 3, 2))


def test_max_pool_preserving_keeps_dims():
    rng = np.random.default_rng(6)
    for window in (2, 3, 5):
        rep = rng.random((8, 11, 2))
        out = max_pool(rep, window, 4, MODE_PRESERVING)
        assert out.shape == rep.shape


def test_max_pool_bad_window():
    with pytest.raises(BadWindowError):
        max_pool(np.zeros((4, 4, 1)), 5, 1, MODE_STRIDED)


def test_shape_algebra_randomized():
    rng = np.random.default_rng(7)
    for _ in range(20):
        h, w = int(rng.integers(6, 40)), int(rng.integers(6, 40))
        window = int(rng.integers(1, 5))
        stride = int(rng.integers(1, 5))
        if window > min(h, w):
            continue
        out = max_pool(np.zeros((h, w, 1)), window, stride, MODE_STRIDED)
        assert out.shape[:2] == ((h - window) // stride + 1,
                                 (w - window) // stride + 1)


def test_fit_output_norm_constant_channel():
    rep = np.full((4, 4, 2), 3.0)
    norm = fit_output_norm([rep])
    assert np.allclose(norm.apply(rep), 0.0)


def test_fit_output_norm_self_normalizes():
    rng = np.random.default_rng(8)
    maps = [rng.random((5, 7, 3)) for _ in range(4)]
    norm = fit_output_norm(maps)
    normalized = np.concatenate([norm.apply(m).reshape(-1, 3) for m in maps])
    assert np.abs(normalized.mean(axis=0)).max() < 1e-6
    assert np.abs(normalized.std(axis=0) - 1.0).max() < 1e-6


def test_fit_output_norm_sensitivity_and_empty():
    rng = np.random.default_rng(9)
    n1 = fit_output_norm([rng.random((4, 4, 2))])
    n2 = fit_output_norm([rng.random((4, 4, 2)) + 5.0])
    assert not np.allclose(n1.mean, n2.mean)
    with pytest.raises(EmptyInputError):
        fit_output_norm([])


def _texture_pair(seed=0, size=40):
    rng = np.random.default_rng(seed)
    images = []
    for label, maker in ((1, stripe_tile), (2, blob_tile)):
        tile = maker(rng, size)
        data = np.stack([tile, tile, tile], axis=-1).astype(np.float32)
        img = Image(id=f"tex{label}", data=data)
        strokes = [([(6, size // 2), (size - 6, size // 2)], 2.0, label)]
        ms = rasterize_strokes(strokes, size, size, image_id=img.id)
        images.append((img, ms))
    return images


def _one_layer_spec(total=4, patch=5, window=3, stride=4):
    return NetworkSpec(layers=[LayerSpec(patch_size=patch, total_filters=total,
                                         pool_window=window, pool_stride=stride)],
                       input_bands=3)


def test_learn_network_fig2_defaults():
    # 60 filters of 7x7x3, all unit norm, on a 90x90 input
    rng = np.random.default_rng(10)
    data = rng.random((90, 90, 3)).astype(np.float32)
    img = Image(id="big", data=data)
    pixels = [(int(x), int(y), 1 + (i % 2))
              for i, (x, y) in enumerate(rng.integers(5, 85, (120, 2)))]
    ms = MarkerSet(image_id="big", width=90, height=90,
                   pixels=list(dict.fromkeys(pixels)))
    spec = NetworkSpec(layers=[LayerSpec(patch_size=7, total_filters=60,
                                         pool_window=3, pool_stride=4)],
                       input_bands=3)
    model = learn_network([(img, ms)], spec, seed=0)
    bank = model.layers[0].bank
    assert bank.num_filters == 60
    assert bank.filters.shape == (60, 7, 7, 3)
    norms = np.linalg.norm(bank.filters.reshape(60, -1).astype(np.float64), axis=1)
    assert np.abs(norms - 1.0).max() <= 1e-6
    feats = extract_features(img, model)
    assert feats.shape == (22 * 22 * 60,)
    assert feature_length(model, 90, 90) == 29040


def test_two_layer_wiring():
    images = _texture_pair(seed=1)
    spec = NetworkSpec(layers=[
        LayerSpec(patch_size=3, total_filters=4, pool_window=3, pool_stride=2),
        LayerSpec(patch_size=3, total_filters=4, pool_window=3, pool_stride=2),
    ], input_bands=3)
    model = learn_network(images, spec, seed=0)
    assert model.layers[1].bank.bands == model.layers[0].bank.num_filters
    feats = extract_features(images[0][0], model)
    assert feats.shape == (feature_length(model, 40, 40),)
    assert np.all(np.isfinite(feats))


def test_learn_network_deterministic():
    images = _texture_pair(seed=2)
    spec = _one_layer_spec()
    m1 = learn_network(images, spec, seed=5)
    m2 = learn_network(images, spec, seed=5)
    assert m1.layers[0].bank.filters.tobytes() == m2.layers[0].bank.filters.tobytes()
    assert m1.layers[0].output_norm.mean.tobytes() == m2.layers[0].output_norm.mean.tobytes()


def test_learn_network_insufficient_markers():
    images = _texture_pair(seed=3)
    spec = _one_layer_spec(total=400)
    with pytest.raises(InsufficientMarkersError):
        learn_network(images, spec, seed=0)


def test_dimension_preserving_marker_validity():
    images = _texture_pair(seed=4)
    spec = _one_layer_spec()
    model = learn_network(images, spec, seed=0)
    img, ms = images[0]
    out = forward(img, model, mode=MODE_PRESERVING, apply_norm=False)
    assert out.shape[:2] == (img.height, img.width)
    for x, y, _ in ms.pixels:
        assert np.isfinite(out[y, x]).all()


def test_extract_features_equals_chained_oracles():
    images = _texture_pair(seed=5)
    spec = _one_layer_spec(total=4, patch=3, window=3, stride=2)
    model = learn_network(images, spec, seed=0)
    img = images[1][0]
    layer = model.layers[0]
    step = naive_conv(img.data.astype(np.float64),
                      layer.bank.filters.astype(np.float64),
                      layer.bank.stats.mean.astype(np.float64),
                      layer.bank.stats.std.astype(np.float64))
    step = np.maximum(step, 0.0)
    step = naive_max_pool(step, 3, 2)
    step = (step - layer.output_norm.mean) / layer.output_norm.std
    feats = extract_features(img, model)
    assert np.abs(feats - step.ravel()).max() < 1e-4


def test_enhancement_property():
    # class-i filters activate more on class-i marker pixels
    images = _texture_pair(seed=6)
    spec = _one_layer_spec(total=4, patch=5)
    model = learn_network(images, spec, seed=0)
    bank = model.layers[0].bank
    activations = {}
    for img, ms in images:
        out = relu(conv_forward(img.data, bank))
        label = ms.pixels[0][2]
        coords = [(y, x) for x, y, _ in ms.pixels]
        activations[label] = np.stack([out[y, x] for y, x in coords])
    for idx, label in enumerate(bank.classes.tolist()):
        own = activations[label][:, idx].mean()
        other = activations[3 - label][:, idx].mean()
        assert own > other


def test_identical_images_identical_features():
    images = _texture_pair(seed=7)
    model = learn_network(images, _one_layer_spec(), seed=0)
    f1 = extract_features(images[0][0], model)
    f2 = extract_features(images[0][0], model)
    assert np.array_equal(f1, f2)


def test_forward_band_mismatch():
    images = _texture_pair(seed=8)
    model = learn_network(images, _one_layer_spec(), seed=0)
    with pytest.raises(DimMismatchError):
        extract_features(np.zeros((40, 40, 2)), model)


def test_network_serialization_round_trip(tmp_path):
    images = _texture_pair(seed=9)
    model = learn_network(images, _one_layer_spec(), seed=0)
    out = str(tmp_path / "model")
    save_network(model, out)
    loaded = load_network(out)
    assert loaded.input_bands == model.input_bands
    assert len(loaded.layers) == 1
    assert loaded.layers[0].bank.filters.tobytes() == model.layers[0].bank.filters.tobytes()
    assert loaded.layers[0].output_norm.mean.tobytes() == model.layers[0].output_norm.mean.tobytes()
    img = images[0][0]
    assert np.array_equal(extract_features(img, loaded), extract_features(img, model))


def test_network_spec_json_round_trip():
    doc = {"layers": [{"patch_size": 7, "total_filters": 60, "pool_window": 3,
                       "pool_stride": 4, "batch_norm": True}], "input_bands": 3}
    spec = NetworkSpec.from_json(doc)
    assert spec.layers[0].patch_size == 7
    assert spec.layers[0].total_filters == 60
    again = NetworkSpec.from_json(spec.to_json())
    assert again.layers[0].pool_stride == 4
