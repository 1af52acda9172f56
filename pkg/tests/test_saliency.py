import numpy as np
import pytest

from gradcheck import randomize_params
from selfrank.data import Frame
from selfrank.nets import (
    conv_activations,
    conv_architecture,
    conv_linear_architecture,
    forward,
    mlp_architecture,
    net_init,
)
from selfrank.pgm import read_pgm
from selfrank.saliency import (
    ActivationMap,
    SaliencyError,
    cam,
    cam_bias,
    save_saliency,
    upsample,
)


def _random_frame(shape, seed):
    return Frame(0, np.random.default_rng(seed).random(shape))


def test_cam_requires_linear_head_conv():
    frame = _random_frame((16, 16), 0)
    with pytest.raises(SaliencyError):
        cam(randomize_params(net_init(conv_architecture(16, 16, (3, 4), 5), 0), 1), frame)
    with pytest.raises(SaliencyError):
        cam(randomize_params(net_init(mlp_architecture(256), 0), 1), frame)


def test_cam_zero_weight_head():
    model = randomize_params(net_init(conv_linear_architecture(16, 16, (3, 4)), 0), 1)
    model.params[-2][:] = 0.0
    model.params[-1][0] = 0.37
    frame = _random_frame((16, 16), 2)
    amap = cam(model, frame)
    assert np.array_equal(amap.grid, np.zeros_like(amap.grid))
    assert forward(model, frame) == pytest.approx(0.37)


def test_cam_single_channel_identity():
    model = randomize_params(net_init(conv_linear_architecture(16, 16, (3, 1)), 3), 4)
    model.params[-2][:] = 1.0
    model.params[-1][0] = 0.0
    frame = _random_frame((16, 16), 5)
    amap = cam(model, frame)
    acts = conv_activations(model, frame)
    assert np.array_equal(amap.grid, acts[0])


def test_cam_exactness_identity():
    rng = np.random.default_rng(0)
    for trial in range(20):
        model = randomize_params(
            net_init(conv_linear_architecture(18, 14, (3, 5)), trial), trial + 100
        )
        frame = Frame(0, rng.random((18, 14)))
        amap = cam(model, frame)
        phi = forward(model, frame)
        lhs = amap.grid.mean() + cam_bias(model)
        assert abs(lhs - phi) / max(abs(phi), 1e-8) < 1e-4


def test_cam_linear_in_head_weights():
    arch = conv_linear_architecture(16, 16, (3, 4))
    trunk = randomize_params(net_init(arch, 7), 8)
    frame = _random_frame((16, 16), 9)
    rng = np.random.default_rng(10)
    w1, w2 = rng.standard_normal((2, 4, 1))
    a, b = 1.7, -0.4

    def with_head(w):
        m = trunk.copy()
        m.params[-2][...] = w
        return cam(m, frame).grid

    combined = with_head(a * w1 + b * w2)
    assert np.allclose(combined, a * with_head(w1) + b * with_head(w2), atol=1e-10)


def test_upsample_single_cell_constant():
    amap = ActivationMap(grid=np.array([[2.5]]), frame_id=0, model=None)
    smap = upsample(amap, 8, 6)
    assert smap.grid.shape == (8, 6)
    assert np.allclose(smap.grid, 2.5)
    assert np.allclose(smap.normalized, 0.5)  # constant map normalizes to mid-gray


def test_upsample_constant_map_stays_constant():
    amap = ActivationMap(grid=np.full((3, 3), 1.25), frame_id=0, model=None)
    assert np.allclose(upsample(amap, 6, 6).grid, 1.25)


def test_upsample_preserves_corners():
    grid = np.array([[1.0, 2.0], [3.0, 4.0]])
    smap = upsample(ActivationMap(grid=grid, frame_id=0, model=None), 9, 7)
    assert smap.grid[0, 0] == pytest.approx(1.0)
    assert smap.grid[0, -1] == pytest.approx(2.0)
    assert smap.grid[-1, 0] == pytest.approx(3.0)
    assert smap.grid[-1, -1] == pytest.approx(4.0)
    assert smap.normalized.min() == pytest.approx(0.0)
    assert smap.normalized.max() == pytest.approx(1.0)


def test_upsample_refuses_downsizing():
    amap = ActivationMap(grid=np.zeros((4, 4)), frame_id=0, model=None)
    with pytest.raises(SaliencyError):
        upsample(amap, 3, 8)


def test_save_saliency_writes_pgm_and_csv(tmp_path):
    grid = np.arange(12.0).reshape(3, 4)
    smap = upsample(ActivationMap(grid=grid, frame_id=0, model=None), 6, 8)
    save_saliency(smap, tmp_path / "s.pgm", tmp_path / "s.csv")
    img = read_pgm(tmp_path / "s.pgm")
    assert img.shape == (6, 8)
    rows = (tmp_path / "s.csv").read_text().strip().splitlines()
    assert len(rows) == 6 and len(rows[0].split(",")) == 8


def test_cell_center_receptive_field_arithmetic():
    from selfrank.saliency import cell_center

    model = net_init(conv_linear_architecture(32, 32, (8, 16)), 0)
    assert cell_center(model, 0, 0) == (3, 3)
    assert cell_center(model, 1, 2) == (7, 11)
    one_layer = net_init(conv_linear_architecture(16, 16, (4,)), 0)
    assert cell_center(one_layer, 0, 1) == (1, 3)
    with pytest.raises(SaliencyError):
        cell_center(net_init(mlp_architecture(4), 0), 0, 0)
