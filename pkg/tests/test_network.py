import numpy as np
import pytest

from mdcs import tensor as T
from mdcs.gradcheck import check_end_to_end
from mdcs.network import StitchMode, build_model, expected_parameter_count
from mdcs.tensor import ShapeError


def inputs(rng, batch=2, n=16):
    return rng.standard_normal((batch, 3, n, n)), rng.standard_normal((batch, 3, n, n))


def test_same_seed_same_model_and_logits():
    rng = np.random.default_rng(0)
    x_r, x_d = inputs(rng)
    a, b = build_model("all", 16, seed=3), build_model("all", 16, seed=3)
    for (na, pa), (nb, pb) in zip(a.parameters().items(), b.parameters().items()):
        assert na == nb and pa.data.tobytes() == pb.data.tobytes()
    assert a(x_r, x_d).data.tobytes() == b(x_r, x_d).data.tobytes()
    c = build_model("all", 16, seed=4)
    assert not np.array_equal(c.spatial.fc_weight.data, a.spatial.fc_weight.data)


@pytest.mark.parametrize("mode, units", [("all", 4), ("one", 1), ("none", 0), ("rgb", 0), ("freq", 0)])
def test_stitch_unit_counts(mode, units):
    model = build_model(mode, 16)
    assert len(model.stitch_units) == units
    assert sum(model.is_stitch_param(n) for n in model.parameters()) == units
    for u in model.stitch_units:
        assert tuple(u.alpha.data) == (0.9, 0.1, 0.1, 0.9)


def test_alphas_come_last():
    names = list(build_model("all", 16).parameters())
    assert names[-4:] == [f"stitch{k}.alpha" for k in range(1, 5)]


def test_pre_flatten_and_logit_shapes():
    model = build_model("all", 64)
    assert model.pre_flatten_shape() == (128, 4, 4)
    rng = np.random.default_rng(1)
    assert model(*inputs(rng, batch=3, n=64)).shape == (3, 2)


@pytest.mark.parametrize("mode", list(StitchMode))
@pytest.mark.parametrize("n", [16, 32, 64])
def test_parameter_count_matches_closed_form(mode, n):
    assert build_model(mode, n).n_parameters() == expected_parameter_count(mode, n)


def test_parameter_count_by_hand_n64():
    # per branch, block by block: depthwise + pointwise + bias
    convs = (3 * 9 + 16 * 3 + 16) + (16 * 9 + 32 * 16 + 32) + (32 * 9 + 64 * 32 + 64) + (64 * 9 + 128 * 64 + 128)
    branch = convs + 128 * 2048 + 128
    assert build_model("all", 64).n_parameters() == 2 * branch + 2 * 256 + 2 + 16
    assert build_model("rgb", 64).n_parameters() == branch + 2 * 128 + 2


def test_bad_sizes_and_inputs():
    with pytest.raises(ValueError):
        build_model("all", 24)
    with pytest.raises(ValueError):
        build_model("all", 8)
    model = build_model("all", 16)
    rng = np.random.default_rng(2)
    x_r, x_d = inputs(rng)
    with pytest.raises(ShapeError):
        model(x_r, None)
    with pytest.raises(ShapeError):
        model(x_r, x_d[:1])
    with pytest.raises(ShapeError):
        model(x_r[:, :2], x_d)


def test_no_stitch_spatial_path_equals_rgb_model():
    rng = np.random.default_rng(3)
    x_r, x_d = inputs(rng, batch=4)
    f_none, _ = build_model("none", 16, seed=5).features(x_r, x_d)
    f_rgb, none = build_model("rgb", 16, seed=5).features(x_r)
    assert none is None
    assert f_none.data.tobytes() == f_rgb.data.tobytes()


def test_freq_model_ignores_spatial_input():
    rng = np.random.default_rng(4)
    x_r, x_d = inputs(rng)
    model = build_model("freq", 16)
    assert model(x_r, x_d).data.tobytes() == model(None, x_d).data.tobytes()


def test_identity_alphas_reduce_to_independent_branches():
    model_all = build_model("all", 16, seed=6)
    model_none = build_model("none", 16, seed=6)
    for u in model_all.stitch_units:
        u.set(1.0, 0.0, 0.0, 1.0)
    rng = np.random.default_rng(5)
    for _ in range(5):
        x_r, x_d = inputs(rng, batch=3)
        assert model_all(x_r, x_d).data.tobytes() == model_none(x_r, x_d).data.tobytes()


def _spatial_feature_grad(model, x_r, x_d):
    x_d = T.Tensor(x_d, requires_grad=True)
    with T.Tape() as tape:
        f_r, _ = model.features(x_r, x_d)
        loss = T.tensor_sum(f_r)
    tape.backward(loss)
    return x_d.grad


def test_cross_branch_flow():
    rng = np.random.default_rng(6)
    x_r, x_d = inputs(rng)
    grad_all = _spatial_feature_grad(build_model("all", 16, seed=1), x_r, x_d)
    assert np.abs(grad_all).max() > 0
    grad_none = _spatial_feature_grad(build_model("none", 16, seed=1), x_r, x_d)
    assert grad_none is None or not np.any(grad_none)

    # zeroing the cross terms cuts the path again
    cut = build_model("all", 16, seed=1)
    for u in cut.stitch_units:
        u.set(0.9, 0.0, 0.1, 0.9)
    assert not np.any(_spatial_feature_grad(cut, x_r, x_d))


def test_every_parameter_receives_gradient():
    model = build_model("all", 16)
    rng = np.random.default_rng(7)
    with T.Tape() as tape:
        loss = T.softmax_cross_entropy(model(*inputs(rng, batch=4)), [0, 1, 0, 1])
    tape.backward(loss)
    for name, p in model.parameters().items():
        assert p.grad is not None and p.grad.shape == p.shape, name
    for u in model.stitch_units:
        assert np.any(u.alpha.grad)


@pytest.mark.parametrize("mode", ["all", "one"])
def test_end_to_end_gradients(mode):
    result = check_end_to_end(np.random.default_rng(8), n_params=12, mode=mode)
    assert result.max_rel_error <= 1e-5
