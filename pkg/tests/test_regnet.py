import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nettdsr.gradcheck import numeric_grad, rel_error
from nettdsr.regnet import (
    BadMagicError,
    CorruptCheckpointError,
    LayerSpec,
    NetworkSpec,
    ShapeMismatchError,
    SpecError,
    VersionMismatchError,
    apply,
    build_network,
    forward,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    tiny_unet,
)
from nettdsr.tensor import Tensor, backward, mse_loss, sum_squares


def test_tiny_unet_param_count_from_arithmetic():
    def conv(cin, cout, k=3):
        return cout * cin * k * k + cout

    expected = (
        conv(1, 8) + conv(8, 8) + conv(8, 16) + conv(16, 16) + conv(16, 32) + conv(32, 32)
        + conv(48, 16) + conv(16, 16) + conv(24, 8) + conv(8, 8) + conv(8, 1, 1)
    )
    w = build_network(tiny_unet())
    assert w.num_params == expected
    assert expected < 60_000


def test_same_seed_same_weights():
    a, b = build_network(tiny_unet(), 5), build_network(tiny_unet(), 5)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    c = build_network(tiny_unet(), 6)
    assert not np.array_equal(a.params["enc1a.weight"], c.params["enc1a.weight"])


def test_he_scale():
    w = build_network(tiny_unet(), 0)
    k = w.params["midb.weight"]
    fan_in = k.shape[1] * 9
    assert np.std(k) == pytest.approx(np.sqrt(2 / (1 + 0.01)) / np.sqrt(fan_in), rel=0.1)


def test_spec_validation_errors():
    with pytest.raises(SpecError):
        build_network(NetworkSpec(()))
    bad_skip = NetworkSpec((LayerSpec("conv", "a", 4), LayerSpec("concat", "cat", source="nope"), LayerSpec("conv", "h", 1)))
    with pytest.raises(SpecError, match="cat"):
        param_shapes(bad_skip)
    wrong_out = NetworkSpec((LayerSpec("conv", "a", 4),))
    with pytest.raises(SpecError, match="'a'"):
        param_shapes(wrong_out)
    unbalanced = NetworkSpec((LayerSpec("maxpool", "p"), LayerSpec("conv", "a", 1)))
    with pytest.raises(SpecError):
        param_shapes(unbalanced)
    with pytest.raises(SpecError):
        param_shapes(tiny_unet(slope=1.5))


def test_zero_weights_zero_output_and_skip_identity():
    x = np.random.default_rng(0).random((2, 16, 16))
    w = build_network(tiny_unet(final_skip=False)).zeros_like()
    assert not apply(w, x).any()
    ws = build_network(tiny_unet(final_skip=True)).zeros_like()
    assert np.array_equal(apply(ws, x), x)
    # fresh final-skip nets start as the identity too
    assert np.array_equal(apply(build_network(tiny_unet(final_skip=True), 1), x), x)


def test_indivisible_input_rejected():
    w = build_network(tiny_unet())
    with pytest.raises(SpecError, match="divisible"):
        apply(w, np.zeros((10, 16)))


def test_input_gradient_matches_finite_differences():
    w = build_network(tiny_unet(), 2)
    x = np.random.default_rng(1).normal(size=(1, 1, 8, 8))

    def f(v):
        return sum_squares(forward(w, Tensor(v))).item()

    xt = Tensor(x, requires_grad=True)
    backward(sum_squares(forward(w, xt)))
    assert rel_error(xt.grad, numeric_grad(f, x)) < 1e-5


def test_weight_gradient_matches_finite_differences():
    w = build_network(tiny_unet(widths=(2, 3, 4)), 4)
    rng = np.random.default_rng(2)
    x, t = rng.normal(size=(2, 1, 8, 8)), rng.normal(size=(2, 1, 8, 8))
    params = w.tensors(requires_grad=True)
    backward(mse_loss(forward(w, Tensor(x), params), Tensor(t)))
    for name in ("enc1a.weight", "midb.bias", "head.weight"):
        def f(v, name=name):
            p = {k: Tensor(v if k == name else a) for k, a in w.params.items()}
            return mse_loss(forward(w, Tensor(x), p), Tensor(t)).item()

        assert rel_error(params[name].grad, numeric_grad(f, w.params[name])) < 1e-4


@st.composite
def random_specs(draw):
    depth = draw(st.integers(0, 2))
    widths = [draw(st.integers(1, 4)) for _ in range(depth + 1)]
    layers, skips = [], []
    for lvl in range(depth):
        layers += [LayerSpec("conv", f"e{lvl}", widths[lvl], draw(st.sampled_from([1, 3]))), LayerSpec("leaky_relu", f"e{lvl}r")]
        skips.append(f"e{lvl}r")
        layers.append(LayerSpec("maxpool", f"p{lvl}"))
    layers.append(LayerSpec("conv", "mid", widths[depth]))
    for lvl in reversed(range(depth)):
        layers.append(LayerSpec("upsample", f"u{lvl}"))
        if draw(st.booleans()):
            layers.append(LayerSpec("concat", f"c{lvl}", source=skips[lvl]))
        layers.append(LayerSpec("conv", f"d{lvl}", widths[lvl]))
    layers.append(LayerSpec("conv", "head", 1, 1))
    return NetworkSpec(tuple(layers), final_skip=draw(st.booleans()))


@settings(max_examples=25, deadline=None)
@given(random_specs(), st.integers(1, 3))
def test_output_shape_equals_input_shape(spec, mult):
    w = build_network(spec, 0)
    side = 4 * mult
    out = forward(w, Tensor(np.random.default_rng(0).random((2, 1, side, side))))
    assert out.shape == (2, 1, side, side)


def test_checkpoint_round_trip(tmp_path, random_net):
    p = tmp_path / "w.nett"
    save_checkpoint(random_net, p)
    back = load_checkpoint(p)
    assert back.spec == random_net.spec and back.seed == random_net.seed
    assert all(back.params[k].tobytes() == v.tobytes() for k, v in random_net.params.items())


def test_checkpoint_errors(tmp_path, random_net):
    p = tmp_path / "w.nett"
    save_checkpoint(random_net, p)
    data = p.read_bytes()

    (tmp_path / "t.nett").write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptCheckpointError, match="corrupt checkpoint"):
        load_checkpoint(tmp_path / "t.nett")

    (tmp_path / "m.nett").write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(BadMagicError) as e:
        load_checkpoint(tmp_path / "m.nett")
    assert e.value.code == "bad-magic"

    (tmp_path / "v.nett").write_bytes(data[:8] + struct.pack("<I", 99) + data[12:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(tmp_path / "v.nett")

    with pytest.raises(ShapeMismatchError, match="enc1a") as e:
        load_checkpoint(p, expected=tiny_unet(final_skip=True, widths=(4, 16, 32)))
    assert e.value.code == "shape-mismatch"
    codes = {BadMagicError.code, VersionMismatchError.code, CorruptCheckpointError.code, ShapeMismatchError.code}
    assert len(codes) == 4
