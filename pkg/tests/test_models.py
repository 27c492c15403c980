import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edd_har import models as M
from edd_har import numerics as F
from edd_har.numerics import Adam, Tape, Tensor, backward


def test_default_filter_counts():
    assert M.build_base(6, 128, 1.0).arch.scaled_filters(1.0) == (32, 64, 96)
    net = M.build_base(6, 128, 0.75)
    assert [net.layers[n].weight.shape[0] for n in net.base_names] == [24, 48, 72]
    assert [net.layers[n].weight.shape[2] for n in net.base_names] == [24, 16, 8]


def test_width_rounds_up():
    assert M.ArchConfig().scaled_filters(0.01) == (1, 1, 1)
    assert M.ArchConfig().scaled_filters(1.1) == (36, 71, 106)


def test_same_seed_same_weights(tiny_arch):
    a = M.build_classifier(6, 32, 3, 1.0, 7, tiny_arch)
    b = M.build_classifier(6, 32, 3, 1.0, 7, tiny_arch)
    c = M.build_classifier(6, 32, 3, 1.0, 8, tiny_arch)
    for p, q in zip(a.parameters(), b.parameters()):
        assert p.data.tobytes() == q.data.tobytes()
    assert any(not np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), c.parameters()))


def test_short_input_rejected():
    with pytest.raises(M.ArchitectureError, match="receptive field"):
        M.build_base(6, 40, 1.0)     # receptive field of the default base is 46
    with pytest.raises(M.ArchitectureError):
        M.build_base(6, 128, 0.0)


def test_zeroed_output_layer_gives_uniform(tiny_arch, rng):
    net = M.build_classifier(6, 32, 4, 1.0, 0, tiny_arch)
    net.layers["out"].weight.data[:] = 0
    p = M.forward_classifier(net, rng.standard_normal((5, 6, 32)))
    assert p.shape == (5, 4)
    np.testing.assert_array_equal(p, np.full((5, 4), 0.25))


def test_classifier_log_output_matches_log_softmax(tiny_arch, rng):
    net = M.build_classifier(6, 32, 3, 1.0, 0, tiny_arch)
    x = rng.standard_normal((8, 6, 32))
    z = M.logits(net, x)
    np.testing.assert_allclose(np.log(M.forward_classifier(net, x)), F.log_softmax(z).data, atol=1e-10)


def test_input_shape_checked(tiny_arch, rng):
    net = M.build_classifier(6, 32, 3, 1.0, 0, tiny_arch)
    with pytest.raises(F.ShapeError):
        M.forward_classifier(net, rng.standard_normal((2, 5, 32)))


def test_dirichlet_alpha_rules():
    z = Tensor([[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(M.dirichlet_alpha(z, 3.0).data[0], [1.0, 1.0, 1.0])
    np.testing.assert_allclose(M.dirichlet_alpha(z, 1.0).data[1], np.exp([1.0, -2.0, 0.5]), rtol=1e-15)
    a1 = np.log(M.dirichlet_alpha(z, 2.0).data)
    a2 = np.log(M.dirichlet_alpha(z, 4.0).data)
    np.testing.assert_allclose(a2, a1 / 2, atol=1e-15)
    with pytest.raises(ValueError):
        M.dirichlet_alpha(z, 0.5)
    with pytest.raises(FloatingPointError):
        M.dirichlet_alpha(Tensor([[np.nan, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=6), st.floats(1, 20))
def test_dirichlet_alpha_within_clamp(z, t):
    a = M.dirichlet_alpha(Tensor([z]), t).data
    assert np.all(a >= M.ALPHA_MIN * (1 - 1e-12)) and np.all(a <= M.ALPHA_MAX * (1 + 1e-12))
    mu = a / a.sum()
    assert abs(mu.sum() - 1) < 1e-12


def test_pretext_heads_zeroed_give_half(tiny_arch, rng):
    net = M.build_pretext(6, 32, 8, 1.0, 0, tiny_arch)
    for k in range(8):
        net.layers[f"task{k}.out"].weight.data[:] = 0
    p = M.forward_pretext(net, rng.standard_normal((3, 6, 32)))
    assert p.shape == (3, 8)
    np.testing.assert_array_equal(p, 0.5)


def test_pretext_head_isolation(tiny_arch, rng):
    net = M.build_pretext(6, 32, 8, 1.0, 0, tiny_arch)
    x = rng.standard_normal((4, 6, 32))
    with Tape() as tape:
        z = M.pretext_logits(net, x)
        loss = F.tsum(F.getitem(z, (slice(None), slice(2, 3))))
    backward(tape, loss)
    for k in range(8):
        for part in ("fc", "out"):
            g = net.layers[f"task{k}.{part}"].weight.grad
            if k == 2:
                assert g is not None and np.any(g != 0)
            else:
                assert g is None or not np.any(g)


def test_transfer_copies_and_freezes(tiny_arch, rng):
    src = M.build_pretext(6, 32, 8, 1.0, 1, tiny_arch)
    dst = M.build_classifier(6, 32, 3, 1.0, 2, tiny_arch)
    M.transfer_base(src, dst, 2)
    x = rng.standard_normal((3, 6, 32))
    np.testing.assert_array_equal(M.features(dst, x).data, M.features(src, x).data)
    assert [dst.layers[n].frozen for n in dst.base_names] == [True, True, False]


def test_transfer_nothing_frozen(tiny_arch):
    src = M.build_pretext(6, 32, 8, 1.0, 1, tiny_arch)
    dst = M.transfer_base(src, M.build_classifier(6, 32, 3, 1.0, 2, tiny_arch), 0)
    assert not any(layer.frozen for layer in dst.layers.values())


def test_transfer_rejects_mismatch(tiny_arch):
    src = M.build_pretext(6, 32, 8, 1.0, 1, tiny_arch)
    with pytest.raises(M.ArchitectureError):
        M.transfer_base(src, M.build_classifier(6, 32, 3, 1.2, 2, tiny_arch), 0)
    with pytest.raises(M.ArchitectureError):
        M.transfer_base(src, M.build_classifier(6, 32, 3, 1.0, 2, tiny_arch), 4)


def test_frozen_layers_survive_optimizer_steps(tiny_arch, rng):
    src = M.build_pretext(6, 32, 8, 1.0, 1, tiny_arch)
    net = M.transfer_base(src, M.build_classifier(6, 32, 3, 1.0, 2, tiny_arch), 3)
    before = {n: net.layers[n].weight.data.tobytes() for n in net.base_names}
    head_before = net.layers["out"].weight.data.copy()
    opt = Adam(net.trainable(), lr=1e-2)
    x = rng.standard_normal((8, 6, 32))
    for _ in range(5):
        with Tape() as tape:
            loss = F.mean(F.tsum(F.mul(M.logits(net, x, True, rng), M.logits(net, x)), axis=1))
        backward(tape, loss)
        opt.step()
        opt.zero_grad()
    for n in net.base_names:
        assert net.layers[n].weight.data.tobytes() == before[n]
    assert not np.array_equal(net.layers["out"].weight.data, head_before)


def test_checkpoint_round_trip_is_bit_exact(tmp_path, tiny_arch, rng):
    net = M.build_classifier(6, 32, 3, 0.9, 4, tiny_arch)
    net.layers["conv0"].frozen = True
    state = np.random.default_rng(3).bit_generator.state
    M.save_checkpoint(tmp_path / "m.ckpt", net, {"note": "x"}, rng_state=state)
    back, meta = M.load_checkpoint(tmp_path / "m.ckpt")
    assert back.descriptor() == net.descriptor()
    for (na, la), (nb, lb) in zip(net.layers.items(), back.layers.items()):
        assert na == nb and la.frozen == lb.frozen
        assert la.weight.data.tobytes() == lb.weight.data.tobytes()
        assert la.bias.data.tobytes() == lb.bias.data.tobytes()
    assert meta["extra"] == {"note": "x"}
    g = np.random.default_rng()
    g.bit_generator.state = meta["rng_state"]
    assert g.random() == np.random.default_rng(3).random()
    x = rng.standard_normal((2, 6, 32))
    assert M.forward_classifier(back, x).tobytes() == M.forward_classifier(net, x).tobytes()
