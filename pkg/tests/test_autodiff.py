import numpy as np
import pytest

from aerokit import autodiff as ad


def fd_grad(fn, x, h=1e-3):
    """Central finite-difference gradient of scalar fn() w.r.t. x.data entries."""
    flat = x.data.reshape(-1)
    g = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        xp = np.float32(orig + h)
        xm = np.float32(orig - h)
        flat[i] = xp
        fp = fn()
        flat[i] = xm
        fm = fn()
        flat[i] = orig
        g[i] = (fp - fm) / (float(xp) - float(xm))
    return g.reshape(x.data.shape)


def check_grads(build, params, h=1e-3, tol=1e-3):
    """build() -> scalar loss Tensor; checks every tensor in params against fd."""
    for p in params.values():
        p.grad = None  # backward accumulates; zeroing is the caller's job
    with ad.Tape() as tape:
        loss = build()
    tape.backward(loss)
    analytic = {}
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        analytic[name] = p.grad.copy()

    def value():
        return float(build().data)

    for name, p in params.items():
        num = fd_grad(value, p, h=h)
        rel = np.abs(analytic[name] - num) / np.maximum(1.0, np.abs(num))
        assert rel.max() < tol, f"{name}: max rel err {rel.max():.2e}"


def away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(0.2, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    assert np.abs(x).min() > margin
    return x.astype(np.float32)


def test_add_sub_mul_chain():
    rng = np.random.default_rng(0)
    a = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    c = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    check_grads(
        lambda: ad.mean(ad.mul(ad.add(a, b), ad.sub(a, c))),
        {"a": a, "b": b, "c": c},
    )


def test_add_bias_broadcast():
    rng = np.random.default_rng(1)
    x = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
    check_grads(lambda: ad.mean(ad.add(x, b)), {"x": x, "b": b})


def test_scale():
    rng = np.random.default_rng(2)
    x = ad.Tensor(rng.normal(size=(4, 4)), requires_grad=True)
    check_grads(lambda: ad.mean(ad.scale(x, -2.5)), {"x": x})


def test_matmul():
    rng = np.random.default_rng(3)
    a = ad.Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    check_grads(lambda: ad.mean(ad.matmul(a, b)), {"a": a, "b": b})


def test_linear():
    rng = np.random.default_rng(4)
    x = ad.Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(4, 3)) * 0.5, requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3,)), requires_grad=True)
    check_grads(lambda: ad.mean(ad.linear(x, w, b)), {"x": x, "w": w, "b": b})


def test_relu():
    rng = np.random.default_rng(5)
    x = ad.Tensor(away_from_zero(rng, (5, 5)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(5, 5)), requires_grad=False)
    check_grads(lambda: ad.mean(ad.mul(ad.relu(x), w)), {"x": x})


def test_reshape_transpose():
    rng = np.random.default_rng(6)
    x = ad.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(4, 3, 2)), requires_grad=False)

    def build():
        y = ad.transpose(x, (2, 1, 0))
        return ad.mean(ad.mul(y, w))

    check_grads(build, {"x": x})
    check_grads(lambda: ad.mean(ad.reshape(x, (6, 4))), {"x": x})


def test_concat_stack():
    rng = np.random.default_rng(7)
    a = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = ad.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(4, 3)), requires_grad=False)
    w2 = ad.Tensor(rng.normal(size=(2, 2, 3)), requires_grad=False)
    check_grads(lambda: ad.mean(ad.mul(ad.concat([a, b], axis=0), w)), {"a": a, "b": b})
    check_grads(lambda: ad.mean(ad.mul(ad.stack([a, b], axis=0), w2)), {"a": a, "b": b})


def test_narrow_forward_and_gradient():
    rng = np.random.default_rng(17)
    x = ad.Tensor(rng.normal(size=(3, 5, 2)), requires_grad=True)
    out = ad.narrow(x, 1, 1, 3)
    np.testing.assert_array_equal(out.data, x.data[:, 1:4])
    w = ad.Tensor(rng.normal(size=(3, 3, 2)), requires_grad=False)
    check_grads(lambda: ad.mean(ad.mul(ad.narrow(x, 1, 1, 3), w)), {"x": x})
    # replicate-style reuse: the same slice taken twice accumulates gradient
    check_grads(
        lambda: ad.mean(ad.concat([ad.narrow(x, 1, 0, 1), ad.narrow(x, 1, 0, 1)], axis=1)),
        {"x": x},
    )


def test_narrow_bounds():
    x = ad.Tensor(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        ad.narrow(x, 1, 3, 2)
    with pytest.raises(ValueError):
        ad.narrow(x, 2, 0, 1)
    with pytest.raises(ValueError):
        ad.narrow(x, 0, 0, 0)


@pytest.mark.parametrize(
    "stride,pad,bias",
    [(1, 1, True), (1, 0, False), ((1, 2, 2), 0, True), (2, 1, True)],
)
def test_conv3d_gradients(stride, pad, bias):
    rng = np.random.default_rng(8)
    x = ad.Tensor(rng.normal(size=(2, 4, 5, 5)) * 0.5, requires_grad=True)
    w = ad.Tensor(rng.normal(size=(3, 2, 3, 3, 3)) * 0.3, requires_grad=True)
    b = ad.Tensor(rng.normal(size=(3,)), requires_grad=True) if bias else None
    params = {"x": x, "w": w}
    if bias:
        params["b"] = b

    def build():
        y = ad.conv3d(x, w, b, stride=stride, pad=pad)
        return ad.mean(y)

    check_grads(build, params)


def test_conv3d_forward_constant_field():
    # all-ones kernel over a constant field sums 27*c per input channel
    c = 0.5
    x = ad.Tensor(np.full((2, 5, 5, 5), c, dtype=np.float32))
    w = ad.Tensor(np.ones((1, 2, 3, 3, 3), dtype=np.float32))
    y = ad.conv3d(x, w, stride=1, pad=0)
    assert y.shape == (1, 3, 3, 3)
    np.testing.assert_allclose(y.data, 27.0 * c * 2, rtol=1e-6)


def test_conv3d_frozen_weights_get_no_grad():
    rng = np.random.default_rng(9)
    x = ad.Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(2, 2, 3, 3, 3)), requires_grad=False)
    with ad.Tape() as tape:
        loss = ad.mean(ad.conv3d(x, w, pad=1))
    tape.backward(loss)
    assert x.grad is not None
    assert w.grad is None


def test_global_spatial_pool():
    rng = np.random.default_rng(10)
    x = ad.Tensor(rng.normal(size=(3, 4, 5, 6)), requires_grad=True)
    w = ad.Tensor(rng.normal(size=(3, 4)), requires_grad=False)
    y = ad.global_spatial_pool(x)
    np.testing.assert_allclose(y.data, x.data.mean(axis=(2, 3)), atol=1e-6)
    check_grads(lambda: ad.mean(ad.mul(ad.global_spatial_pool(x), w)), {"x": x})


def test_softmax_cross_entropy_uniform_is_log_k():
    K = 7
    logits = ad.Tensor(np.zeros((10, K), dtype=np.float32))
    labels = np.arange(10) % K
    loss = ad.softmax_cross_entropy(logits, labels)
    assert loss.item() == pytest.approx(np.log(K), rel=1e-6)


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(11)
    logits = ad.Tensor(rng.normal(size=(6, 5)), requires_grad=True)
    labels = rng.integers(0, 5, size=6)
    check_grads(lambda: ad.softmax_cross_entropy(logits, labels), {"logits": logits})


def test_softmax_cross_entropy_stable_at_large_logits():
    logits = ad.Tensor(np.array([[1000.0, 0.0], [-1000.0, 0.0]], dtype=np.float32))
    loss = ad.softmax_cross_entropy(logits, np.array([0, 0]))
    assert np.isfinite(loss.item())


def test_gradient_accumulates_over_reuse():
    x = ad.Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.mul(x, x)  # x^2, dy/dx = 2x = 4
        loss = ad.mean(y)
    tape.backward(loss)
    assert x.grad[0] == pytest.approx(4.0)


def test_no_tape_records_nothing():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    y = ad.relu(x)
    assert y.requires_grad is False


def test_tape_reuse_raises():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.mean(x)
    tape.backward(loss)
    with pytest.raises(RuntimeError):
        tape.backward(loss)


def test_nested_tape_raises():
    with ad.Tape():
        with pytest.raises(RuntimeError):
            with ad.Tape():
                pass


def test_backward_requires_scalar():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ValueError):
        tape.backward(y)


def test_adamw_minimizes_quadratic():
    target = np.array([1.0, -2.0, 0.5], dtype=np.float32)
    p = ad.Tensor(np.zeros(3, dtype=np.float32), requires_grad=True)
    tgt = ad.Tensor(target)
    opt = ad.AdamW({"p": p}, lr=0.05)
    for _ in range(400):
        opt.zero_grad()
        with ad.Tape() as tape:
            d = ad.sub(p, tgt)
            loss = ad.mean(ad.mul(d, d))
        tape.backward(loss)
        opt.step()
    np.testing.assert_allclose(p.data, target, atol=1e-3)


def test_adamw_weight_decay_shrinks_params():
    p = ad.Tensor(np.full(4, 5.0, dtype=np.float32), requires_grad=True)
    state = {}
    for _ in range(50):
        ad.adamw_step(p.data, np.zeros(4, dtype=np.float32), state, lr=0.1, weight_decay=0.1)
    assert np.all(np.abs(p.data) < 5.0)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(12)
    tensors = {
        "w1": ad.Tensor(rng.normal(size=(3, 4)).astype(np.float32)),
        "b1": ad.Tensor(rng.normal(size=4).astype(np.float32)),
        "scalar": np.float32(2.5),
    }
    cfg = {"k": 7, "name": "demo"}
    p = tmp_path / "model.ckpt"
    ad.save_checkpoint(p, tensors, config=cfg)
    back, cfg2 = ad.load_checkpoint(p)
    assert cfg2 == cfg
    assert back["w1"].tobytes() == tensors["w1"].data.tobytes()
    assert back["b1"].tobytes() == tensors["b1"].data.tobytes()
    assert back["scalar"].shape == ()


def test_checkpoint_truncation_detected(tmp_path):
    p = tmp_path / "model.ckpt"
    ad.save_checkpoint(p, {"w": ad.Tensor(np.ones(8))})
    raw = p.read_bytes()
    p.write_bytes(raw[:-4])
    with pytest.raises(ValueError):
        ad.load_checkpoint(p)
