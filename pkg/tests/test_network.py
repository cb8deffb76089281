import numpy as np
import pytest

from tqn.errors import DomainError, TrainingError, UsageError
from tqn.network import AdamState, QNetwork, dueling_combine, forward_q, gradient_step

MENU = [(32, 16, 8), (64, 32, 16), (128, 64, 32)]


def reference_forward(sizes, dueling, flat, x):
    """Independent forward pass that unpacks the flat buffer itself."""
    flat = list(flat)

    def take(i, o):
        w = np.array([flat.pop(0) for _ in range(i * o)]).reshape(i, o)
        b = np.array([flat.pop(0) for _ in range(o)])
        return w, b

    def dense(h, w, b, relu):
        out = np.array([sum(h[k] * w[k, j] for k in range(len(h))) + b[j] for j in range(w.shape[1])])
        return np.maximum(out, 0) if relu else out

    hidden = list(sizes[1:-1])
    if not dueling:
        dims = [sizes[0]] + hidden + [sizes[-1]]
        h = np.asarray(x, dtype=float)
        for k in range(len(dims) - 1):
            w, b = take(dims[k], dims[k + 1])
            h = dense(h, w, b, relu=k < len(dims) - 2)
        return h
    shared = [sizes[0]] + hidden[:-1]
    h = np.asarray(x, dtype=float)
    for k in range(len(shared) - 1):
        w, b = take(shared[k], shared[k + 1])
        h = dense(h, w, b, relu=True)
    top = shared[-1]

    def stream(n_out):
        if hidden:
            w1, b1 = take(top, hidden[-1])
            w2, b2 = take(hidden[-1], n_out)
            return dense(dense(h, w1, b1, True), w2, b2, False)
        w, b = take(top, n_out)
        return dense(h, w, b, False)

    v = stream(1)
    a = stream(sizes[-1])
    return v[0] + a - a.mean()


def test_zero_network_outputs_zero():
    net = QNetwork([5, 8, 3], flat=np.zeros(QNetwork([5, 8, 3]).n_params))
    assert np.all(forward_q(net, np.random.default_rng(0).normal(size=5)) == 0.0)


def test_single_linear_layer():
    net = QNetwork([3, 3], seed=1)
    w, b = net.trunk[0]
    w[...] = np.eye(3) * 2.0
    b[...] = [0.5, -1.0, 0.25]
    x = np.array([1.0, -2.0, 3.0])
    expected = [sum(x[k] * w[k, j] for k in range(3)) + b[j] for j in range(3)]
    assert forward_q(net, x) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("dueling", [False, True])
@pytest.mark.parametrize("sizes", [[4, 3], [7, 5, 2], [15, 32, 16, 8, 2], [6, 12, 3]])
def test_forward_matches_reference(sizes, dueling):
    rng = np.random.default_rng(len(sizes) + dueling)
    net = QNetwork(sizes, dueling=dueling, seed=3)
    net.flat[...] += rng.normal(scale=0.1, size=net.n_params)
    for _ in range(3):
        x = rng.normal(size=sizes[0])
        assert forward_q(net, x) == pytest.approx(reference_forward(sizes, dueling, net.flat, x), abs=1e-10)


def test_batch_and_single_forward_agree():
    net = QNetwork([6, 10, 4], dueling=True, seed=5)
    x = np.random.default_rng(1).normal(size=(7, 6))
    batch = forward_q(net, x)
    for i in range(7):
        assert forward_q(net, x[i]) == pytest.approx(batch[i], abs=1e-14)


def test_shape_mismatch():
    net = QNetwork([4, 8, 2])
    with pytest.raises(DomainError):
        forward_q(net, np.zeros(5))
    with pytest.raises(DomainError):
        QNetwork([4])


def test_dueling_combine_examples():
    assert list(dueling_combine(2.0, [1, 1, 1])) == [2.0, 2.0, 2.0]
    assert list(dueling_combine(0.0, [1, 2, 3])) == [-1.0, 0.0, 1.0]
    with pytest.raises(DomainError):
        dueling_combine(1.0, [])


def test_dueling_argmax_and_identifiability():
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.normal() * 10
        a = rng.normal(size=rng.integers(2, 7))
        q = dueling_combine(v, a)
        assert np.argmax(q) == np.argmax(a)
        assert abs(np.mean(q - v)) < 1e-12


def relu_pattern(net, x):
    _, acts, v_acts, a_acts = net._forward(x)
    hidden = acts[1:-1] if not net.dueling else acts[1:] + v_acts[1:-1] + a_acts[1:-1]
    return np.concatenate([(z > 0).ravel() for z in hidden]) if hidden else np.zeros(0, bool)


def finite_difference_grad(net, x, actions, targets, weights, h=1e-4):
    """Central differences.  The loss is piecewise quadratic in any single
    parameter, so the only errors are roundoff and ReLU kinks; the step
    shrinks for a parameter whenever +-h flips an activation."""
    base = net.flat.copy()
    pattern = relu_pattern(net, x)
    grad = np.zeros_like(base)
    for i in range(base.size):
        step = h
        while True:
            net.flat[i] = base[i] + step
            lp = net.loss_and_grad(x, actions, targets, weights)[0]
            smooth = np.array_equal(relu_pattern(net, x), pattern)
            net.flat[i] = base[i] - step
            lm = net.loss_and_grad(x, actions, targets, weights)[0]
            smooth = smooth and np.array_equal(relu_pattern(net, x), pattern)
            net.flat[i] = base[i]
            if smooth or step < 1e-8:
                break
            step /= 10
        grad[i] = (lp - lm) / (2 * step)
    return grad


def max_rel_error(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.mark.parametrize("dueling", [False, True])
def test_gradient_small_network(dueling):
    net = QNetwork([2, 3, 2], dueling=dueling, seed=11)
    x = np.array([[0.7, -1.3]])
    args = (x, np.array([1]), np.array([0.4]), np.array([1.0]))
    _, analytic, _ = net.loss_and_grad(*args)
    assert max_rel_error(analytic, finite_difference_grad(net, *args)) < 1e-4


@pytest.mark.parametrize("dueling", [False, True])
@pytest.mark.parametrize("hidden", MENU)
def test_gradient_table_architectures(hidden, dueling):
    rng = np.random.default_rng(sum(hidden) + dueling)
    net = QNetwork([15, *hidden, 2], dueling=dueling, seed=2)
    x = rng.normal(size=(10, 15))
    args = (x, rng.integers(2, size=10), rng.normal(size=10) * 5, rng.uniform(0.1, 1.0, size=10))
    _, analytic, _ = net.loss_and_grad(*args)
    assert max_rel_error(analytic, finite_difference_grad(net, *args)) < 1e-4


def test_zero_gradient_leaves_parameters():
    net = QNetwork([4, 8, 2], seed=0)
    adam = AdamState.for_network(net, 0.01)
    x = np.random.default_rng(0).normal(size=(5, 4))
    acts = np.array([0, 1, 1, 0, 1])
    targets = net.q_values(x)[np.arange(5), acts]
    before = net.flat.copy()
    loss, td = gradient_step(net, adam, x, acts, targets)
    assert loss == 0.0 and np.all(td == 0)
    assert np.max(np.abs(net.flat - before)) < 1e-6


def test_unit_weights_reproduce_mse():
    net = QNetwork([4, 8, 3], seed=4)
    rng = np.random.default_rng(1)
    x, acts, y = rng.normal(size=(6, 4)), rng.integers(3, size=6), rng.normal(size=6)
    loss_w, g_w, _ = net.loss_and_grad(x, acts, y, np.ones(6))
    loss, g, td = net.loss_and_grad(x, acts, y)
    q = net.q_values(x)[np.arange(6), acts]
    assert loss == loss_w == pytest.approx(np.mean((q - y) ** 2), rel=1e-12)
    assert np.array_equal(g, g_w)
    assert td == pytest.approx(q - y)


def test_determinism_bitwise():
    def run():
        net = QNetwork([5, 16, 8, 2], dueling=True, seed=9)
        adam = AdamState.for_network(net, 0.01)
        rng = np.random.default_rng(3)
        for _ in range(100):
            gradient_step(net, adam, rng.normal(size=(32, 5)), rng.integers(2, size=32),
                          rng.normal(size=32), rng.uniform(size=32))
        return net.flat.copy()

    assert np.array_equal(run(), run())


def test_no_nan_over_many_updates():
    net = QNetwork([15, 64, 32, 16, 2], dueling=True, seed=1)
    adam = AdamState.for_network(net, 0.01)
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(1000, 32, 15))
    for k in range(100_000):
        gradient_step(net, adam, xs[k % 1000], rng.integers(2, size=32), rng.normal(size=32) * 10, None)
    assert np.all(np.isfinite(net.flat))


def test_nonfinite_loss_raises():
    net = QNetwork([2, 4, 2], seed=0)
    adam = AdamState.for_network(net, 0.01)
    with pytest.raises(TrainingError):
        gradient_step(net, adam, np.ones((1, 2)), [0], [np.inf])


def test_checkpoint_round_trip(tmp_path):
    net = QNetwork([15, 64, 32, 16, 2], dueling=True, seed=21)
    net.steps = 77
    path = tmp_path / "net.ckpt"
    net.save(path, {"env": "cartpole", "history": 3})
    loaded, meta = QNetwork.load(path)
    assert loaded.layer_sizes == net.layer_sizes and loaded.dueling and loaded.steps == 77
    assert np.array_equal(loaded.flat, net.flat)
    assert meta == {"env": "cartpole", "history": 3}
    raw = path.read_bytes()
    assert raw.endswith(net.flat.astype("<f8").tobytes())


def test_checkpoint_errors(tmp_path):
    with pytest.raises(UsageError):
        QNetwork.load(tmp_path / "missing.ckpt")
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(UsageError):
        QNetwork.load(bad)
