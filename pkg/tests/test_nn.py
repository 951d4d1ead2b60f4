import numpy as np
import pytest

from shiftuq import autodiff as ad
from shiftuq.nn import (
    DenseNet,
    GradientTape,
    Layer,
    NetGraph,
    check_gradients,
    grad,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    value_and_grad,
)
from shiftuq.rngs import SeedTree


def small_net(seed=0, widths=(3, 5, 2), acts=None):
    return DenseNet.create(widths, acts, SeedTree(seed).child("net").generator())


def test_create_init_bounds_and_dtype():
    net = DenseNet.create([10, 7], rng=np.random.default_rng(0))
    w = net.layers[0].weights
    scale = np.sqrt(6.0 / 17.0)
    assert w.dtype == np.float64
    assert np.all(np.abs(w) <= scale)
    assert np.all(net.layers[0].bias == 0.0)
    # bounds are tight enough that samples approach them
    assert np.max(np.abs(w)) > 0.8 * scale


def test_create_same_seed_identical():
    a = small_net(4)
    b = small_net(4)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weights, lb.weights)


def test_forward_shapes_and_width_validation():
    net = small_net()
    single = net.forward(np.zeros(3))
    batch = net.forward(np.zeros((6, 3)))
    assert single.shape == (2,)
    assert batch.shape == (6, 2)
    with pytest.raises(ValueError):
        net.forward(np.zeros(4))


def test_layer_validation():
    with pytest.raises(ValueError):
        Layer(np.zeros((2, 3)), np.zeros(3), "relu")
    with pytest.raises(ValueError):
        Layer(np.zeros((2, 3)), np.zeros(2), "tanh")
    with pytest.raises(ValueError):
        DenseNet([Layer(np.zeros((2, 3)), np.zeros(2), "relu"), Layer(np.zeros((2, 4)), np.zeros(2), "identity")])


def test_graph_forward_matches_numpy_forward():
    net = small_net(1)
    x = SeedTree(2).child("x").generator().standard_normal((4, 3))
    out = NetGraph(net).forward(x)
    np.testing.assert_allclose(out.value, net.forward(x), rtol=0, atol=0)
    single = NetGraph(net).forward(x[0])
    np.testing.assert_allclose(single.value, net.forward(x[0]))


def test_grad_matches_finite_differences_smooth():
    # sigmoid activations keep the objective smooth so every coordinate checks
    net = small_net(3, (3, 4, 1), ["sigmoid", "identity"])
    x = SeedTree(5).child("x").generator().standard_normal((8, 3))
    y = SeedTree(5).child("y").generator().standard_normal(8)

    def objective(g):
        pred = g.forward(x)[:, 0]
        return -ad.vsum(ad.square(pred - y))

    report = check_gradients(net, objective, eps=1e-5)
    assert report.n_skipped == 0
    assert report.max_rel_error < 1e-6


def test_check_gradients_skips_relu_kinks():
    # a pre-activation sitting exactly on 0 flips branch under +/-eps
    net = DenseNet([Layer(np.array([[1.0]]), np.array([0.0]), "relu"), Layer(np.array([[1.0]]), np.array([0.0]), "identity")])

    def objective(g):
        return ad.vsum(g.forward(np.array([[0.0]])))

    report = check_gradients(net, objective, eps=1e-6)
    # perturbing first-layer bias crosses the kink; it must be skipped, not failed
    assert report.n_skipped >= 1
    assert report.max_rel_error < 1e-6


def test_grad_on_relu_net_checks_away_from_kinks():
    net = small_net(7, (2, 6, 1))
    x = SeedTree(11).child("x").generator().standard_normal((5, 2))

    def objective(g):
        return ad.vmean(ad.square(g.forward(x)))

    report = check_gradients(net, objective, eps=1e-5)
    assert report.max_rel_error < 1e-5
    assert report.n_checked > 0


def test_sgd_ascent_increases_concave_objective():
    net = DenseNet([Layer(np.zeros((2, 2)), np.zeros(2), "identity")])
    target = np.array([[3.0, -1.0], [0.5, 2.0]])

    def objective(g):
        w = g.params[0][0]
        return -ad.vsum(ad.square(w - target))

    values = []
    for _ in range(60):
        val, tape = value_and_grad(net, objective)
        values.append(val)
        if tape.max_abs() < 1e-8:
            break
        net = sgd_step(net, tape, 0.2, "ascent")
    assert all(b > a for a, b in zip(values, values[1:]))
    np.testing.assert_allclose(net.layers[0].weights, target, atol=1e-6)


def test_sgd_step_direction_validation_and_purity():
    net = small_net()
    tape = GradientTape.zeros(net)
    with pytest.raises(ValueError):
        sgd_step(net, tape, 0.1, "sideways")
    before = net.layers[0].weights.copy()
    sgd_step(net, tape, 0.1, "descent")
    assert np.array_equal(net.layers[0].weights, before)


def test_tape_congruence_checked():
    tape = GradientTape.zeros(small_net(0, (3, 5, 2)))
    other = small_net(0, (3, 4, 2))
    with pytest.raises(ValueError):
        sgd_step(other, tape, 0.1)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    net = small_net(9, (4, 3, 2), ["relu", "identity"])
    # make values awkward: negative zero, tiny, huge
    net.layers[0].weights[0, 0] = -0.0
    net.layers[0].weights[0, 1] = 1e-300
    net.layers[1].weights[0, 0] = 12345678.987654321
    path = tmp_path / "net.txt"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    for orig, new in zip(net.layers, loaded.layers):
        assert orig.weights.tobytes() == new.weights.tobytes()
        assert orig.bias.tobytes() == new.bias.tobytes()
        assert orig.activation == new.activation
    # save of the reload is byte-identical
    path2 = tmp_path / "net2.txt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "junk.txt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_grad_function_returns_tape():
    net = small_net(2)
    x = np.ones((2, 3))
    tape = grad(net, lambda g: ad.vsum(g.forward(x)))
    tape.check_congruent(net)
    assert tape.max_abs() > 0
