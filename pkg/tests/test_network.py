"""Network model, evaluation, normalization, and both file formats."""

import numpy as np
import pytest

import urv.geometry as G
from urv.errors import ConfigError, ParseError
from urv.network import (
    Activation,
    Layer,
    Network,
    Normalization,
    denormalize_input,
    evaluate,
    evaluate_many,
    normalize,
    parse_network,
    parse_nnet,
    parse_urvnet,
    serialize_urvnet,
)

from helpers import exact_propagate, in_union, make_net, random_tiny_net, straight_line_eval

# Hand-written 2-2-1 NNet file: weights chosen so the expected struct is
# written out next to it below.
GOLDEN_NNET = """\
// tiny hand-written network
2,2,1,2,
2,2,1,
0,
-1.0,-2.0,
1.0,2.0,
0.0,0.5,0.25,
1.0,2.0,4.0,
1.0,0.5,
-0.25,2.0,
0.125,
-0.5,
3.0,-1.5,
0.75,
"""

GOLDEN_W1 = np.array([[1.0, 0.5], [-0.25, 2.0]])
GOLDEN_B1 = np.array([0.125, -0.5])
GOLDEN_W2 = np.array([[3.0, -1.5]])
GOLDEN_B2 = np.array([0.75])


def test_network_invariants():
    with pytest.raises(ConfigError):
        Network(())
    good = Layer(np.eye(2), np.zeros(2), Activation.RELU)
    last = Layer(np.eye(2), np.zeros(2), Activation.IDENTITY)
    with pytest.raises(ConfigError):
        Network((good, Layer(np.eye(3), np.zeros(3), Activation.IDENTITY)))
    with pytest.raises(ConfigError):
        Network((good,))  # final layer must be identity
    with pytest.raises(ConfigError):
        Network((last, last))  # hidden layer must be relu
    net = Network((good, last))
    assert net.input_dim == 2 and net.output_dim == 2


def test_evaluate_identity_layer():
    net = make_net((np.eye(3), np.zeros(3)))
    x = np.array([0.3, -1.2, 4.0])
    assert np.array_equal(evaluate(net, x), x)


def test_evaluate_absolute_value_net():
    net = make_net((np.array([[1.0], [-1.0]]), np.zeros(2)), (np.array([[1.0, 1.0]]), np.zeros(1)))
    assert evaluate(net, np.array([-3.0]))[0] == 3.0
    assert evaluate(net, np.array([2.5]))[0] == 2.5


def test_evaluate_matches_straight_line_interpreter():
    rng = np.random.default_rng(101)
    net = random_tiny_net(rng, [3, 4, 3, 2])
    xs = rng.normal(size=(1000, 3))
    fast = evaluate_many(net, xs)
    for i in range(0, 1000, 37):
        assert np.allclose(fast[i], straight_line_eval(net, xs[i]), atol=1e-10)
        assert np.allclose(evaluate(net, xs[i]), fast[i], atol=1e-12)


def test_evaluate_point_lands_in_exact_reach():
    rng = np.random.default_rng(6)
    net = random_tiny_net(rng, [2, 3, 2])
    for _ in range(10):
        x = rng.uniform(-1, 1, size=2)
        singleton = G.VPolytope(x.reshape(1, -1))
        exact = exact_propagate(net, singleton)
        assert in_union(exact, evaluate(net, x), 1e-6)


# ---------------------------------------------------------------------------
# normalization


def _normed_net():
    norm = Normalization(
        input_min=np.array([-1.0, 0.0]),
        input_max=np.array([1.0, 10.0]),
        input_mean=np.array([0.0, 5.0]),
        input_range=np.array([2.0, 10.0]),
        output_mean=1.0,
        output_range=4.0,
    )
    return make_net((np.eye(2), np.zeros(2)), norm=norm)


def test_normalize_mean_maps_to_zero():
    net = _normed_net()
    out = normalize(net, np.array([0.0, 5.0]))
    assert np.allclose(out.values, 0.0)
    assert not out.clamped.any()


def test_normalize_at_max_bound():
    net = _normed_net()
    out = normalize(net, np.array([1.0, 10.0]))
    assert np.allclose(out.values, [(1.0 - 0.0) / 2.0, (10.0 - 5.0) / 10.0])


def test_normalize_clamps_and_flags():
    net = _normed_net()
    out = normalize(net, np.array([5.0, -3.0]))
    assert out.clamped.tolist() == [True, True]
    assert np.allclose(out.values, [(1.0) / 2.0, (0.0 - 5.0) / 10.0])


def test_normalize_round_trip():
    net = _normed_net()
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = np.array([rng.uniform(-1, 1), rng.uniform(0, 10)])
        assert np.allclose(denormalize_input(net, normalize(net, x).values), x)


def test_normalize_requires_stats():
    net = make_net((np.eye(2), np.zeros(2)))
    with pytest.raises(ConfigError):
        normalize(net, np.zeros(2))


# ---------------------------------------------------------------------------
# NNet parsing


def test_golden_nnet():
    net = parse_nnet(GOLDEN_NNET)
    assert len(net.layers) == 2
    assert np.array_equal(net.layers[0].weights, GOLDEN_W1)
    assert np.array_equal(net.layers[0].bias, GOLDEN_B1)
    assert np.array_equal(net.layers[1].weights, GOLDEN_W2)
    assert np.array_equal(net.layers[1].bias, GOLDEN_B2)
    assert net.layers[0].activation is Activation.RELU
    assert net.layers[1].activation is Activation.IDENTITY
    assert net.normalization is not None
    assert np.array_equal(net.normalization.input_mean, [0.0, 0.5])
    assert net.normalization.output_mean == 0.25
    assert net.normalization.output_range == 4.0
    # 1 ReLU layer: y = 3*max(0, x0 + 0.5 x1 + 0.125) - 1.5*max(0, -0.25 x0 + 2 x1 - 0.5) + 0.75
    y = evaluate(net, np.array([1.0, 1.0]))
    assert np.isclose(y[0], 3.0 * 1.625 - 1.5 * 1.25 + 0.75)


def test_nnet_ragged_row_names_line():
    bad = GOLDEN_NNET.replace("1.0,0.5,", "1.0,0.5,7.0,")
    with pytest.raises(ParseError) as err:
        parse_nnet(bad)
    assert err.value.line == 9


@pytest.mark.parametrize(
    "mutation",
    [
        lambda t: t.replace("2,2,1,2,", "2,2,1,"),  # short header
        lambda t: t.replace("2,2,1,", "2,3,1,", 1),  # header/sizes disagree... header line is first
        lambda t: t.replace("1.0,0.5,", "1.0,abc,"),  # non-numeric weight
        lambda t: t.replace("0.125,", "nan,"),  # non-finite bias
        lambda t: t.replace("-1.0,-2.0,", "-1.0,"),  # short mins line
        lambda t: "\n".join(t.splitlines()[:-2]) + "\n",  # truncated file
        lambda t: t.replace("2,2,1,\n", "2,1,1,\n"),  # sizes disagree with header
    ],
)
def test_nnet_corrupted_corpus(mutation):
    with pytest.raises(ParseError):
        parse_nnet(mutation(GOLDEN_NNET))


# ---------------------------------------------------------------------------
# URVNET format


def test_urvnet_round_trip():
    rng = np.random.default_rng(12)
    net = random_tiny_net(rng, [2, 3, 2])
    text = serialize_urvnet(net)
    again = parse_urvnet(text)
    assert serialize_urvnet(again) == text
    for la, lb in zip(net.layers, again.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.bias, lb.bias)


def test_urvnet_round_trip_with_norm():
    net = _normed_net()
    text = serialize_urvnet(net)
    again = parse_urvnet(text)
    assert serialize_urvnet(again) == text
    assert again.normalization.output_range == 4.0


def test_urvnet_rejects_double_space():
    net = _normed_net()
    text = serialize_urvnet(net).replace("dims 2 2", "dims 2  2")
    with pytest.raises(ParseError):
        parse_urvnet(text)


def test_urvnet_rejects_bad_header():
    with pytest.raises(ParseError):
        parse_urvnet("urvnet 2\ndims 1 1\nW\n1.0\nb\n0.0\n")


def test_parse_network_autodetect():
    rng = np.random.default_rng(13)
    net = random_tiny_net(rng, [2, 2])
    assert parse_network(serialize_urvnet(net)).input_dim == 2
    assert parse_network(GOLDEN_NNET).input_dim == 2
    with pytest.raises(ParseError):
        parse_network("")
