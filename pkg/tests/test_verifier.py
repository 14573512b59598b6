"""Epoch workflow: verdicts, sample fallback, confidence level, determinism."""

import numpy as np
import pytest

import urv.geometry as G
from urv.errors import ConfigError
from urv.network import evaluate
from urv.properties import InputRegion, Leaf, PropertySpec, point_violates
from urv.underapprox import DimOrder, Pruning, StrategyConfig
from urv.verifier import (
    EpochArchive,
    ReachEpoch,
    SampleHit,
    UnknownWithConfidence,
    Unsafe,
    VerifierConfig,
    confidence_level,
    epoch_rng,
    sample_check,
    verify,
)

from helpers import exact_propagate, in_union, make_net, random_tiny_net

RF_TP = StrategyConfig(dim_order=DimOrder.RANDOM_FIRST, pruning=Pruning.TOP_POLYTOPE)


def line_net():
    return make_net((np.array([[1.0]]), np.array([0.0])))


def line_prop(threshold):
    region = InputRegion(np.array([-1.0]), np.array([1.0]))
    return PropertySpec("line", (region,), Leaf(np.array([1.0]), threshold))


def test_linear_net_unknown_with_full_confidence():
    cfg = VerifierConfig(epochs=1, sample_count=500, master_seed=1)
    verdict = verify(line_net(), line_prop(2.0), cfg)
    assert isinstance(verdict, UnknownWithConfidence)
    assert verdict.cl == 1.0
    assert verdict.epochs_run == 1
    assert verdict.samples_checked == 500


def test_linear_net_unsafe_at_first_epoch():
    cfg = VerifierConfig(epochs=10, sample_count=100, master_seed=1)
    verdict = verify(line_net(), line_prop(0.0), cfg)
    assert isinstance(verdict, Unsafe)
    assert verdict.source == ReachEpoch(1)
    assert verdict.witness[0] == pytest.approx(1.0)
    assert verdict.epochs_run == 1


def test_sample_check_whole_space_passes():
    cfg = VerifierConfig(epochs=1, sample_count=200)
    got = sample_check(line_net(), line_prop(1e9), cfg, epoch_rng(0, 0))
    assert got is None


def test_sample_check_excluded_reachable_returns_first_sample():
    cfg = VerifierConfig(epochs=1, sample_count=200, master_seed=3)
    got = sample_check(line_net(), line_prop(-5.0), cfg, epoch_rng(3, 0))
    assert got is not None
    expected_first = -1.0 + epoch_rng(3, 0).random((1, 1))[0, 0] * 2.0
    assert got[0] == pytest.approx(expected_first)


def test_sample_check_thin_sliver_hit_rate():
    # violating inputs are x > 1 - 1e-2, measure 0.5e-2 of the box [-1, 1]
    net = line_net()
    prop = line_prop(1.0 - 1e-2)
    cfg = VerifierConfig(epochs=1, sample_count=10_000)
    hits = sum(
        sample_check(net, prop, cfg, epoch_rng(seed, 0)) is not None for seed in range(100)
    )
    assert hits == 100  # miss probability (1 - 0.005)^1e4 is ~2e-22


def test_sample_witness_reevaluates_to_violation():
    rng = np.random.default_rng(9)
    net = random_tiny_net(rng, [2, 3, 2])
    region = InputRegion(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    prop = PropertySpec("impossible", (region,), Leaf(np.array([0.0, 0.0]), -1.0))
    cfg = VerifierConfig(epochs=3, sample_count=50, master_seed=5)
    verdict = verify(net, prop, cfg)
    assert isinstance(verdict, Unsafe)
    if isinstance(verdict.source, SampleHit):
        out = evaluate(net, verdict.source.input_point)
        assert point_violates(out, prop.output)


# ---------------------------------------------------------------------------
# confidence level


def test_confidence_level_cases():
    net = line_net()
    prop = line_prop(2.0)
    samples = np.linspace(-1, 1, 101).reshape(-1, 1)
    archive = EpochArchive(dim=1)
    archive.append(1, G.VPolytope(np.array([[-1.0], [1.0]])))
    assert confidence_level(archive, net, prop, samples) == 1.0
    lone = EpochArchive(dim=1)
    lone.append(1, G.VPolytope(np.array([[9.0]])))
    assert confidence_level(lone, net, prop, samples) == 0.0


def test_confidence_level_empty_archive_is_config_error():
    with pytest.raises(ConfigError):
        confidence_level(EpochArchive(dim=1), line_net(), line_prop(2.0), np.zeros((3, 1)))


def test_confidence_level_monotone_in_archive():
    rng = np.random.default_rng(41)
    net = random_tiny_net(rng, [2, 3, 2])
    region = InputRegion(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    prop = PropertySpec("mono", (region,), Leaf(np.array([1.0, 1.0]), 1e9))
    samples = rng.uniform(-1, 1, size=(400, 2))
    archive = EpochArchive(dim=2)
    previous = -1.0
    from urv.underapprox import propagate_under

    corners = G.VPolytope(np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]))
    for epoch in range(1, 6):
        archive.append(epoch, propagate_under(corners, net, RF_TP, epoch_rng(7, epoch)))
        cl = confidence_level(archive, net, prop, samples)
        assert cl >= previous
        previous = cl


def test_confidence_level_order_invariant():
    rng = np.random.default_rng(43)
    net = random_tiny_net(rng, [2, 3, 2])
    region = InputRegion(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    prop = PropertySpec("perm", (region,), Leaf(np.array([1.0, 1.0]), 1e9))
    samples = rng.uniform(-1, 1, size=(300, 2))
    from urv.underapprox import propagate_under

    corners = G.VPolytope(np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]))
    polys = [propagate_under(corners, net, RF_TP, epoch_rng(7, e)) for e in range(1, 5)]
    forward = EpochArchive(dim=2)
    backward = EpochArchive(dim=2)
    for i, poly in enumerate(polys):
        forward.append(i + 1, poly)
    for i, poly in enumerate(reversed(polys)):
        backward.append(i + 1, poly)
    assert confidence_level(forward, net, prop, samples) == confidence_level(
        backward, net, prop, samples
    )


# ---------------------------------------------------------------------------
# determinism, parallelism, timeout


def falsifiable_case(seed=11):
    rng = np.random.default_rng(seed)
    net = random_tiny_net(rng, [2, 3, 2])
    region = InputRegion(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    outs = np.array([evaluate(net, x) for x in rng.uniform(-1, 1, size=(2000, 2))])
    direction = np.array([1.0, 0.5])
    cut = float(np.quantile(outs @ direction, 0.6))
    prop = PropertySpec("constructed", (region,), Leaf(direction, cut))
    return net, prop


def test_single_threaded_determinism():
    net, prop = falsifiable_case()
    cfg = VerifierConfig(epochs=50, sample_count=200, strategy=RF_TP, master_seed=21)
    a = verify(net, prop, cfg)
    b = verify(net, prop, cfg)
    assert type(a) is type(b)
    if isinstance(a, Unsafe):
        assert a.source == b.source or np.array_equal(
            a.source.input_point, b.source.input_point
        )
        assert np.array_equal(a.witness, b.witness)
        assert a.epochs_run == b.epochs_run
    else:
        assert a.cl == b.cl


def test_parallel_run_valid_witness():
    net, prop = falsifiable_case()
    cfg = VerifierConfig(epochs=50, sample_count=200, strategy=RF_TP, master_seed=21, parallelism=4)
    verdict = verify(net, prop, cfg)
    assert isinstance(verdict, Unsafe)
    assert point_violates(verdict.witness, prop.output)


def test_reach_witness_inside_exact_output_region():
    net, prop = falsifiable_case()
    cfg = VerifierConfig(epochs=50, sample_count=200, strategy=RF_TP, master_seed=2)
    verdict = verify(net, prop, cfg)
    assert isinstance(verdict, Unsafe)
    if isinstance(verdict.source, ReachEpoch):
        corners = G.VPolytope(
            np.array([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
        )
        exact = exact_propagate(net, corners)
        assert in_union(exact, verdict.witness, 1e-5)
    assert point_violates(verdict.witness, prop.output)


def test_zero_timeout_unknown_with_zero_confidence():
    cfg = VerifierConfig(epochs=100, timeout_ms=0, sample_count=50)
    verdict = verify(line_net(), line_prop(2.0), cfg)
    assert isinstance(verdict, UnknownWithConfidence)
    assert verdict.epochs_run == 0
    assert verdict.cl == 0.0


def test_on_epoch_callback_counts():
    calls = []
    cfg = VerifierConfig(epochs=7, sample_count=50)
    verify(line_net(), line_prop(2.0), cfg, on_epoch=lambda e, s: calls.append(e))
    assert calls == list(range(1, 8))


def test_verifier_config_validation():
    with pytest.raises(ConfigError):
        VerifierConfig(epochs=0)
    with pytest.raises(ConfigError):
        VerifierConfig(sample_count=0)
    with pytest.raises(ConfigError):
        VerifierConfig(parallelism=0)


def test_benchmark_scale_epoch_throughput():
    # Synthetic network at the 5-input / 50-wide / 6-hidden-layer scale of
    # the collision-avoidance benchmarks; an epoch must stay cheap enough
    # for the 60 s per-task budget to be meaningful.
    import math
    import time

    from urv.network import Normalization
    from urv.properties import acasxu_property

    rng = np.random.default_rng(99)
    dims = [5, 50, 50, 50, 50, 50, 50, 5]
    pairs = [
        (rng.normal(size=(o, i)) * (1.5 / np.sqrt(i)), rng.normal(size=o) * 0.1)
        for i, o in zip(dims, dims[1:])
    ]
    norm = Normalization(
        input_min=np.array([0.0, -math.pi, -math.pi, 100.0, 0.0]),
        input_max=np.array([60760.0, math.pi, math.pi, 1200.0, 1200.0]),
        input_mean=np.array([19791.091, 0.0, 0.0, 650.0, 600.0]),
        input_range=np.array([60261.0, 6.28318530718, 6.28318530718, 1100.0, 1200.0]),
        output_mean=7.5188840201005975,
        output_range=373.94992,
    )
    net = make_net(*pairs, norm=norm)
    cfg = VerifierConfig(epochs=5, sample_count=500, strategy=RF_TP, master_seed=1)
    start = time.perf_counter()
    verdict = verify(net, acasxu_property(3), cfg)
    elapsed = time.perf_counter() - start
    assert isinstance(verdict, (Unsafe, UnknownWithConfidence))
    assert elapsed < 20.0
