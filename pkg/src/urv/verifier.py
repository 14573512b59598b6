"""Epoch-based falsification workflow with a sampling fallback.

Each epoch pushes the property's input corners through the network with an
independently seeded under-approximation pass and checks the resulting
output polytope against the property.  Any epoch that pokes outside the
desired region ends the run as Unsafe.  If the epoch budget (or timeout)
runs out, a uniform sample of the input box is checked pointwise; when that
also passes, the verdict is Unknown together with the fraction of sample
outputs covered by the convex hull of all archived epoch polytopes.
"""

import threading
import time
from concurrent.futures import FIRST_COMPLETED, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import network as network_mod
from . import properties as properties_mod
from .errors import ConfigError
from .geometry import LP_TOL, HullMembership, VPolytope
from .underapprox import PropagationCancelled, StrategyConfig, propagate_under

_SEED_MASK = (1 << 64) - 1
_SAMPLE_STREAM = 0  # epoch streams start at 1


@dataclass(frozen=True)
class VerifierConfig:
    epochs: int = 1000
    timeout_ms: int = 60_000
    sample_count: int = 10_000
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    master_seed: int = 0
    parallelism: int = 1
    tol: float = LP_TOL

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epoch bound must be >= 1, got {self.epochs}")
        if self.sample_count < 1:
            raise ConfigError(f"sample count must be >= 1, got {self.sample_count}")
        if self.timeout_ms < 0:
            raise ConfigError(f"timeout must be >= 0 ms, got {self.timeout_ms}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")


class EpochArchive:
    """Append-only log of per-epoch output polytopes.

    Each entry records the epoch index and the seed of the random stream
    that produced the polytope, so any epoch can be replayed.
    """

    def __init__(self, dim: Optional[int] = None):
        self._dim = dim
        self._entries: List[Tuple[int, int, VPolytope]] = []
        self._lock = threading.Lock()

    def append(self, epoch: int, polytope: VPolytope, seed: int = 0):
        if self._dim is not None and polytope.dim != self._dim:
            raise ConfigError(
                f"archive dim {self._dim} does not match polytope dim {polytope.dim}"
            )
        with self._lock:
            self._entries.append((epoch, seed, polytope))

    @property
    def polytopes(self) -> List[VPolytope]:
        with self._lock:
            return [p for _, _, p in self._entries]

    @property
    def entries(self) -> List[Tuple[int, int, VPolytope]]:
        with self._lock:
            return list(self._entries)

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def stacked_vertices(self) -> np.ndarray:
        polys = self.polytopes
        if not polys:
            raise ConfigError("archive is empty")
        return np.vstack([p.vertices for p in polys])


@dataclass(frozen=True)
class ReachEpoch:
    epoch: int


@dataclass(frozen=True)
class SampleHit:
    input_point: np.ndarray


@dataclass(frozen=True)
class Unsafe:
    witness: np.ndarray  # output point violating the condition
    source: Union[ReachEpoch, SampleHit]
    epochs_run: int


@dataclass(frozen=True)
class UnknownWithConfidence:
    cl: float
    epochs_run: int
    samples_checked: int


Verdict = Union[Unsafe, UnknownWithConfidence]


def epoch_rng(master_seed: int, epoch: int) -> np.random.Generator:
    """Independent, reproducible random stream for one epoch."""
    return np.random.default_rng((master_seed & _SEED_MASK, epoch))


def _draw_samples(
    regions: Sequence[Tuple[np.ndarray, np.ndarray]], count: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform samples from the box(es); multi-box regions share evenly."""
    blocks = []
    per = [count // len(regions)] * len(regions)
    for i in range(count - sum(per)):
        per[i] += 1
    for (lo, hi), n in zip(regions, per):
        if n:
            blocks.append(lo + rng.random((n, lo.shape[0])) * (hi - lo))
    return np.vstack(blocks)


def sample_check(
    net: network_mod.Network,
    prop: properties_mod.PropertySpec,
    cfg: VerifierConfig,
    rng: np.random.Generator,
) -> Optional[np.ndarray]:
    """First sampled input whose output violates the property, if any."""
    resolved = properties_mod.resolve_for_network(prop, net)
    samples = _draw_samples(resolved.regions, cfg.sample_count, rng)
    outputs = network_mod.evaluate_many(net, samples)
    bad = ~properties_mod.satisfied_many(resolved.condition, outputs, cfg.tol)
    if bad.any():
        return samples[int(np.argmax(bad))]
    return None


def confidence_level(
    archive: EpochArchive,
    net: network_mod.Network,
    prop: properties_mod.PropertySpec,
    samples,
) -> float:
    """Fraction of sample outputs inside the hull of all archived vertices.

    Samples are points in the network's input coordinates, as produced by
    resolving the property's region.
    """
    if len(archive) == 0:
        raise ConfigError("confidence level needs a non-empty archive")
    S = np.asarray(samples, dtype=float)
    if S.ndim != 2 or S.shape[1] != net.input_dim:
        raise ConfigError(
            f"sample shape {S.shape} does not match network input dim {net.input_dim}"
        )
    outputs = network_mod.evaluate_many(net, S)
    hull = HullMembership(archive.stacked_vertices(), tol=LP_TOL)
    return float(hull.contains(outputs).mean())


def _epoch_task(
    net,
    resolved: properties_mod.ResolvedProperty,
    cfg: VerifierConfig,
    epoch: int,
    cancel: Callable[[], bool],
):
    """One epoch: propagate every region polytope and look for a violation.

    Returns (epoch, duration_s, polytopes, witness) or None when cancelled.
    """
    if cancel():
        return None
    rng = epoch_rng(cfg.master_seed, epoch)
    start = time.perf_counter()
    polys = []
    try:
        for corner_poly in resolved.polytopes:
            polys.append(
                propagate_under(corner_poly, net, cfg.strategy, rng, cancel=cancel, tol=cfg.tol)
            )
    except PropagationCancelled:
        return None
    witness = None
    for poly in polys:
        witness = properties_mod.polytope_violates(poly, resolved.condition, cfg.tol)
        if witness is not None:
            break
    return epoch, time.perf_counter() - start, polys, witness


def verify(
    net: network_mod.Network,
    prop: properties_mod.PropertySpec,
    cfg: VerifierConfig,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> Verdict:
    """Run the full workflow and return Unsafe or Unknown-with-confidence.

    Single-threaded runs (parallelism=1) are bit-deterministic for a fixed
    configuration; with workers, which violating epoch reports first may
    vary but any reported witness is valid.  `on_epoch(epoch, seconds)`
    is invoked for every completed epoch.
    """
    resolved = properties_mod.resolve_for_network(prop, net)
    deadline = time.monotonic() + cfg.timeout_ms / 1000.0
    archive = EpochArchive(dim=net.output_dim)

    def timed_out() -> bool:
        return time.monotonic() > deadline

    epochs_run = 0
    hit: Optional[Tuple[int, np.ndarray]] = None

    if cfg.parallelism == 1:
        for epoch in range(1, cfg.epochs + 1):
            if timed_out():
                break
            result = _epoch_task(net, resolved, cfg, epoch, timed_out)
            if result is None:
                break
            _, duration, polys, witness = result
            epochs_run += 1
            if on_epoch is not None:
                on_epoch(epoch, duration)
            if witness is not None:
                return Unsafe(witness, ReachEpoch(epoch), epochs_run)
            for poly in polys:
                archive.append(epoch, poly, seed=cfg.master_seed)
    else:
        stop = threading.Event()

        def cancelled() -> bool:
            return stop.is_set() or timed_out()

        # Epochs are submitted in bounded waves so a timeout or an early
        # violation never leaves a deep queue of futures to drain.
        with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
            next_epoch = 1
            pending = set()
            try:
                while True:
                    while (
                        next_epoch <= cfg.epochs
                        and len(pending) < 2 * cfg.parallelism
                        and not cancelled()
                    ):
                        pending.add(
                            pool.submit(_epoch_task, net, resolved, cfg, next_epoch, cancelled)
                        )
                        next_epoch += 1
                    if not pending:
                        break
                    done, pending = wait(pending, return_when=FIRST_COMPLETED)
                    for fut in done:
                        result = fut.result()
                        if result is None:
                            continue
                        epoch, duration, polys, witness = result
                        epochs_run += 1
                        if on_epoch is not None:
                            on_epoch(epoch, duration)
                        if witness is not None and hit is None:
                            hit = (epoch, witness)
                            stop.set()
                        elif witness is None:
                            for poly in polys:
                                archive.append(epoch, poly, seed=cfg.master_seed)
                    if hit is not None:
                        break
            finally:
                stop.set()
                for fut in pending:
                    fut.cancel()
        if hit is not None:
            return Unsafe(hit[1], ReachEpoch(hit[0]), epochs_run)

    # Sampling fallback; runs after exhausting epochs or timing out.
    rng = epoch_rng(cfg.master_seed, _SAMPLE_STREAM)
    samples = _draw_samples(resolved.regions, cfg.sample_count, rng)
    outputs = network_mod.evaluate_many(net, samples)
    bad = ~properties_mod.satisfied_many(resolved.condition, outputs, cfg.tol)
    if bad.any():
        idx = int(np.argmax(bad))
        return Unsafe(outputs[idx], SampleHit(samples[idx]), epochs_run)

    if len(archive) == 0:
        cl = 0.0
    else:
        hull = HullMembership(archive.stacked_vertices(), tol=LP_TOL)
        cl = float(hull.contains(outputs).mean())
    return UnknownWithConfidence(cl, epochs_run, cfg.sample_count)
