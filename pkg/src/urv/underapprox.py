"""Randomized single-branch under-approximation of ReLU over V-polytopes.

One pass processes the coordinates in a configurable order.  Whenever a
coordinate mixes signs the polytope would split in two; instead of keeping
both branches, one side's vertices are replaced by points on the splitting
plane, chosen greedily to spread out.  The result is always contained in
the exact ReLU image and never has more vertices than the input.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional

import numpy as np

from .errors import ConfigError
from .geometry import (
    EPS_DUP,
    EPS_SIGN,
    LP_TOL,
    VPolytope,
    affine_map,
    contains_point,
    dedup_rows,
    segment_hyperplane_intersection,
)


class DimOrder(Enum):
    NATURAL = "natural"
    RANDOM_FIRST = "rf"
    MAXIMAL_FIRST = "mf"


class Pruning(Enum):
    NONE = "none"
    TOP_POLYTOPE = "tp"
    COMPLETE_TOP_POLYTOPE = "ctp"


class PropagationCancelled(RuntimeError):
    """Raised when a cancel hook stops a propagation between layers."""


@dataclass(frozen=True)
class StrategyConfig:
    """Knobs for one under-approximation pass.

    `branch_bias` is the probability of keeping the above-plane side when a
    coordinate mixes signs; pruning strategies can override the draw.
    `mua_restarts` reruns the greedy replacement selection and keeps the
    most spread-out set (1 disables the restarts).
    """

    dim_order: DimOrder = DimOrder.NATURAL
    pruning: Pruning = Pruning.NONE
    mua_restarts: int = 1
    branch_bias: float = 0.5

    def __post_init__(self):
        if self.mua_restarts < 1:
            raise ConfigError(f"mua_restarts must be >= 1, got {self.mua_restarts}")
        if not 0.0 <= self.branch_bias <= 1.0:
            raise ConfigError(f"branch_bias must be in [0, 1], got {self.branch_bias}")

    def describe(self) -> str:
        if self.dim_order is DimOrder.NATURAL and self.pruning is Pruning.NONE:
            label = "pure"
        else:
            label = self.dim_order.value
            if self.pruning is not Pruning.NONE:
                label += "+" + self.pruning.value
        if self.mua_restarts > 1:
            label += f"+mua{self.mua_restarts}"
        return label


def order_dimensions(p: VPolytope, cfg: StrategyConfig, rng: np.random.Generator) -> np.ndarray:
    """Processing order of the coordinates for one pass."""
    d = p.dim
    if cfg.dim_order is DimOrder.RANDOM_FIRST:
        return rng.permutation(d)
    if cfg.dim_order is DimOrder.MAXIMAL_FIRST:
        scores = np.maximum(p.vertices, 0.0).sum(axis=0)
        return np.array(sorted(range(d), key=lambda i: (-scores[i], i)))
    return np.arange(d)


def _select_replacements(
    candidate_sets: List[np.ndarray], restarts: int, rng: np.random.Generator
) -> np.ndarray:
    """One plane point per replaced vertex, greedily spread out.

    The first point is drawn uniformly from the first candidate set; each
    later set contributes its point with the largest minimum distance to
    the already chosen ones (ties break to the lowest candidate index).
    With restarts the whole selection reruns and the set with the largest
    pairwise-distance sum wins.
    """
    best: Optional[np.ndarray] = None
    best_spread = -np.inf
    for _ in range(restarts):
        chosen: List[np.ndarray] = []
        for cands in candidate_sets:
            if not chosen:
                pick = int(rng.integers(len(cands)))
            else:
                sel = np.array(chosen)
                diffs = cands[:, None, :] - sel[None, :, :]
                dmin = np.sqrt((diffs**2).sum(axis=2)).min(axis=1)
                pick = int(np.argmax(dmin))
            chosen.append(cands[pick])
        sel = np.array(chosen)
        diffs = sel[:, None, :] - sel[None, :, :]
        spread = np.sqrt((diffs**2).sum(axis=2)).sum() / 2.0
        if spread > best_spread:
            best_spread = spread
            best = sel
    return best


def _plane_point(s: np.ndarray, t: np.ndarray, d: int) -> np.ndarray:
    """Point of [s, t] on the plane {x_d = 0}, tolerating on-plane endpoints."""
    if abs(t[d]) <= EPS_SIGN:
        out = t.copy()
        out[d] = 0.0
        return out
    if abs(s[d]) <= EPS_SIGN:
        out = s.copy()
        out[d] = 0.0
        return out
    return segment_hyperplane_intersection(s, t, d)


def relu_under_approx(
    p: VPolytope,
    cfg: StrategyConfig,
    rng: np.random.Generator,
    step_counts: Optional[List[int]] = None,
    tol: float = LP_TOL,
) -> VPolytope:
    """One randomized under-approximation of ReLU(p).

    Every vertex of the result lies in the exact ReLU image, and the
    vertex count never grows past p's at any step.  `step_counts`, when
    given, collects the vertex count after each processed dimension.
    """
    V = np.asarray(p.vertices, dtype=float).copy()
    for d in order_dimensions(p, cfg, rng):
        col = V[:, d]
        if col.min() >= -EPS_SIGN or col.max() <= EPS_SIGN:
            # Single-signed: ReLU on this coordinate keeps the polytope convex.
            V[:, d] = np.maximum(col, 0.0)
            V = dedup_rows(V, EPS_DUP)
            if step_counts is not None:
                step_counts.append(V.shape[0])
            continue

        pos_mask = col >= -EPS_SIGN
        positives = V[pos_mask]
        negatives = V[~pos_mask]

        if cfg.pruning is Pruning.TOP_POLYTOPE:
            keep_top = True
        elif cfg.pruning is Pruning.COMPLETE_TOP_POLYTOPE:
            projections = negatives.copy()
            projections[:, d] = 0.0
            current = VPolytope(V)
            if all(contains_point(current, q, tol) for q in projections):
                keep_top = True
            else:
                keep_top = rng.random() < cfg.branch_bias
        else:
            keep_top = rng.random() < cfg.branch_bias

        if keep_top:
            replaced, opposite, kept = negatives, positives, positives
        else:
            projections = negatives.copy()
            projections[:, d] = 0.0
            replaced, opposite, kept = positives, negatives, projections

        candidate_sets = [
            np.array([_plane_point(s, t, d) for t in opposite]) for s in replaced
        ]
        replacements = _select_replacements(candidate_sets, cfg.mua_restarts, rng)
        V = dedup_rows(np.vstack([kept, replacements]), EPS_DUP)
        if step_counts is not None:
            step_counts.append(V.shape[0])
    return VPolytope(V)


def propagate_under(
    p0: VPolytope,
    net,
    cfg: StrategyConfig,
    rng: np.random.Generator,
    cancel: Optional[Callable[[], bool]] = None,
    tol: float = LP_TOL,
) -> VPolytope:
    """Push a polytope through the network, under-approximating every ReLU.

    The final affine layer is not followed by an activation, so the result
    is one output-space polytope contained in the exact reachable set.
    """
    if p0.dim != net.input_dim:
        raise ConfigError(
            f"polytope dim {p0.dim} does not match network input dim {net.input_dim}"
        )
    current = p0
    for layer in net.layers:
        if cancel is not None and cancel():
            raise PropagationCancelled()
        current = affine_map(current, layer.weights, layer.bias)
        if layer.is_relu:
            current = relu_under_approx(current, cfg, rng, tol=tol)
    return current
