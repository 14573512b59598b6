"""Falsification-first verification of feed-forward ReLU networks.

Reachable sets are carried as vertex-represented polytopes.  Each
verification epoch under-approximates one branch of the exact reachable
set and checks it against the property; an exact-split oracle backs the
test suite at desk scale.
"""

from .errors import (
    BudgetExceeded,
    ConfigError,
    DegenerateSegment,
    NumericalError,
    ParseError,
    UrvError,
)
from .geometry import (
    EPS_DUP,
    EPS_SIGN,
    LP_TOL,
    HullMembership,
    PolytopeSet,
    SplitResult,
    VPolytope,
    affine_map,
    contains_point,
    convex_union_contains,
    exact_relu,
    exact_relu_split_d,
    proj_d,
    remove_redundant_vertices,
    segment_hyperplane_intersection,
)
from .network import (
    Activation,
    Layer,
    Network,
    Normalization,
    evaluate,
    evaluate_many,
    normalize,
    parse_network,
    serialize_urvnet,
)
from .properties import (
    And,
    InputRegion,
    Leaf,
    Or,
    PropertySpec,
    acasxu_property,
    input_vertices,
    parse_property,
    point_violates,
    polytope_violates,
    resolve_for_network,
)
from .underapprox import (
    DimOrder,
    Pruning,
    StrategyConfig,
    order_dimensions,
    propagate_under,
    relu_under_approx,
)
from .verifier import (
    EpochArchive,
    ReachEpoch,
    SampleHit,
    UnknownWithConfidence,
    Unsafe,
    Verdict,
    VerifierConfig,
    confidence_level,
    epoch_rng,
    sample_check,
    verify,
)

__version__ = "0.1.0"
