"""Safety-property specifications and violation checks on output polytopes.

A property pairs an input box with a desired output condition, the latter
being a monotone And/Or tree of linear inequalities over the network
outputs.  Built-in generators cover the ten classic ACAS Xu properties;
arbitrary properties load from the "URVPROP v1" text format.

Violation of a condition by a whole polytope is decided by rewriting the
condition's negation into disjunctive normal form and solving one LP
feasibility problem per conjunct over the polytope's convex-combination
weights; a vertex scan serves as the fast path.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import linprog

from . import network as network_mod
from .errors import ConfigError, NumericalError, ParseError
from .geometry import LP_TOL, STRICT_EPS, VPolytope, corner_vertices

MAX_DNF_CONJUNCTS = 512
MAX_BOX_DIM = 20


# ---------------------------------------------------------------------------
# Output conditions


@dataclass(frozen=True)
class Leaf:
    """Halfspace constraint a . y <= c."""

    a: np.ndarray
    c: float

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 1 or a.shape[0] < 1:
            raise ConfigError("leaf coefficient vector must be 1-D and non-empty")
        if not (np.isfinite(a).all() and np.isfinite(self.c)):
            raise ConfigError("leaf coefficients must be finite")
        a = a.copy()
        a.flags.writeable = False
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", float(self.c))


@dataclass(frozen=True)
class And:
    children: Tuple["OutputCondition", ...]

    def __post_init__(self):
        children = tuple(self.children)
        if not children:
            raise ConfigError("And needs at least one child")
        object.__setattr__(self, "children", children)


@dataclass(frozen=True)
class Or:
    children: Tuple["OutputCondition", ...]

    def __post_init__(self):
        children = tuple(self.children)
        if not children:
            raise ConfigError("Or needs at least one child")
        object.__setattr__(self, "children", children)


OutputCondition = Union[Leaf, And, Or]


def condition_dim(cond: OutputCondition) -> int:
    if isinstance(cond, Leaf):
        return cond.a.shape[0]
    return condition_dim(cond.children[0])


def satisfied_many(cond: OutputCondition, ys: np.ndarray, tol: float = LP_TOL) -> np.ndarray:
    """Vectorized truth value of the condition at each row of ys."""
    Y = np.asarray(ys, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(1, -1)
    if isinstance(cond, Leaf):
        if Y.shape[1] != cond.a.shape[0]:
            raise ConfigError(
                f"condition dim {cond.a.shape[0]} does not match output dim {Y.shape[1]}"
            )
        return Y @ cond.a <= cond.c + tol
    flags = [satisfied_many(child, Y, tol) for child in cond.children]
    if isinstance(cond, And):
        return np.logical_and.reduce(flags)
    return np.logical_or.reduce(flags)


def point_violates(y_val, cond: OutputCondition, tol: float = LP_TOL) -> bool:
    """True when the output point fails the desired condition."""
    return not bool(satisfied_many(cond, np.asarray(y_val, dtype=float), tol)[0])


def negation_dnf(
    cond: OutputCondition, max_conjuncts: int = MAX_DNF_CONJUNCTS
) -> List[List[Tuple[np.ndarray, float]]]:
    """DNF of the negated condition: a list of conjuncts of strict a . y > c."""

    def neg(node) -> List[List[Tuple[np.ndarray, float]]]:
        if isinstance(node, Leaf):
            return [[(node.a, node.c)]]
        if isinstance(node, And):
            out = []
            for child in node.children:
                out.extend(neg(child))
                if len(out) > max_conjuncts:
                    raise ConfigError(
                        f"negation DNF exceeded {max_conjuncts} conjuncts"
                    )
            return out
        # Or: conjunction of the children's negations, distributed.
        acc: List[List[Tuple[np.ndarray, float]]] = [[]]
        for child in node.children:
            branches = neg(child)
            acc = [conj + extra for conj in acc for extra in branches]
            if len(acc) > max_conjuncts:
                raise ConfigError(f"negation DNF exceeded {max_conjuncts} conjuncts")
        return acc

    return neg(cond)


def polytope_violates(
    p: VPolytope, cond: OutputCondition, tol: float = LP_TOL
) -> Optional[np.ndarray]:
    """A point of p outside the condition, or None when p satisfies it.

    Vertices are scanned first; otherwise each conjunct of the negated
    condition is posed as an LP over convex-combination weights with a
    strictness guard, so any witness robustly fails the plain point check.
    """
    if p.dim != condition_dim(cond):
        raise ConfigError(
            f"polytope dim {p.dim} does not match condition dim {condition_dim(cond)}"
        )
    V = p.vertices
    flags = satisfied_many(cond, V, tol)
    if not flags.all():
        return V[int(np.argmin(flags))].copy()

    margin = tol + STRICT_EPS
    m = V.shape[0]
    for conjunct in negation_dnf(cond):
        rows = np.array([a @ V.T for a, _ in conjunct])
        bounds_needed = np.array([c + margin for _, c in conjunct])
        # A linear functional attains its max over the polytope at a vertex,
        # so a conjunct whose inequality cannot be met there is infeasible.
        if np.any(rows.max(axis=1) < bounds_needed):
            continue
        if len(conjunct) == 1:
            # Single inequality: the vertex scan above was already complete.
            continue
        res = linprog(
            np.zeros(m),
            A_ub=-rows,
            b_ub=-bounds_needed,
            A_eq=np.ones((1, m)),
            b_eq=[1.0],
            bounds=(0, None),
            method="highs",
        )
        if res.status == 0:
            lam = np.maximum(res.x, 0.0)
            lam = lam / lam.sum()
            return V.T @ lam
        if res.status != 2:
            raise NumericalError(
                f"violation LP failed with status {res.status}: {res.message}"
            )
    return None


def output_minimal(i: int, m: int) -> OutputCondition:
    """Output i has the (non-strictly) smallest score."""
    _check_index(i, m)
    return And(tuple(Leaf(_pair(m, i, j), 0.0) for j in range(m) if j != i))


def output_not_minimal(i: int, m: int) -> OutputCondition:
    """Some other output scores at most as low as output i."""
    _check_index(i, m)
    return Or(tuple(Leaf(_pair(m, j, i), 0.0) for j in range(m) if j != i))


def output_maximal(i: int, m: int) -> OutputCondition:
    _check_index(i, m)
    return And(tuple(Leaf(_pair(m, j, i), 0.0) for j in range(m) if j != i))


def output_not_maximal(i: int, m: int) -> OutputCondition:
    _check_index(i, m)
    return Or(tuple(Leaf(_pair(m, i, j), 0.0) for j in range(m) if j != i))


def _check_index(i: int, m: int):
    if m < 2:
        raise ConfigError("score comparisons need at least two outputs")
    if not 0 <= i < m:
        raise ConfigError(f"output index {i} out of range for {m} outputs")


def _pair(m: int, plus: int, minus: int) -> np.ndarray:
    a = np.zeros(m)
    a[plus] = 1.0
    a[minus] = -1.0
    return a


# ---------------------------------------------------------------------------
# Input regions and property specs


@dataclass(frozen=True)
class InputRegion:
    """Axis-aligned box; bounds may be infinite until resolved against a
    network's normalization statistics."""

    lower: np.ndarray
    upper: np.ndarray
    raw_units: bool = True

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ConfigError("box bounds must be 1-D vectors of equal length")
        if lo.shape[0] > MAX_BOX_DIM:
            raise ConfigError(
                f"box dimension {lo.shape[0]} exceeds limit {MAX_BOX_DIM}"
            )
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise ConfigError("box bounds must not be NaN")
        if np.any(lo > hi):
            raise ConfigError("box lower bounds exceed upper bounds")
        lo = lo.copy()
        hi = hi.copy()
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def input_vertices(region: InputRegion) -> VPolytope:
    """Corner polytope of the box; bounds must be finite."""
    if not (np.isfinite(region.lower).all() and np.isfinite(region.upper).all()):
        raise ConfigError(
            "box has unbounded sides; resolve it against a network with "
            "normalization statistics first"
        )
    return corner_vertices(region.lower, region.upper)


@dataclass(frozen=True)
class NetworkSelector:
    """Which members of an indexed network family a property applies to."""

    x_min: int = 1
    x_max: int = 5
    y_min: int = 1
    y_max: int = 9

    def applies(self, x: int, y: int) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def describe(self) -> str:
        if (self.x_min, self.x_max, self.y_min, self.y_max) == (1, 5, 1, 9):
            return "all networks"
        return f"networks x in [{self.x_min},{self.x_max}], y in [{self.y_min},{self.y_max}]"


@dataclass(frozen=True)
class PropertySpec:
    """Named property: input box(es), desired output condition, applicability.

    Boxes and condition thresholds are in raw units; they are converted
    through a network's normalization statistics when present (raw equals
    network units otherwise).
    """

    name: str
    inputs: Tuple[InputRegion, ...]
    output: OutputCondition
    applies_to: NetworkSelector = field(default_factory=NetworkSelector)

    def __post_init__(self):
        inputs = tuple(self.inputs)
        if not inputs:
            raise ConfigError("property needs at least one input region")
        dim = inputs[0].dim
        if any(r.dim != dim for r in inputs):
            raise ConfigError("input regions disagree on dimension")
        object.__setattr__(self, "inputs", inputs)

    @property
    def input(self) -> InputRegion:
        if len(self.inputs) != 1:
            raise ConfigError(f"property {self.name} has {len(self.inputs)} input regions")
        return self.inputs[0]


@dataclass(frozen=True)
class ResolvedProperty:
    """Property translated into a specific network's coordinates."""

    name: str
    regions: Tuple[Tuple[np.ndarray, np.ndarray], ...]  # finite (lower, upper)
    polytopes: Tuple[VPolytope, ...]
    condition: OutputCondition


def _convert_condition(cond: OutputCondition, mean: float, rng: float) -> OutputCondition:
    if isinstance(cond, Leaf):
        return Leaf(cond.a, (cond.c - mean * cond.a.sum()) / rng)
    children = tuple(_convert_condition(c, mean, rng) for c in cond.children)
    return And(children) if isinstance(cond, And) else Or(children)


def resolve_for_network(prop: PropertySpec, net: network_mod.Network) -> ResolvedProperty:
    """Clamp, normalize, and enumerate the property against a network.

    Raw-unit boxes are clamped to the network's training bounds and scaled;
    condition thresholds move into network output units.  Without
    normalization statistics the property must already be finite.
    """
    if prop.inputs[0].dim != net.input_dim:
        raise ConfigError(
            f"property input dim {prop.inputs[0].dim} does not match network "
            f"input dim {net.input_dim}"
        )
    if condition_dim(prop.output) != net.output_dim:
        raise ConfigError(
            f"property output dim {condition_dim(prop.output)} does not match "
            f"network output dim {net.output_dim}"
        )
    norm = net.normalization
    regions = []
    for region in prop.inputs:
        if region.raw_units and norm is not None:
            lo = network_mod.normalize(net, np.clip(region.lower, norm.input_min, norm.input_max)).values
            hi = network_mod.normalize(net, np.clip(region.upper, norm.input_min, norm.input_max)).values
        else:
            lo, hi = region.lower, region.upper
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ConfigError(
                f"property {prop.name} has unbounded sides and the network "
                "carries no normalization statistics to close them"
            )
        regions.append((lo, hi))
    polytopes = tuple(corner_vertices(lo, hi) for lo, hi in regions)
    cond = prop.output
    if norm is not None:
        cond = _convert_condition(cond, norm.output_mean, norm.output_range)
    return ResolvedProperty(prop.name, tuple(regions), polytopes, cond)


# ---------------------------------------------------------------------------
# ACAS Xu built-ins

_INF = math.inf
_PI = math.pi
_ACAS_OUT = 5  # COC, weak left, weak right, strong left, strong right


def _acas_table():
    # Boxes over (distance, relative heading, intruder heading, own speed,
    # intruder speed); None bounds stay open and close against the network's
    # normalization block.  "pinned low" entries fix a coordinate at its
    # training minimum.
    pin = (-_INF, -_INF)
    full = (-_INF, _INF)
    return {
        1: (
            [(55948.0, _INF), full, full, (1145.0, _INF), (-_INF, 60.0)],
            Leaf(np.array([1.0, 0, 0, 0, 0]), 1500.0),
            NetworkSelector(),
        ),
        2: (
            [(55948.0, _INF), full, full, (1145.0, _INF), (-_INF, 60.0)],
            output_not_maximal(0, _ACAS_OUT),
            NetworkSelector(x_min=2),
        ),
        3: (
            [(1500.0, 1800.0), (-0.06, 0.06), (3.10, _INF), (980.0, _INF), (960.0, _INF)],
            output_not_minimal(0, _ACAS_OUT),
            NetworkSelector(x_min=1, x_max=1, y_min=7),
        ),
        4: (
            [(1500.0, 1800.0), (-0.06, 0.06), (0.0, 0.0), (1000.0, _INF), (700.0, 800.0)],
            output_not_minimal(0, _ACAS_OUT),
            NetworkSelector(x_min=1, x_max=1, y_min=7),
        ),
        5: (
            [(250.0, 500.0), (0.2, 0.4), pin, (100.0, 400.0), (0.0, 400.0)],
            output_minimal(4, _ACAS_OUT),
            NetworkSelector(x_min=1, x_max=1, y_min=1, y_max=1),
        ),
        6: (
            [
                [(12000.0, 62000.0), (0.7, _PI), pin, (100.0, 1200.0), (0.0, 1200.0)],
                [(12000.0, 62000.0), (-_PI, -0.7), pin, (100.0, 1200.0), (0.0, 1200.0)],
            ],
            output_minimal(0, _ACAS_OUT),
            NetworkSelector(x_min=1, x_max=1, y_min=1, y_max=1),
        ),
        7: (
            [(0.0, 60760.0), (-_PI, _PI), (-_PI, _PI), (100.0, 1200.0), (0.0, 1200.0)],
            And((output_not_minimal(3, _ACAS_OUT), output_not_minimal(4, _ACAS_OUT))),
            NetworkSelector(x_min=1, x_max=1, y_min=9, y_max=9),
        ),
        8: (
            [(0.0, 60760.0), (-_PI, -0.75 * _PI), (-0.1, 0.1), (600.0, 1200.0), (600.0, 1200.0)],
            Or((output_minimal(1, _ACAS_OUT), output_minimal(0, _ACAS_OUT))),
            NetworkSelector(x_min=2, x_max=2, y_min=9, y_max=9),
        ),
        9: (
            [(2000.0, 7000.0), (-0.4, -0.14), pin, (100.0, 150.0), (0.0, 140.0)],
            output_minimal(3, _ACAS_OUT),
            NetworkSelector(x_min=3, x_max=3, y_min=3, y_max=3),
        ),
        10: (
            [(36000.0, 60760.0), (0.7, _PI), pin, (900.0, 1200.0), (600.0, 1200.0)],
            output_minimal(0, _ACAS_OUT),
            NetworkSelector(x_min=4, x_max=4, y_min=5, y_max=5),
        ),
    }


def acasxu_property(prop_id: int) -> PropertySpec:
    """One of the ten classic ACAS Xu safety properties, in raw units."""
    table = _acas_table()
    if prop_id not in table:
        raise ConfigError(f"ACAS property id must be in 1..10, got {prop_id}")
    boxes, cond, selector = table[prop_id]
    if boxes and isinstance(boxes[0], tuple):
        boxes = [boxes]
    regions = tuple(
        InputRegion(
            np.array([b[0] for b in box]), np.array([b[1] for b in box]), raw_units=True
        )
        for box in boxes
    )
    return PropertySpec(f"phi{prop_id}", regions, cond, selector)


# ---------------------------------------------------------------------------
# URVPROP v1 file format


def _tokenize_sexpr(text: str, lineno: int) -> List[str]:
    tokens = text.replace("(", " ( ").replace(")", " ) ").split()
    if not tokens:
        raise ParseError("empty condition expression", lineno)
    return tokens


def _read_sexpr(tokens: List[str], lineno: int):
    if not tokens:
        raise ParseError("unbalanced condition expression", lineno)
    tok = tokens.pop(0)
    if tok == "(":
        node = []
        while tokens and tokens[0] != ")":
            node.append(_read_sexpr(tokens, lineno))
        if not tokens:
            raise ParseError("missing ')' in condition expression", lineno)
        tokens.pop(0)
        return node
    if tok == ")":
        raise ParseError("unexpected ')' in condition expression", lineno)
    return tok


def _ast_from_sexpr(node, lineno: int):
    if not isinstance(node, list) or not node:
        raise ParseError(f"expected an operator list, got {node!r}", lineno)
    op = node[0]
    if op == "le":
        if len(node) < 3:
            raise ParseError("(le ...) needs coefficients and a constant", lineno)
        try:
            nums = [float(t) for t in node[1:]]
        except (TypeError, ValueError):
            raise ParseError("(le ...) arguments must be numbers", lineno) from None
        return ("le", nums[:-1], nums[-1])
    if op in ("and", "or"):
        if len(node) < 2:
            raise ParseError(f"({op} ...) needs at least one child", lineno)
        return (op, [_ast_from_sexpr(child, lineno) for child in node[1:]])
    if op in ("min", "notmin", "max", "notmax"):
        if len(node) != 2:
            raise ParseError(f"({op} i) takes exactly one index", lineno)
        try:
            idx = int(node[1])
        except (TypeError, ValueError):
            raise ParseError(f"({op} i) index must be an integer", lineno) from None
        return (op, idx)
    raise ParseError(f"unknown condition operator {op!r}", lineno)


def _ast_output_dim(ast) -> Optional[int]:
    op = ast[0]
    if op == "le":
        return len(ast[1])
    if op in ("and", "or"):
        dims = {d for child in ast[1] if (d := _ast_output_dim(child)) is not None}
        if len(dims) > 1:
            raise ConfigError("condition leaves disagree on output dimension")
        return dims.pop() if dims else None
    return None


def _ast_expand(ast, m: int) -> OutputCondition:
    op = ast[0]
    if op == "le":
        if len(ast[1]) != m:
            raise ConfigError(
                f"(le ...) has {len(ast[1])} coefficients but output dim is {m}"
            )
        return Leaf(np.array(ast[1]), ast[2])
    if op == "and":
        return And(tuple(_ast_expand(child, m) for child in ast[1]))
    if op == "or":
        return Or(tuple(_ast_expand(child, m) for child in ast[1]))
    if op == "min":
        return output_minimal(ast[1], m)
    if op == "notmin":
        return output_not_minimal(ast[1], m)
    if op == "max":
        return output_maximal(ast[1], m)
    return output_not_maximal(ast[1], m)


@dataclass(frozen=True)
class PropertyFile:
    """Parsed URVPROP file, not yet bound to an output dimension."""

    lower: np.ndarray
    upper: np.ndarray
    cond_ast: tuple

    def to_spec(self, output_dim: Optional[int] = None, name: str = "property") -> PropertySpec:
        inferred = _ast_output_dim(self.cond_ast)
        if inferred is None and output_dim is None:
            raise ConfigError(
                "condition has no (le ...) leaves; an output dimension is required"
            )
        if inferred is not None and output_dim is not None and inferred != output_dim:
            raise ConfigError(
                f"condition leaves are {inferred}-dimensional but the network "
                f"outputs {output_dim} values"
            )
        m = output_dim if output_dim is not None else inferred
        cond = _ast_expand(self.cond_ast, m)
        region = InputRegion(self.lower, self.upper, raw_units=True)
        return PropertySpec(name, (region,), cond)


def parse_property(data) -> PropertyFile:
    """Parse URVPROP v1 text: header, one `box` line, one `cond` line."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    lines = [
        (i + 1, l.strip())
        for i, l in enumerate(text.splitlines())
        if l.strip() and not l.strip().startswith("#")
    ]
    if not lines:
        raise ParseError("empty property file", 1)
    lineno, header = lines[0]
    if header != "urvprop 1":
        raise ParseError(f"expected 'urvprop 1' header, got {header!r}", lineno)
    if len(lines) != 3:
        raise ParseError("expected exactly a header, a box line, and a cond line", lineno)

    lineno, box_line = lines[1]
    name, _, rest = box_line.partition(" ")
    if name != "box" or not rest.strip():
        raise ParseError("expected 'box lo:hi lo:hi ...'", lineno)
    lower, upper = [], []
    for pair in rest.split():
        lo_s, sep, hi_s = pair.partition(":")
        if not sep:
            raise ParseError(f"box entry {pair!r} is not of the form lo:hi", lineno)
        try:
            lo, hi = float(lo_s), float(hi_s)
        except ValueError:
            raise ParseError(f"box entry {pair!r} is not numeric", lineno) from None
        if math.isnan(lo) or math.isnan(hi):
            raise ParseError("box bounds must not be NaN", lineno)
        if lo > hi:
            raise ParseError(f"box entry {pair!r} has lower > upper", lineno)
        lower.append(lo)
        upper.append(hi)

    lineno, cond_line = lines[2]
    name, _, rest = cond_line.partition(" ")
    if name != "cond" or not rest.strip():
        raise ParseError("expected 'cond (...)'", lineno)
    tokens = _tokenize_sexpr(rest, lineno)
    expr = _read_sexpr(tokens, lineno)
    if tokens:
        raise ParseError("trailing tokens after condition expression", lineno)
    ast = _ast_from_sexpr(expr, lineno)
    try:
        return PropertyFile(np.array(lower), np.array(upper), ast)
    except ConfigError as exc:
        raise ParseError(str(exc), lineno) from exc


def serialize_property(prop: PropertySpec) -> str:
    """URVPROP v1 text for a single-box property with expanded conditions."""
    region = prop.input
    pairs = " ".join(
        f"{float(lo)!r}:{float(hi)!r}" for lo, hi in zip(region.lower, region.upper)
    )

    def render(cond) -> str:
        if isinstance(cond, Leaf):
            nums = " ".join(repr(float(v)) for v in cond.a)
            return f"(le {nums} {cond.c!r})"
        op = "and" if isinstance(cond, And) else "or"
        return f"({op} " + " ".join(render(c) for c in cond.children) + ")"

    return f"urvprop 1\nbox {pairs}\ncond {render(prop.output)}\n"
