"""Shared generators and independent oracles for the test suite.

Oracles here deliberately avoid the library's decision paths: membership
uses a plain equality-form LP, network evaluation a straight-line Python
interpreter, and ReLU preimages a direct feasibility encoding.
"""

import numpy as np
from scipy.optimize import linprog

from urv.geometry import VPolytope, affine_map, exact_relu
from urv.network import Activation, Layer, Network


def random_polytope(rng, dim, n_vertices, scale=1.5):
    return VPolytope.from_points(rng.normal(size=(n_vertices, dim)) * scale)


def sample_hull(rng, vertices, n):
    """Points drawn from the convex hull via Dirichlet weights."""
    w = rng.dirichlet(np.ones(len(vertices)), size=n)
    return w @ vertices


def lp_in_hull(vertices, x, tol=1e-6):
    """Equality-form LP membership, independent of the library's encoding."""
    vertices = np.asarray(vertices, dtype=float)
    m = vertices.shape[0]
    res = linprog(
        np.zeros(m),
        A_ub=np.vstack([vertices.T, -vertices.T]),
        b_ub=np.concatenate([x + tol, -np.asarray(x) + tol]),
        A_eq=np.ones((1, m)),
        b_eq=[1.0],
        bounds=(0, None),
        method="highs",
    )
    if res.status not in (0, 2):
        raise RuntimeError(f"oracle LP failed: {res.message}")
    return res.status == 0


def relu_preimage_exists(p_vertices, y, tol=1e-6):
    """Feasibility of ReLU(x) = y over x in conv(p_vertices), one LP."""
    V = np.asarray(p_vertices, dtype=float)
    m, d = V.shape
    y = np.asarray(y, dtype=float)
    fixed = y > tol
    a_eq = [np.ones(m)]
    b_eq = [1.0]
    for i in np.flatnonzero(fixed):
        a_eq.append(V[:, i])
        b_eq.append(y[i])
    a_ub = []
    b_ub = []
    for i in np.flatnonzero(~fixed):
        a_ub.append(V[:, i])
        b_ub.append(tol)
    res = linprog(
        np.zeros(m),
        A_ub=np.array(a_ub) if a_ub else None,
        b_ub=np.array(b_ub) if b_ub else None,
        A_eq=np.array(a_eq),
        b_eq=np.array(b_eq),
        bounds=(0, None),
        method="highs",
    )
    if res.status not in (0, 2):
        raise RuntimeError(f"preimage LP failed: {res.message}")
    return res.status == 0


def make_net(*weight_bias, norm=None):
    """Network from (W, b) pairs; all hidden layers ReLU, final identity."""
    layers = []
    for i, (W, b) in enumerate(weight_bias):
        act = Activation.IDENTITY if i == len(weight_bias) - 1 else Activation.RELU
        layers.append(Layer(np.asarray(W, dtype=float), np.asarray(b, dtype=float), act))
    return Network(tuple(layers), norm)


def random_tiny_net(rng, dims, scale=1.0):
    """Random fully-connected net over the given layer sizes."""
    pairs = []
    for n_in, n_out in zip(dims, dims[1:]):
        pairs.append((rng.normal(size=(n_out, n_in)) * scale, rng.normal(size=n_out) * 0.5))
    return make_net(*pairs)


def straight_line_eval(net, x):
    """Loop-and-scalar network interpreter (no numpy vector paths)."""
    h = [float(v) for v in x]
    for layer in net.layers:
        W = layer.weights
        b = layer.bias
        z = []
        for i in range(W.shape[0]):
            acc = float(b[i])
            for j in range(W.shape[1]):
                acc += float(W[i, j]) * h[j]
            z.append(acc)
        if layer.is_relu:
            z = [v if v > 0.0 else 0.0 for v in z]
        h = z
    return np.array(h)


def exact_propagate(net, p):
    """Exact reachable set of a tiny net as a list of polytopes."""
    members = [p]
    for layer in net.layers:
        members = [affine_map(q, layer.weights, layer.bias) for q in members]
        if layer.is_relu:
            nxt = []
            for q in members:
                nxt.extend(exact_relu(q).members)
            members = nxt
    return members


def in_union(members, x, tol=1e-6):
    return any(lp_in_hull(m.vertices, x, tol) for m in members)


def to_nnet_text(net):
    """Serialize a network (with normalization) in the NNet text format."""
    lines = ["// synthetic benchmark-scale network"]
    sizes = [net.input_dim] + [l.weights.shape[0] for l in net.layers]
    lines.append(f"{len(net.layers)},{net.input_dim},{net.output_dim},{max(sizes)},")
    lines.append(",".join(str(s) for s in sizes) + ",")
    lines.append("0,")
    n = net.normalization
    lines.append(",".join(repr(float(v)) for v in n.input_min) + ",")
    lines.append(",".join(repr(float(v)) for v in n.input_max) + ",")
    lines.append(",".join(repr(float(v)) for v in list(n.input_mean) + [n.output_mean]) + ",")
    lines.append(",".join(repr(float(v)) for v in list(n.input_range) + [n.output_range]) + ",")
    for layer in net.layers:
        for row in layer.weights:
            lines.append(",".join(repr(float(v)) for v in row) + ",")
        for v in layer.bias:
            lines.append(repr(float(v)) + ",")
    return "\n".join(lines) + "\n"


ACAS_NORM_KW = dict(
    input_min=np.array([0.0, -3.141593, -3.141593, 100.0, 0.0]),
    input_max=np.array([60760.0, 3.141593, 3.141593, 1200.0, 1200.0]),
    input_mean=np.array([19791.091, 0.0, 0.0, 650.0, 600.0]),
    input_range=np.array([60261.0, 6.28318530718, 6.28318530718, 1100.0, 1200.0]),
    output_mean=7.5188840201005975,
    output_range=373.94992,
)
