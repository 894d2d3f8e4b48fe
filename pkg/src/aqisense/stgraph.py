"""Multi-layer spatio-temporal graph inference of AQI distributions.

The monitored volume is a grid of cubes; each (cube, timestamp) pair is a
graph node.  Nodes with sensor data are labeled and clamped to a point mass;
every other node carries a probability mass function over binned AQI values
that is driven to the harmonic fixed point, where each unlabeled node's
distribution is the weight-averaged distribution of its neighbours.

Edge weights come from per-feature linear correlation terms combined through
exp(-sum_m theta_m^2 * Q_m); the per-feature exponents theta are learned by
entropy descent so that informative features dominate the propagation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from .errors import FormatError, InputError, NumericError, StateError
from .scale import AQI_MAX, AqiScale

FEATURE_NAMES = (
    "x",
    "y",
    "z",
    "timestamp",
    "weather",
    "wind_speed",
    "wind_direction",
    "humidity",
    "temperature",
)
NUM_FEATURES = len(FEATURE_NAMES)
_WEATHER = FEATURE_NAMES.index("weather")
_WIND_DIR = FEATURE_NAMES.index("wind_direction")

LOG2 = np.log(2.0)
_EXP_CAP = 700.0  # keeps exp(-x) positive in float64


@dataclass(frozen=True)
class Cube:
    """Atomic monitoring cell addressed by grid index; sizes in meters."""

    index: tuple
    size: tuple = (20.0, 20.0, 10.0)

    def __post_init__(self):
        if len(self.index) != 3 or any(i < 0 for i in self.index):
            raise InputError(f"cube index must be 3 nonnegative ints, got {self.index}")
        if any(s <= 0 for s in self.size):
            raise InputError(f"cube size must be positive, got {self.size}")

    @property
    def center(self) -> tuple:
        return tuple((i + 0.5) * s for i, s in zip(self.index, self.size))


@dataclass(frozen=True)
class NodeFeatures:
    """The nine per-node covariates driving edge weights."""

    x: float
    y: float
    z: float
    timestamp: float
    weather: int
    wind_speed: float
    wind_direction: float
    humidity: float
    temperature: float

    def __post_init__(self):
        if not (0.0 <= self.humidity <= 100.0):
            raise InputError(f"humidity {self.humidity} outside [0, 100]")
        if not (0.0 <= self.wind_direction < 360.0):
            raise InputError(f"wind direction {self.wind_direction} outside [0, 360)")

    def vector(self) -> np.ndarray:
        return np.array(
            [
                self.x,
                self.y,
                self.z,
                self.timestamp,
                float(self.weather),
                self.wind_speed,
                self.wind_direction,
                self.humidity,
                self.temperature,
            ]
        )


class AqiBins:
    """Discretised AQI support: bin centers 0, width, 2*width, ..., AQI_MAX."""

    def __init__(self, width: float = 10.0):
        if width <= 0 or AQI_MAX % width != 0:
            raise InputError(f"bin width {width} must positively divide {AQI_MAX}")
        self.width = float(width)
        self.centers = np.arange(0.0, AQI_MAX + width / 2, width)

    def __len__(self):
        return len(self.centers)

    def index_of(self, value: float) -> int:
        if not (0.0 <= value <= AQI_MAX):
            raise InputError(f"AQI value {value} outside [0, {AQI_MAX}]")
        return int(np.clip(round(value / self.width), 0, len(self.centers) - 1))

    def point_mass(self, value: float) -> np.ndarray:
        mass = np.zeros(len(self.centers))
        mass[self.index_of(value)] = 1.0
        return mass


@dataclass(frozen=True)
class AqiDistribution:
    """PMF over binned AQI values."""

    support: np.ndarray
    mass: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.float64)
        m = np.asarray(self.mass, dtype=np.float64)
        if s.shape != m.shape or s.ndim != 1:
            raise InputError("support and mass must be 1D arrays of equal length")
        if (m < -1e-12).any() or abs(m.sum() - 1.0) > 1e-9:
            raise InputError("mass must be a PMF (nonnegative, sums to 1 within 1e-9)")
        object.__setattr__(self, "support", s)
        object.__setattr__(self, "mass", np.maximum(m, 0.0))

    def expectation(self) -> float:
        return float((self.support * self.mass).sum())


def hard_label(dist: AqiDistribution) -> float:
    """Collapse a soft label to its expectation over bin centers."""
    return dist.expectation()


def apply_scale_conditioning(dist: AqiDistribution, scale: AqiScale) -> AqiDistribution:
    """Restrict mass to [x_min, x_max] and renormalise; uniform fallback if empty."""
    mask = (dist.support >= scale.x_min) & (dist.support <= scale.x_max)
    if not mask.any():
        # no bin center inside the interval: collapse to the nearest center
        nearest = int(np.argmin(np.abs(dist.support - scale.midpoint)))
        mass = np.zeros_like(dist.mass)
        mass[nearest] = 1.0
        return AqiDistribution(dist.support, mass)
    kept = dist.mass * mask
    total = kept.sum()
    if total <= 0.0:
        kept = mask / mask.sum()
    else:
        kept = kept / total
    return AqiDistribution(dist.support, kept)


def _condition_mass(mass: np.ndarray, support: np.ndarray, scale: AqiScale) -> np.ndarray:
    return apply_scale_conditioning(AqiDistribution(support, mass), scale).mass


# ---------------------------------------------------------------------------
# feature distances and correlation terms
# ---------------------------------------------------------------------------


def feature_distance(f1: NodeFeatures, f2: NodeFeatures, m: int) -> float:
    """Per-feature dissimilarity: L1 for numeric, 0/1 for weather, circular for wind."""
    a, b = f1.vector()[m], f2.vector()[m]
    if m == _WEATHER:
        return 0.0 if a == b else 1.0
    if m == _WIND_DIR:
        d = abs(a - b) % 360.0
        return min(d, 360.0 - d) / 180.0
    return abs(a - b)


def correlation(f1: NodeFeatures, f2: NodeFeatures, m: int, alpha: float, beta: float) -> float:
    """Linear correlation term Q = alpha + beta * distance for feature m."""
    return alpha + beta * feature_distance(f1, f2, m)


def edge_weight(q_values, theta) -> float:
    """Combine per-feature correlation terms into one weight in (0, 1]."""
    q = np.asarray(q_values, dtype=np.float64)
    th = np.asarray(theta, dtype=np.float64)
    if not np.isfinite(th).all():
        raise InputError("theta must be finite")
    w = float(np.exp(-min((th**2 * q).sum(), _EXP_CAP)))
    if (q >= 0).all():
        assert 0.0 < w <= 1.0
    return w


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    alpha: np.ndarray
    beta: np.ndarray
    fallback: np.ndarray
    n_pairs: int


@dataclass
class ThetaResult:
    theta: np.ndarray
    entropy_trace: list
    iterations: int


@dataclass
class InferredMap:
    """Hard-labeled AQI map for one layer plus the persisted soft labels."""

    layer: int
    values: dict
    provenance: dict
    soft: dict


class StGraph:
    """Multi-layer spatio-temporal graph over (cube, timestamp) nodes."""

    def __init__(self, cubes, n_layers, bins: AqiBins, radius: float):
        self.cubes = list(cubes)
        self.n_layers = n_layers
        self.bins = bins
        self.radius = radius
        n = len(self.cubes) * n_layers
        self.cube_keys = [c.index for c in self.cubes]
        self.layer = np.repeat(np.arange(n_layers), len(self.cubes))
        self.labeled = np.zeros(n, dtype=bool)
        self.label_value = np.full(n, np.nan)
        self.provenance = [None] * n
        self.feats = np.zeros((n, NUM_FEATURES))
        self.edges = np.zeros((0, 2), dtype=np.int64)
        self.dist = np.zeros((0, NUM_FEATURES))
        self.alpha = np.zeros(NUM_FEATURES)
        self.beta = np.ones(NUM_FEATURES)
        self.theta = np.ones(NUM_FEATURES)
        self.scales = [None] * n
        self.weights = None
        self.P = None
        self._norm_lo = None
        self._norm_span = None

    # node ids enumerate layer-major: id = layer * n_cubes + cube_pos
    @property
    def n_cubes(self) -> int:
        return len(self.cubes)

    @property
    def n_nodes(self) -> int:
        return self.n_cubes * self.n_layers

    def node_id(self, cube_key, layer: int) -> int:
        return layer * self.n_cubes + self.cube_keys.index(cube_key)

    def unlabeled_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.labeled)

    def _normalize(self, feats: np.ndarray) -> np.ndarray:
        # numeric features min-max scaled to [0, 1]; weather/wind kept raw and
        # handled by their own distance rules
        out = feats.copy()
        lo = self._norm_lo
        span = self._norm_span
        for m in range(NUM_FEATURES):
            if m in (_WEATHER, _WIND_DIR):
                continue
            out[:, m] = (feats[:, m] - lo[m]) / span[m] if span[m] > 0 else 0.0
        return out

    def pair_distances(self, ids_a: np.ndarray, ids_b: np.ndarray) -> np.ndarray:
        """(len, M) per-feature distances between node id pairs."""
        fa = self._norm_feats[ids_a]
        fb = self._norm_feats[ids_b]
        d = np.abs(fa - fb)
        d[:, _WEATHER] = (self.feats[ids_a, _WEATHER] != self.feats[ids_b, _WEATHER]).astype(float)
        wd = np.abs(self.feats[ids_a, _WIND_DIR] - self.feats[ids_b, _WIND_DIR]) % 360.0
        d[:, _WIND_DIR] = np.minimum(wd, 360.0 - wd) / 180.0
        return d

    def compute_weights(self) -> np.ndarray:
        q = self.alpha[None, :] + self.beta[None, :] * self.dist
        q = np.maximum(q, 0.0)  # keeps weights in (0, 1] even for negative intercepts
        expo = q @ (self.theta**2)
        self.weights = np.exp(-np.minimum(expo, _EXP_CAP))
        return self.weights


def build_graph(cubes, layers, features, radius: float, bins: AqiBins | None = None) -> StGraph:
    """Assemble nodes, labels and the three edge families.

    `layers` is a list (oldest first) of {cube index: aqi or (aqi, provenance)}
    measurement maps; `features` is a callable (cube, layer) -> NodeFeatures or
    a mapping keyed by (cube index, layer).
    """
    cubes = list(cubes)
    if len(layers) < 1:
        raise InputError("need at least one layer")
    if radius <= 0:
        raise InputError(f"radius {radius} must be positive")
    graph = StGraph(cubes, len(layers), bins or AqiBins(), radius)

    if callable(features):
        feat_of = features
    else:
        feat_of = lambda cube, t: features[(cube.index, t)]

    n_c = len(cubes)
    for t, measured in enumerate(layers):
        for ci, cube in enumerate(cubes):
            nid = t * n_c + ci
            graph.feats[nid] = feat_of(cube, t).vector()
            if cube.index in measured:
                entry = measured[cube.index]
                value, prov = entry if isinstance(entry, tuple) else (entry, "measured")
                if not (0.0 <= value <= AQI_MAX):
                    raise InputError(f"measured AQI {value} outside [0, {AQI_MAX}]")
                graph.labeled[nid] = True
                graph.label_value[nid] = value
                graph.provenance[nid] = prov
    if not graph.labeled.any():
        raise StateError("graph has no labeled nodes; inference is undefined")

    lo = graph.feats.min(axis=0)
    hi = graph.feats.max(axis=0)
    graph._norm_lo = lo
    graph._norm_span = hi - lo
    graph._norm_feats = graph._normalize(graph.feats)

    centers = np.array([c.center for c in cubes])
    spatial_pairs = sorted(cKDTree(centers).query_pairs(radius)) if n_c > 1 else []

    edges = set()
    for t in range(len(layers)):
        base = t * n_c
        ids = np.arange(base, base + n_c)
        lab = ids[graph.labeled[ids]]
        unlab = ids[~graph.labeled[ids]]
        # rule 1: every unlabeled node to every labeled node in the layer
        for u in unlab:
            for l in lab:
                edges.add((min(u, l), max(u, l)))
        # rule 2: unlabeled nodes to spatial neighbours within the radius
        for a, b in spatial_pairs:
            na, nb = base + a, base + b
            if not (graph.labeled[na] and graph.labeled[nb]):
                edges.add((na, nb))
        # rule 3: same cube, adjacent timestamps
        if t + 1 < len(layers):
            for ci in range(n_c):
                na, nb = base + ci, base + n_c + ci
                if not (graph.labeled[na] and graph.labeled[nb]):
                    edges.add((na, nb))

    graph.edges = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    if len(graph.edges):
        graph.dist = graph.pair_distances(graph.edges[:, 0], graph.edges[:, 1])
    return graph


def fit_linear(x: np.ndarray, y: np.ndarray):
    """Least-squares line fit; returns (alpha, beta, ok).

    ok is False when there are fewer than 2 points or the predictor is
    constant, in which case the caller should fall back to defaults.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 2:
        return 0.0, 1.0, False
    var = ((x - x.mean()) ** 2).sum()
    if var <= 1e-12:
        return 0.0, 1.0, False
    beta = ((x - x.mean()) * (y - y.mean())).sum() / var
    return float(y.mean() - beta * x.mean()), float(beta), True


def fit_correlation_params(graph: StGraph, max_pairs: int = 200_000) -> FitResult:
    """Least-squares fit of scaled label differences against feature distances.

    The additive model |aqi_i - aqi_j| ~ sum_m (alpha_m + beta_m * d_m) is
    fitted jointly over all labeled node pairs, which keeps correlated
    distance columns (the coordinates in particular) from masking each other
    the way independent marginal fits do.  Label differences are scaled by
    their mean so the correlation terms, and hence the weight exponents, are
    of order one whatever the field's dynamic range.  Degenerate features
    (constant distance) or fewer than 2 pairs fall back to alpha=0, beta=1.
    """
    lab = np.flatnonzero(graph.labeled)
    alpha = np.zeros(NUM_FEATURES)
    beta = np.ones(NUM_FEATURES)
    fallback = np.ones(NUM_FEATURES, dtype=bool)
    ia, ib = np.triu_indices(len(lab), k=1)
    if len(ia) > max_pairs:
        keep = np.random.default_rng(0).choice(len(ia), size=max_pairs, replace=False)
        keep.sort()
        ia, ib = ia[keep], ib[keep]
    n_pairs = len(ia)
    if n_pairs >= 2:
        diffs = np.abs(graph.label_value[lab[ia]] - graph.label_value[lab[ib]])
        scale = diffs.mean() if diffs.mean() > 0 else AQI_MAX
        y = diffs / scale
        dists = graph.pair_distances(lab[ia], lab[ib])
        active = [m for m in range(NUM_FEATURES) if dists[:, m].std() > 1e-9]
        if active:
            design = np.column_stack([np.ones(n_pairs)] + [dists[:, m] for m in active])
            ridge = 1e-9 * np.eye(design.shape[1])
            ridge[0, 0] = 0.0
            coef = np.linalg.solve(design.T @ design + ridge, design.T @ y)
            for pos, m in enumerate(active, start=1):
                alpha[m] = coef[0] / len(active)
                beta[m] = coef[pos]
                fallback[m] = False
    graph.alpha = alpha
    graph.beta = beta
    graph.weights = None
    return FitResult(alpha, beta, fallback, n_pairs)


# ---------------------------------------------------------------------------
# harmonic solve
# ---------------------------------------------------------------------------


def harmonic_solve(
    graph: StGraph, tol: float = 1e-8, max_sweeps: int = 10_000, warm_start: bool = True
) -> np.ndarray:
    """Drive unlabeled distributions to the harmonic fixed point by Jacobi sweeps.

    Labeled nodes stay clamped at their point masses; each sweep replaces every
    unlabeled row with the weight-averaged neighbouring rows, until the largest
    per-bin change falls below `tol`.  Rows are renormalised on exit.
    """
    if not graph.labeled.any():
        raise StateError("graph has no labeled nodes")
    n, nb = graph.n_nodes, len(graph.bins)
    if graph.weights is None:
        graph.compute_weights()

    p = np.zeros((n, nb))
    for nid in np.flatnonzero(graph.labeled):
        p[nid] = graph.bins.point_mass(graph.label_value[nid])
    unlab = graph.unlabeled_ids()
    if len(unlab) == 0:
        graph.P = p
        return p

    if warm_start and graph.P is not None and graph.P.shape == p.shape:
        p[unlab] = graph.P[unlab]
    else:
        p[unlab] = 1.0 / nb

    u, v = graph.edges[:, 0], graph.edges[:, 1]
    w = graph.weights
    mat = csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
        shape=(n, n),
    )
    w_unlab = mat[unlab]
    degree = np.asarray(w_unlab.sum(axis=1)).ravel()
    if (degree <= 0.0).any():
        bad = unlab[degree <= 0.0][0]
        raise StateError(f"unlabeled node {bad} is isolated; cannot infer its distribution")

    for _ in range(max_sweeps):
        fresh = w_unlab @ p / degree[:, None]
        change = np.abs(fresh - p[unlab]).max()
        p[unlab] = fresh
        if change < tol:
            break

    p[unlab] /= p[unlab].sum(axis=1, keepdims=True)
    graph.P = p
    return p


def node_distribution(graph: StGraph, node_id: int, conditioned: bool = True) -> AqiDistribution:
    if graph.P is None:
        raise StateError("distributions not computed; run harmonic_solve first")
    dist = AqiDistribution(graph.bins.centers, graph.P[node_id])
    scale = graph.scales[node_id]
    if conditioned and scale is not None:
        dist = apply_scale_conditioning(dist, scale)
    return dist


def entropy(graph: StGraph) -> float:
    """Average base-2 entropy of the unlabeled (conditioned) distributions."""
    if graph.P is None:
        raise StateError("distributions not computed; run harmonic_solve first")
    unlab = graph.unlabeled_ids()
    if len(unlab) == 0:
        return 0.0
    total = 0.0
    for nid in unlab:
        mass = graph.P[nid]
        scale = graph.scales[nid]
        if scale is not None:
            mass = _condition_mass(mass, graph.bins.centers, scale)
        pos = mass[mass > 0.0]
        total += float(-(pos * np.log2(pos)).sum())
    return total / len(unlab)


# ---------------------------------------------------------------------------
# entropy-descent weight learning (one-hop labeled-neighbour objective)
# ---------------------------------------------------------------------------


class _OneHop:
    """Arrays for the labeled-neighbour averaging objective and its gradient."""

    def __init__(self, graph: StGraph):
        lab = graph.labeled
        e = graph.edges
        m1 = lab[e[:, 1]] & ~lab[e[:, 0]]
        m2 = lab[e[:, 0]] & ~lab[e[:, 1]]
        eu = np.concatenate([e[m1, 0], e[m2, 1]])
        el = np.concatenate([e[m1, 1], e[m2, 0]])
        dist = np.concatenate([graph.dist[m1], graph.dist[m2]])

        nodes, self.edge_node = np.unique(eu, return_inverse=True)
        self.nodes = nodes
        self.n_nodes = len(nodes)
        self.n_bins = len(graph.bins)
        self.dist = dist
        self.label_bin = np.array(
            [graph.bins.index_of(graph.label_value[l]) for l in el], dtype=np.int64
        )
        self.flat_bin = self.edge_node * self.n_bins + self.label_bin

        self.mask = np.ones((self.n_nodes, self.n_bins), dtype=bool)
        for pos, nid in enumerate(nodes):
            scale = graph.scales[nid]
            if scale is not None:
                self.mask[pos] = (graph.bins.centers >= scale.x_min) & (
                    graph.bins.centers <= scale.x_max
                )
        self.alpha = graph.alpha
        self.beta = graph.beta

    def _mixture(self, theta):
        q = np.maximum(self.alpha[None, :] + self.beta[None, :] * self.dist, 0.0)
        w = np.exp(-np.minimum(q @ (theta**2), _EXP_CAP))
        degree = np.bincount(self.edge_node, weights=w, minlength=self.n_nodes)
        numer = np.bincount(
            self.flat_bin, weights=w, minlength=self.n_nodes * self.n_bins
        ).reshape(self.n_nodes, self.n_bins)
        p = numer / degree[:, None]
        masked = p * self.mask
        z = masked.sum(axis=1)
        return q, w, degree, p, masked, z

    def value(self, theta) -> float:
        _, _, _, p, masked, z = self._mixture(theta)
        h = np.zeros(self.n_nodes)
        ok = z > 0.0
        qdist = np.where(ok[:, None] & (masked > 0.0), masked / np.where(ok, z, 1.0)[:, None], 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(qdist > 0.0, qdist * np.log2(qdist), 0.0)
        h[ok] = -terms[ok].sum(axis=1)
        if (~ok).any():
            # conditioning removed all mass: the fallback is uniform on the window
            h[~ok] = np.log2(self.mask[~ok].sum(axis=1))
        return float(h.mean())

    def gradient(self, theta) -> np.ndarray:
        q, w, degree, p, masked, z = self._mixture(theta)
        ok = z > 0.0
        zsafe = np.where(ok, z, 1.0)
        qdist = masked / zsafe[:, None]
        with np.errstate(divide="ignore"):
            logq = np.where(qdist > 0.0, np.log2(qdist), 0.0)
        coef = -(logq + 1.0 / LOG2)  # d(-q log2 q)/dq
        grad = np.zeros(NUM_FEATURES)
        for m in range(NUM_FEATURES):
            g = -2.0 * theta[m] * q[:, m] * w
            d_degree = np.bincount(self.edge_node, weights=g, minlength=self.n_nodes)
            d_numer = np.bincount(
                self.flat_bin, weights=g, minlength=self.n_nodes * self.n_bins
            ).reshape(self.n_nodes, self.n_bins)
            dp = (d_numer - p * d_degree[:, None]) / degree[:, None]
            dmasked = dp * self.mask
            dz = dmasked.sum(axis=1)
            dq = (dmasked * zsafe[:, None] - masked * dz[:, None]) / (zsafe**2)[:, None]
            dq[~ok] = 0.0
            terms = np.where(qdist > 0.0, coef * dq, 0.0)
            grad[m] = terms.sum() / self.n_nodes
        return grad


def learn_theta(
    graph: StGraph,
    learning_rate: float = 1.0,
    max_iters: int = 50,
    tol: float = 1e-6,
    max_halvings: int = 40,
) -> ThetaResult:
    """Descend the one-hop conditioned entropy over theta with step halving.

    Accepted steps never increase the objective; after each accepted update the
    full harmonic solve is re-run so the graph's distributions track theta.
    """
    hop = _OneHop(graph)
    theta = graph.theta.copy()
    if hop.n_nodes == 0:
        return ThetaResult(theta, [], 0)
    current = hop.value(theta)
    trace = [current]
    iterations = 0
    for it in range(max_iters):
        grad = hop.gradient(theta)
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite entropy gradient at iteration {it}")
        if np.linalg.norm(grad) < 1e-12:
            break
        step = learning_rate
        candidate = None
        for _ in range(max_halvings):
            trial = theta - step * grad
            value = hop.value(trial)
            if value <= current:
                candidate = (trial, value)
                break
            step *= 0.5
        if candidate is None:
            break
        theta, new_value = candidate
        graph.theta = theta.copy()
        graph.compute_weights()
        harmonic_solve(graph)
        trace.append(new_value)
        iterations = it + 1
        if abs(current - new_value) < tol:
            current = new_value
            break
        current = new_value
    graph.theta = theta.copy()
    return ThetaResult(theta, trace, iterations)


# ---------------------------------------------------------------------------
# end-to-end inference and forecasting
# ---------------------------------------------------------------------------


def infer_current(
    graph: StGraph,
    scales: dict | None = None,
    learn: bool = True,
    learning_rate: float = 1.0,
    max_iters: int = 50,
    initial_theta: np.ndarray | None = None,
) -> InferredMap:
    """Fit correlations, learn theta, solve, condition the newest layer, hard-label.

    `scales` maps cube index -> AqiScale conditioning for the newest layer.
    Labeled nodes keep their measured values verbatim; unlabeled nodes get the
    expectation of their conditioned distribution.  The returned map carries a
    provenance flag per cube so persisted pseudo-labels stay distinguishable.
    `initial_theta` warm-starts the weight learning (e.g. from the previous
    inference round).
    """
    fit_correlation_params(graph)
    if initial_theta is not None:
        graph.theta = np.asarray(initial_theta, dtype=np.float64).copy()
    if learn:
        learn_theta(graph, learning_rate=learning_rate, max_iters=max_iters)
    graph.compute_weights()
    harmonic_solve(graph)

    last = graph.n_layers - 1
    if scales:
        for key, scale in scales.items():
            nid = graph.node_id(key, last)
            graph.scales[nid] = scale

    values, provenance, soft = {}, {}, {}
    for ci, key in enumerate(graph.cube_keys):
        nid = last * graph.n_cubes + ci
        dist = node_distribution(graph, nid)
        soft[key] = dist
        if graph.labeled[nid]:
            values[key] = float(graph.label_value[nid])
            provenance[key] = graph.provenance[nid] or "measured"
        else:
            values[key] = hard_label(dist)
            provenance[key] = "inferred"
    return InferredMap(last, values, provenance, soft)


def forecast(
    graph: StGraph, horizon: int, tol: float = 1e-8, max_sweeps: int = 10_000
) -> list:
    """Hard-labeled maps for the next `horizon` timestamps.

    Future layers attach to the newest layer through same-cube temporal chains
    only (no conditioning), so the solve extends the current distributions
    forward in time.
    """
    if horizon < 0:
        raise InputError(f"horizon {horizon} must be >= 0")
    if horizon == 0:
        return []
    if graph.P is None:
        harmonic_solve(graph)
    n_c = graph.n_cubes
    last = graph.n_layers - 1
    anchor = graph.P[last * n_c : (last + 1) * n_c]

    # Every link of a cube's chain shares one temporal feature distance, so the
    # link weights cancel in the neighbour average and the sweep is weight-free.
    future = np.repeat(anchor[None, :, :], horizon, axis=0)
    for _ in range(max_sweeps):
        fresh = np.empty_like(future)
        for h in range(horizon):
            below = anchor if h == 0 else future[h - 1]
            if h + 1 < horizon:
                fresh[h] = 0.5 * (below + future[h + 1])
            else:
                fresh[h] = below
        change = np.abs(fresh - future).max()
        future = fresh
        if change < tol:
            break

    centers = graph.bins.centers
    out = []
    for h in range(horizon):
        out.append(
            {
                key: float((future[h, ci] * centers).sum())
                for ci, key in enumerate(graph.cube_keys)
            }
        )
    return out
