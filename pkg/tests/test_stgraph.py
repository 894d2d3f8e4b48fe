import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from aqisense.errors import InputError, StateError
from aqisense.scale import AqiScale
from aqisense.stgraph import (
    AqiBins,
    AqiDistribution,
    Cube,
    NodeFeatures,
    _OneHop,
    apply_scale_conditioning,
    build_graph,
    correlation,
    edge_weight,
    entropy,
    feature_distance,
    fit_correlation_params,
    fit_linear,
    forecast,
    hard_label,
    harmonic_solve,
    infer_current,
    learn_theta,
    node_distribution,
)


def features_at(cube, layer, **overrides):
    cx, cy, cz = cube.center
    base = dict(
        x=cx,
        y=cy,
        z=cz,
        timestamp=float(layer),
        weather=0,
        wind_speed=2.0,
        wind_direction=90.0,
        humidity=50.0,
        temperature=20.0,
    )
    base.update(overrides)
    return NodeFeatures(**base)


def line_cubes(n, spacing_cells=1):
    return [Cube((i * spacing_cells, 0, 0)) for i in range(n)]


def random_graph(rng, n_cubes=4, n_layers=2, labeled_fraction=0.5, radius=45.0):
    """A small random multi-layer graph with random measurements and covariates."""
    cubes = [Cube((i, int(rng.integers(0, 2)), 0)) for i in range(n_cubes)]
    layers = []
    for t in range(n_layers):
        layer = {}
        for c in cubes:
            if rng.random() < labeled_fraction:
                layer[c.index] = float(rng.uniform(0, 500))
        layers.append(layer)
    if not any(layers):
        layers[0][cubes[0].index] = 123.0

    def feats(cube, layer):
        local = np.random.default_rng(hash((cube.index, layer)) % 2**32)
        return features_at(
            cube,
            layer,
            wind_speed=float(local.uniform(0, 8)),
            humidity=float(local.uniform(20, 90)),
            temperature=float(local.uniform(5, 30)),
            wind_direction=float(local.uniform(0, 360)),
            weather=int(local.integers(0, 3)),
        )

    return build_graph(cubes, layers, feats, radius)


class TestBuildGraph:
    def test_rule1_minimal(self):
        cubes = [Cube((0, 0, 0)), Cube((50, 0, 0))]  # 1 km apart, far beyond radius
        graph = build_graph(cubes, [{(0, 0, 0): 100.0}], features_at, radius=30.0)
        assert graph.edges.shape == (1, 2)

    def test_rule2_unlabeled_pair(self):
        cubes = [Cube((0, 0, 0)), Cube((1, 0, 0)), Cube((40, 0, 0))]
        graph = build_graph(cubes, [{(40, 0, 0): 80.0}], features_at, radius=25.0)
        a = graph.node_id((0, 0, 0), 0)
        b = graph.node_id((1, 0, 0), 0)
        pairs = {tuple(e) for e in graph.edges}
        assert (min(a, b), max(a, b)) in pairs

    def test_rule3_temporal(self):
        cubes = [Cube((0, 0, 0))]
        graph = build_graph(
            cubes, [{(0, 0, 0): 50.0}, {}], features_at, radius=10.0
        )
        a = graph.node_id((0, 0, 0), 0)
        b = graph.node_id((0, 0, 0), 1)
        assert (min(a, b), max(a, b)) in {tuple(e) for e in graph.edges}

    def test_no_labels_anywhere(self):
        with pytest.raises(StateError):
            build_graph([Cube((0, 0, 0))], [{}], features_at, radius=10.0)

    def test_no_self_or_duplicate_edges(self, rng):
        graph = random_graph(rng, n_cubes=5, n_layers=3)
        assert (graph.edges[:, 0] != graph.edges[:, 1]).all()
        seen = {tuple(e) for e in graph.edges}
        assert len(seen) == len(graph.edges)

    def test_measured_value_range(self):
        with pytest.raises(InputError):
            build_graph([Cube((0, 0, 0))], [{(0, 0, 0): 501.0}], features_at, 10.0)


class TestCorrelation:
    def test_identical_features_give_alpha(self):
        c = Cube((0, 0, 0))
        f = features_at(c, 0)
        assert correlation(f, f, 5, alpha=0.7, beta=2.0) == pytest.approx(0.7)

    def test_plain_l1(self):
        c = Cube((0, 0, 0))
        f1 = features_at(c, 0, wind_speed=0.2)
        f2 = features_at(c, 0, wind_speed=0.7)
        assert correlation(f1, f2, 5, alpha=0.0, beta=1.0) == pytest.approx(0.5)

    def test_wind_direction_is_circular(self):
        c = Cube((0, 0, 0))
        f1 = features_at(c, 0, wind_direction=350.0)
        f2 = features_at(c, 0, wind_direction=10.0)
        assert feature_distance(f1, f2, 6) == pytest.approx(20.0 / 180.0)

    def test_weather_is_categorical(self):
        c = Cube((0, 0, 0))
        f1 = features_at(c, 0, weather=1)
        f2 = features_at(c, 0, weather=2)
        assert feature_distance(f1, f2, 4) == 1.0
        assert feature_distance(f1, f1, 4) == 0.0


class TestEdgeWeight:
    def test_zero_q_gives_one(self):
        assert edge_weight(np.zeros(9), np.ones(9)) == 1.0

    def test_direct_evaluation(self):
        assert edge_weight([0.5, 0.25], [1.0, 1.0]) == pytest.approx(np.exp(-0.75))

    def test_theta_monotonicity(self):
        low = edge_weight([0.5, 0.25], [1.0, 1.0])
        high = edge_weight([0.5, 0.25], [2.0, 1.0])
        assert high < low

    def test_weights_in_unit_interval(self, rng):
        for _ in range(50):
            q = rng.uniform(0, 50, size=9)
            th = rng.uniform(0, 4, size=9)
            w = edge_weight(q, th)
            assert 0.0 < w <= 1.0


class TestFit:
    def test_exact_line_recovery(self, rng):
        x = rng.random(40)
        alpha, beta, ok = fit_linear(x, 0.1 + 0.5 * x)
        assert ok
        assert alpha == pytest.approx(0.1, abs=1e-12)
        assert beta == pytest.approx(0.5, abs=1e-12)

    def test_degenerate_falls_back(self):
        alpha, beta, ok = fit_linear(np.full(10, 0.3), np.linspace(0, 1, 10))
        assert (alpha, beta, ok) == (0.0, 1.0, False)
        alpha, beta, ok = fit_linear(np.array([0.5]), np.array([0.2]))
        assert not ok

    def test_noisy_recovery_within_three_se(self, rng):
        # 50 independent synthetic pairs from a known line
        true_a, true_b = 0.12, 0.6
        x = rng.random(50)
        noise = rng.normal(0, 0.03, 50)
        y = true_a + true_b * x + noise
        alpha, beta, ok = fit_linear(x, y)
        assert ok
        resid = y - (alpha + beta * x)
        sigma2 = (resid**2).sum() / (len(x) - 2)
        se_b = np.sqrt(sigma2 / ((x - x.mean()) ** 2).sum())
        se_a = se_b * np.sqrt((x**2).mean())
        assert abs(beta - true_b) < 3 * se_b
        assert abs(alpha - true_a) < 3 * se_a

    def test_graph_fit_sets_params(self, rng):
        graph = random_graph(rng, n_cubes=5, n_layers=2, labeled_fraction=0.8)
        result = fit_correlation_params(graph)
        assert result.n_pairs >= 2
        assert graph.alpha.shape == (9,)
        # coordinate features vary across cubes, so they should actually fit
        assert not result.fallback[0]


class TestHarmonicSolve:
    def test_two_labeled_neighbors_split_evenly(self):
        cubes = [Cube((0, 0, 0)), Cube((1, 0, 0)), Cube((2, 0, 0))]
        layers = [{(0, 0, 0): 100.0, (2, 0, 0): 200.0}]

        def feats(cube, layer):
            # identical covariates except mirrored x, so both edges weigh equal
            return features_at(cube, layer, x=abs(cube.center[0] - 30.0), y=0.0)

        graph = build_graph(cubes, layers, feats, radius=25.0)
        harmonic_solve(graph)
        mid = graph.node_id((1, 0, 0), 0)
        dist = node_distribution(graph, mid)
        assert dist.mass[graph.bins.index_of(100.0)] == pytest.approx(0.5, abs=1e-7)
        assert dist.mass[graph.bins.index_of(200.0)] == pytest.approx(0.5, abs=1e-7)
        assert hard_label(dist) == pytest.approx(150.0, abs=1e-5)

    def test_constant_labels_give_point_mass(self, rng):
        graph = random_graph(rng, n_cubes=5, n_layers=2, labeled_fraction=0.4)
        graph.label_value[graph.labeled] = 140.0
        harmonic_solve(graph)
        for nid in graph.unlabeled_ids():
            dist = node_distribution(graph, nid)
            assert dist.mass[graph.bins.index_of(140.0)] == pytest.approx(1.0, abs=1e-6)

    def test_matches_dense_oracle(self, rng):
        for trial in range(12):
            graph = random_graph(
                rng,
                n_cubes=int(rng.integers(2, 5)),
                n_layers=int(rng.integers(1, 4)),
                labeled_fraction=0.5,
            )
            fit_correlation_params(graph)
            graph.compute_weights()
            p = harmonic_solve(graph)
            label_mass = {
                int(i): graph.bins.point_mass(graph.label_value[i])
                for i in np.flatnonzero(graph.labeled)
            }
            want = oracles.harmonic_dense(
                graph.n_nodes,
                [tuple(e) for e in graph.edges],
                graph.weights,
                graph.labeled,
                label_mass,
            )
            for nid, mass in want.items():
                assert np.abs(p[nid] - mass).max() < 1e-6

    def test_all_rows_are_pmfs(self, rng):
        graph = random_graph(rng, n_cubes=6, n_layers=3, labeled_fraction=0.3)
        p = harmonic_solve(graph)
        assert (p >= 0).all()
        assert np.abs(p.sum(axis=1) - 1.0).max() < 1e-9

    def test_isolated_unlabeled_rejected(self, rng):
        graph = random_graph(rng, n_cubes=4, n_layers=2, labeled_fraction=0.5)
        victim = graph.unlabeled_ids()[0]
        keep = (graph.edges[:, 0] != victim) & (graph.edges[:, 1] != victim)
        graph.edges = graph.edges[keep]
        graph.dist = graph.dist[keep]
        graph.weights = None
        with pytest.raises(StateError):
            harmonic_solve(graph)

    def test_harmonic_fixed_point_property(self, rng):
        # at convergence each unlabeled row equals its neighbour average
        graph = random_graph(rng, n_cubes=5, n_layers=2, labeled_fraction=0.4)
        p = harmonic_solve(graph)
        from scipy.sparse import csr_matrix

        u, v = graph.edges[:, 0], graph.edges[:, 1]
        w = graph.weights
        n = graph.n_nodes
        mat = csr_matrix(
            (np.concatenate([w, w]), (np.concatenate([u, v]), np.concatenate([v, u]))),
            shape=(n, n),
        )
        for nid in graph.unlabeled_ids():
            row = mat[nid].toarray().ravel()
            avg = (row[:, None] * p).sum(axis=0) / row.sum()
            assert np.abs(p[nid] - avg).max() < 1e-6


class TestConditioning:
    def bins(self):
        return AqiBins(10.0)

    def test_inside_window_unchanged(self):
        bins = self.bins()
        mass = bins.point_mass(120.0)
        dist = AqiDistribution(bins.centers, mass)
        out = apply_scale_conditioning(dist, AqiScale(100, 200))
        assert np.array_equal(out.mass, mass)

    def test_uniform_restriction(self):
        bins = self.bins()
        uniform = np.full(len(bins), 1.0 / len(bins))
        out = apply_scale_conditioning(AqiDistribution(bins.centers, uniform), AqiScale(100, 200))
        inside = (bins.centers >= 100) & (bins.centers <= 200)
        assert np.abs(out.mass[inside] - 1.0 / inside.sum()).max() < 1e-12
        assert np.abs(out.mass[~inside]).max() == 0.0

    def test_single_surviving_atom(self):
        bins = self.bins()
        mass = 0.5 * bins.point_mass(100.0) + 0.5 * bins.point_mass(300.0)
        out = apply_scale_conditioning(AqiDistribution(bins.centers, mass), AqiScale(0, 150))
        assert hard_label(out) == pytest.approx(100.0)

    def test_empty_window_uniform_fallback(self):
        bins = self.bins()
        mass = bins.point_mass(400.0)
        out = apply_scale_conditioning(AqiDistribution(bins.centers, mass), AqiScale(0, 100))
        inside = (bins.centers >= 0) & (bins.centers <= 100)
        assert np.abs(out.mass[inside] - 1.0 / inside.sum()).max() < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(
        seed=st.integers(0, 10_000),
        lo=st.floats(0, 500),
        width=st.floats(0, 500),
    )
    def test_always_pmf(self, seed, lo, width):
        bins = AqiBins(10.0)
        rng = np.random.default_rng(seed)
        mass = rng.random(len(bins))
        mass /= mass.sum()
        hi = min(lo + width, 500.0)
        out = apply_scale_conditioning(
            AqiDistribution(bins.centers, mass), AqiScale(lo, hi)
        )
        assert (out.mass >= 0).all()
        assert abs(out.mass.sum() - 1.0) < 1e-9


class TestEntropyAndHardLabel:
    def test_point_masses_zero_entropy(self, rng):
        graph = random_graph(rng, n_cubes=4, n_layers=1, labeled_fraction=0.5)
        graph.label_value[graph.labeled] = 240.0
        harmonic_solve(graph)
        assert entropy(graph) == pytest.approx(0.0, abs=1e-12)

    def test_uniform_four_bins_two_bits(self, rng):
        graph = random_graph(rng, n_cubes=3, n_layers=1, labeled_fraction=0.5)
        harmonic_solve(graph)
        unlab = graph.unlabeled_ids()
        p = graph.P
        for nid in unlab:
            row = np.zeros(len(graph.bins))
            row[:4] = 0.25
            p[nid] = row
        assert entropy(graph) == pytest.approx(2.0)

    def test_entropy_averages_over_nodes(self):
        cubes = line_cubes(4)
        graph = build_graph(cubes, [{cubes[0].index: 50.0}], features_at, radius=25.0)
        harmonic_solve(graph)
        unlab = graph.unlabeled_ids()
        assert len(unlab) >= 2
        p = graph.P
        row1 = np.zeros(len(graph.bins))
        row1[:2] = 0.5  # 1 bit
        row2 = np.zeros(len(graph.bins))
        row2[:4] = 0.25  # 2 bits
        p[unlab[0]] = row1
        p[unlab[1]] = row2
        for nid in unlab[2:]:
            p[nid] = row1
        expect = (1.0 * (len(unlab) - 1) + 2.0) / len(unlab)
        assert entropy(graph) == pytest.approx(expect)

    def test_hard_label_examples(self):
        bins = AqiBins(10.0)
        assert hard_label(AqiDistribution(bins.centers, bins.point_mass(120.0))) == 120.0
        support = np.arange(5.0)
        assert hard_label(AqiDistribution(support, np.full(5, 0.2))) == pytest.approx(2.0)
        mass = 0.25 * bins.point_mass(100.0) + 0.75 * bins.point_mass(200.0)
        assert hard_label(AqiDistribution(bins.centers, mass)) == pytest.approx(175.0)

    def test_hard_label_permutation_invariant(self, rng):
        support = np.arange(0, 510, 10.0)
        mass = rng.random(len(support))
        mass /= mass.sum()
        perm = rng.permutation(len(support))
        a = hard_label(AqiDistribution(support, mass))
        b = hard_label(AqiDistribution(support[perm], mass[perm]))
        assert a == pytest.approx(b)


class TestLearnTheta:
    def test_gradient_matches_finite_differences(self, rng):
        for trial in range(6):
            graph = random_graph(
                rng, n_cubes=5, n_layers=2, labeled_fraction=0.5, radius=45.0
            )
            fit_correlation_params(graph)
            # conditioning on some unlabeled nodes exercises the masked path
            unlab = graph.unlabeled_ids()
            for nid in unlab[::2]:
                graph.scales[nid] = AqiScale(0.0, 400.0)
            hop = _OneHop(graph)
            if hop.n_nodes == 0:
                continue
            theta = np.abs(rng.normal(1.0, 0.3, size=9))
            grad = hop.gradient(theta)
            h = 1e-5
            for m in range(9):
                up = theta.copy()
                up[m] += h
                down = theta.copy()
                down[m] -= h
                numeric = (hop.value(up) - hop.value(down)) / (2 * h)
                denom = max(abs(numeric), abs(grad[m]), 1e-10)
                assert abs(numeric - grad[m]) / denom < 1e-4

    def test_stationary_point_unchanged(self, rng):
        graph = random_graph(rng, n_cubes=4, n_layers=1, labeled_fraction=0.5)
        graph.label_value[graph.labeled] = 100.0  # all labels equal: H is flat at 0
        fit_correlation_params(graph)
        before = graph.theta.copy()
        result = learn_theta(graph, max_iters=10)
        assert np.array_equal(result.theta, before)

    def test_trace_never_increases(self, rng):
        graph = random_graph(rng, n_cubes=6, n_layers=2, labeled_fraction=0.5)
        fit_correlation_params(graph)
        result = learn_theta(graph, max_iters=15)
        trace = result.entropy_trace
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


class TestInferCurrent:
    def test_all_measured_passthrough(self):
        cubes = line_cubes(3)
        layers = [{c.index: 100.0 + 7.3 * i for i, c in enumerate(cubes)}]
        graph = build_graph(cubes, layers, features_at, radius=25.0)
        result = infer_current(graph, learn=False)
        for i, c in enumerate(cubes):
            assert result.values[c.index] == pytest.approx(100.0 + 7.3 * i)
            assert result.provenance[c.index] == "measured"

    def test_conditioned_labels_stay_inside_scale(self, rng):
        graph = random_graph(rng, n_cubes=6, n_layers=2, labeled_fraction=0.4)
        scale = AqiScale(100.0, 200.0)
        scales = {key: scale for key in graph.cube_keys}
        result = infer_current(graph, scales, learn=False)
        last = graph.n_layers - 1
        for key in graph.cube_keys:
            nid = graph.node_id(key, last)
            if not graph.labeled[nid]:
                assert 100.0 <= result.values[key] <= 200.0
                assert result.provenance[key] == "inferred"

    def test_pseudo_labels_round_trip(self, rng):
        graph = random_graph(rng, n_cubes=4, n_layers=1, labeled_fraction=0.6)
        result = infer_current(graph, learn=False)
        relabeled = {
            key: (result.values[key], result.provenance[key]) for key in result.values
        }
        cubes = [Cube(k) for k in graph.cube_keys]
        graph2 = build_graph(cubes, [relabeled], features_at, radius=25.0)
        assert graph2.labeled.all()
        provs = {graph2.provenance[graph2.node_id(k, 0)] for k in graph2.cube_keys}
        assert provs <= {"measured", "inferred"}


class TestForecast:
    def _constant_graph(self):
        cubes = line_cubes(4)
        layer = {cubes[0].index: 90.0, cubes[2].index: 150.0}
        layers = [dict(layer) for _ in range(3)]
        return build_graph(cubes, layers, features_at, radius=25.0)

    def test_stationary_field_persists(self):
        graph = self._constant_graph()
        result = infer_current(graph, learn=False)
        maps = forecast(graph, 4)
        for fmap in maps:
            for key, value in result.values.items():
                nid = graph.node_id(key, graph.n_layers - 1)
                if graph.labeled[nid]:
                    # labeled anchors enter the chain as their binned mass
                    anchor = graph.bins.centers[graph.bins.index_of(value)]
                else:
                    anchor = value
                assert fmap[key] == pytest.approx(anchor, abs=1e-6)

    def test_zero_horizon_empty(self):
        graph = self._constant_graph()
        assert forecast(graph, 0) == []

    def test_negative_horizon_rejected(self):
        graph = self._constant_graph()
        with pytest.raises(InputError):
            forecast(graph, -1)
