import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from aqisense.errors import InputError
from aqisense.regions import Device, Poi, divide
from aqisense.scale import AqiScale
from aqisense.wakeup import (
    DevicePriors,
    candidate_set,
    greedy_mids,
    is_dominating,
    is_independent,
    je_scores,
    plan,
    proximity_edges,
)


def priors_of(entries):
    return [DevicePriors(i, AqiScale(lo, hi), x) for i, (lo, hi, x) in enumerate(entries)]


class TestJeScores:
    def test_perfect_agreement_zero(self):
        scores = je_scores(priors_of([(100, 100, 100), (0, 200, 300)]))
        assert scores[0].je == 0.0

    def test_attaining_both_maxima_gives_one(self):
        scores = je_scores(priors_of([(0, 200, 300), (50, 150, 100)]))
        assert scores[0].je == 1.0

    def test_direct_evaluation(self):
        # dob=10, dov=10 with maxima 20 and 40
        scores = je_scores(
            priors_of([(100, 110, 115)]), dob_max=20.0, dov_max=40.0
        )
        assert scores[0].dob == pytest.approx(10.0)
        assert scores[0].dov == pytest.approx(10.0)
        assert scores[0].je == pytest.approx(0.375)

    def test_zero_maxima_guard(self):
        scores = je_scores(priors_of([(100, 100, 100), (50, 50, 50)]))
        assert scores[0].je == 0.0 and scores[1].je == 0.0

    @settings(max_examples=80, deadline=None)
    @given(
        data=st.lists(
            st.tuples(
                st.floats(0, 400), st.floats(0, 100), st.floats(0, 500)
            ),
            min_size=1,
            max_size=12,
        )
    )
    def test_je_always_unit_interval(self, data):
        priors = priors_of([(lo, min(lo + w, 500.0), x) for lo, w, x in data])
        for score in je_scores(priors).values():
            assert 0.0 <= score.je <= 1.0 + 1e-12

    def test_invariant_under_common_rescale(self):
        base = priors_of([(0, 100, 200), (100, 300, 150), (50, 150, 75)])
        scores = je_scores(base)
        scaled = je_scores(base, dob_max=None, dov_max=None)
        for i in scores:
            assert scores[i].je == pytest.approx(scaled[i].je)
        # doubling every dob and dov leaves JE unchanged via the maxima
        manual = je_scores(base)
        doubled = [
            DevicePriors(
                p.device_id,
                AqiScale(p.scale.x_min, min(500.0, p.scale.x_min + 2 * p.scale.width)),
                min(500.0, p.scale.x_min + p.scale.width + 2 * (p.pre_inferred - p.scale.midpoint)),
            )
            for p in base
            if p.scale.x_min + 2 * p.scale.width <= 500.0
        ]
        if len(doubled) == len(base):
            for i, score in je_scores(doubled).items():
                assert score.je == pytest.approx(manual[i].je, abs=1e-9)


class TestCandidateSet:
    def region_of(self, priors):
        return {p.device_id: 0 for p in priors}

    def test_permissive_limits_take_everyone_positive(self):
        priors = priors_of([(0, 100, 50), (100, 200, 150), (0, 0, 0)])
        scores = je_scores(priors)
        out = candidate_set(scores, priors, 0.0, 0.0, self.region_of(priors))
        # the all-zero prior device has max(x_max, pre_inferred) = 0, not > 0
        assert out[0] == (0, 1)

    def test_impossible_threshold_empty(self):
        priors = priors_of([(0, 100, 50), (100, 200, 150)])
        scores = je_scores(priors)
        assert candidate_set(scores, priors, 1.01, 0.0, self.region_of(priors)) == {}

    def test_filter_oracle(self, rng):
        priors = priors_of(
            [
                (
                    float(lo := rng.uniform(0, 300)),
                    float(min(500.0, lo + rng.uniform(0, 150))),
                    float(rng.uniform(0, 500)),
                )
                for _ in range(40)
            ]
        )
        scores = je_scores(priors)
        region_of = {p.device_id: p.device_id % 3 for p in priors}
        got = candidate_set(scores, priors, 0.5, 50.0, region_of)
        flat = {d for ids in got.values() for d in ids}
        want = {
            p.device_id
            for p in priors
            if scores[p.device_id].je >= 0.5 and max(p.pre_inferred, p.scale.x_max) > 50.0
        }
        assert flat == want
        for rid, ids in got.items():
            assert all(region_of[d] == rid for d in ids)


class TestGreedyMids:
    def test_edgeless_takes_all(self):
        members = (3, 1, 2)
        sel, _ = greedy_mids(members, {1: set(), 2: set(), 3: set()})
        assert sel == [1, 2, 3]

    def test_path_takes_center(self):
        adj = {0: {1}, 1: {0, 2}, 2: {1}}
        sel, _ = greedy_mids((0, 1, 2), adj)
        assert sel == [1]

    def test_random_graphs_independent_dominating_and_bounded(self, rng):
        for _ in range(60):
            n = int(rng.integers(4, 14))
            nodes = list(range(n))
            adj = {i: set() for i in nodes}
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.3:
                        adj[i].add(j)
                        adj[j].add(i)
            sel, _ = greedy_mids(nodes, adj)
            assert oracles.independent(nodes, adj, sel)
            assert oracles.dominating(nodes, adj, sel)
            assert is_independent(sel, adj)
            assert is_dominating(sel, nodes, adj)
            assert len(sel) >= oracles.exact_mids_size(nodes, adj)

    def test_twenty_node_case(self, rng):
        nodes = list(range(20))
        adj = {i: set() for i in nodes}
        for i in range(20):
            for j in range(i + 1, 20):
                if rng.random() < 0.25:
                    adj[i].add(j)
                    adj[j].add(i)
        sel, _ = greedy_mids(nodes, adj)
        assert oracles.independent(nodes, adj, sel)
        assert oracles.dominating(nodes, adj, sel)
        assert len(sel) >= oracles.exact_mids_size(nodes, adj)


class TestPlan:
    def _region_map(self, rng, n=20, area=500.0):
        devices = [
            Device(i, float(x), float(y))
            for i, (x, y) in enumerate(rng.uniform(0, area, size=(n, 2)))
        ]
        pois = [Poi(0, area / 3, area / 3), Poi(1, 2 * area / 3, 2 * area / 3)]
        return divide(devices, pois, grid=(10, 10), resolution=area / 10)

    def test_clean_air_sleeps(self, rng):
        rm = self._region_map(rng)
        priors = [
            DevicePriors(d, AqiScale(0.0, 40.0), 20.0) for d in sorted(rm.devices)
        ]
        result = plan(rm, priors, 0.0, 50.0, 100.0)
        assert result.union == ()

    def test_singleton_wakes(self, rng):
        rm = self._region_map(rng, n=1)
        priors = [DevicePriors(0, AqiScale(100.0, 200.0), 180.0)]
        result = plan(rm, priors, 0.5, 50.0, 100.0)
        assert result.union == (0,)

    def test_selected_subset_of_candidates_and_valid(self, rng):
        rm = self._region_map(rng, n=30)
        priors = [
            DevicePriors(
                d,
                AqiScale(float(lo := rng.uniform(0, 250)), float(min(500, lo + rng.uniform(10, 120)))),
                float(rng.uniform(0, 500)),
            )
            for d in sorted(rm.devices)
        ]
        result = plan(rm, priors, 0.2, 50.0, 120.0)
        for rid, chosen in result.selected.items():
            members = result.candidates[rid]
            assert set(chosen) <= set(members)
            adj = proximity_edges(members, rm.devices, 120.0)
            assert is_independent(chosen, adj)
            assert is_dominating(chosen, members, adj)

    def test_plan_steps_linear_in_n(self, rng):
        # devices packed inside one radius so |S| stays 1 per region
        sizes = [50, 100, 200, 400, 800]
        steps = []
        for n in sizes:
            devices = [
                Device(i, float(x), float(y))
                for i, (x, y) in enumerate(rng.uniform(0, 50.0, size=(n, 2)))
            ]
            pois = [Poi(0, 25.0, 25.0)]
            rm = divide(devices, pois, grid=(4, 4), resolution=12.5)
            priors = [
                DevicePriors(d, AqiScale(100.0, 200.0), float(rng.uniform(100, 400)))
                for d in sorted(rm.devices)
            ]
            result = plan(rm, priors, 0.0, 50.0, 200.0)
            assert all(len(s) == 1 for s in result.selected.values())
            steps.append(result.steps)
        slope = np.polyfit(np.log(sizes), np.log(steps), 1)[0]
        assert 0.8 <= slope <= 1.2

    def test_invalid_threshold(self, rng):
        rm = self._region_map(rng, n=3)
        priors = [DevicePriors(d, AqiScale(0, 100), 50.0) for d in sorted(rm.devices)]
        with pytest.raises(InputError):
            plan(rm, priors, -0.1, 50.0, 100.0)


class TestMonotonicityInRadius:
    def test_mean_wake_set_shrinks_statistically(self):
        # averaged over seeded random deployments the selected set size is
        # non-increasing in the proximity radius
        radii = (50.0, 100.0, 200.0, 300.0)
        totals = {r: 0 for r in radii}
        for seed in range(150):
            rng = np.random.default_rng(seed)
            pts = rng.uniform(0, 1200.0, size=(40, 2))
            devices = [Device(i, float(x), float(y)) for i, (x, y) in enumerate(pts)]
            pois = [Poi(0, 400.0, 400.0), Poi(1, 800.0, 800.0)]
            rm = divide(devices, pois, grid=(12, 12), resolution=100.0)
            priors = [
                DevicePriors(d, AqiScale(100.0, 250.0), float(rng.uniform(50, 450)))
                for d in sorted(rm.devices)
            ]
            for r in radii:
                totals[r] += len(plan(rm, priors, 0.0, 50.0, r).union)
        means = [totals[r] / 150 for r in radii]
        assert all(b <= a + 1e-9 for a, b in zip(means, means[1:]))
