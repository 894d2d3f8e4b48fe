"""Joint-estimation-error wake-up scheduling for the ground sensor network.

Each device carries two priors: the vision-derived AQI scale for its region
and the pre-inferred value from historical propagation.  Their disagreement
(degree of bias) and the scale width (degree of variance) combine into a
normalised joint estimation error; devices above the JE threshold whose
priors are not both in clean air become wake-up candidates, and a greedy
minimum independent dominating set per region prunes spatially redundant
candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .regions import RegionMap
from .scale import AQI_MAX, AqiScale


@dataclass(frozen=True)
class DevicePriors:
    device_id: int
    scale: AqiScale
    pre_inferred: float

    def __post_init__(self):
        if not (0.0 <= self.pre_inferred <= AQI_MAX):
            raise InputError(
                f"pre-inferred value {self.pre_inferred} outside [0, {AQI_MAX}]"
            )


@dataclass(frozen=True)
class JeScore:
    dob: float  # degree of bias: |pre-inferred - scale midpoint|
    dov: float  # degree of variance: scale width
    je: float


@dataclass
class WakePlan:
    candidates: dict  # region id -> tuple of device ids (the JE-filtered set)
    selected: dict  # region id -> tuple of device ids (independent dominating set)
    union: tuple
    steps: int = 0


def je_scores(priors, dob_max: float | None = None, dov_max: float | None = None) -> dict:
    """Normalised joint estimation error per device.

    JE = (dob/dob_max + dov/dov_max) / 2 with each term 0 when its maximum is 0.
    Maxima default to the maxima over the given devices (the global pool).
    """
    dobs = {p.device_id: abs(p.pre_inferred - p.scale.midpoint) for p in priors}
    dovs = {p.device_id: p.scale.width for p in priors}
    if dob_max is None:
        dob_max = max(dobs.values(), default=0.0)
    if dov_max is None:
        dov_max = max(dovs.values(), default=0.0)
    out = {}
    for p in priors:
        dob, dov = dobs[p.device_id], dovs[p.device_id]
        term_b = dob / dob_max if dob_max > 0 else 0.0
        term_v = dov / dov_max if dov_max > 0 else 0.0
        out[p.device_id] = JeScore(dob, dov, 0.5 * (term_b + term_v))
    return out


def candidate_set(
    scores: dict, priors, threshold: float, sigma: float, region_of: dict
) -> dict:
    """JE-filtered wake-up candidates per region.

    A device qualifies when its JE meets the threshold and at least one of its
    priors exceeds the clean-air bound sigma (devices whose scale top and
    pre-inferred value both sit at or below sigma stay asleep).
    """
    if sigma < 0.0 or sigma > AQI_MAX:
        raise InputError(f"sigma {sigma} outside [0, {AQI_MAX}]")
    out = {}
    for p in priors:
        if scores[p.device_id].je < threshold:
            continue
        if max(p.pre_inferred, p.scale.x_max) <= sigma:
            continue
        rid = region_of[p.device_id]
        out.setdefault(rid, []).append(p.device_id)
    return {rid: tuple(sorted(ids)) for rid, ids in out.items()}


def proximity_edges(members, positions: dict, radius: float) -> dict:
    """Adjacency (id -> set of ids) between members within `radius` of each other."""
    adj = {m: set() for m in members}
    members = sorted(members)
    for i, a in enumerate(members):
        ax, ay = positions[a]
        for b in members[i + 1 :]:
            bx, by = positions[b]
            if (ax - bx) ** 2 + (ay - by) ** 2 <= radius * radius:
                adj[a].add(b)
                adj[b].add(a)
    return adj


def greedy_mids(members, adjacency: dict):
    """Greedy independent dominating set: repeatedly take the max-degree node.

    Degrees are recomputed in the shrinking induced subgraph; ties go to the
    lowest id.  Returns (selected ids, scan steps).
    """
    remaining = set(members)
    selected = []
    steps = 0
    while remaining:
        best, best_deg = None, -1
        for node in sorted(remaining):
            steps += 1
            deg = len(adjacency[node] & remaining)
            if deg > best_deg:
                best, best_deg = node, deg
        selected.append(best)
        remaining.discard(best)
        remaining -= adjacency[best]
    return sorted(selected), steps


def plan(
    region_map: RegionMap,
    priors,
    threshold: float,
    sigma: float,
    radius: float,
) -> WakePlan:
    """Per-region candidate filtering followed by greedy independent domination."""
    if not (0.0 <= threshold <= 1.01):
        raise InputError(f"JE threshold {threshold} outside [0, 1]")
    region_of = {}
    for region in region_map.regions.values():
        for did in region.member_ids:
            region_of[did] = region.id
    scores = je_scores(priors)
    steps = len(list(priors))
    candidates = candidate_set(scores, priors, threshold, sigma, region_of)
    selected = {}
    union = []
    for rid in sorted(candidates):
        members = candidates[rid]
        adjacency = proximity_edges(members, region_map.devices, radius)
        chosen, scan_steps = greedy_mids(members, adjacency)
        steps += scan_steps
        selected[rid] = tuple(chosen)
        union.extend(chosen)
    return WakePlan(
        candidates=candidates,
        selected=selected,
        union=tuple(sorted(union)),
        steps=steps,
    )


def is_independent(selected, adjacency: dict) -> bool:
    chosen = set(selected)
    return all(not (adjacency[a] & chosen) for a in chosen)


def is_dominating(selected, members, adjacency: dict) -> bool:
    chosen = set(selected)
    return all(m in chosen or (adjacency[m] & chosen) for m in members)
