"""Dynamic division of the monitoring plane into device regions.

Devices cluster to their nearest point of interest, each cluster gets a mean
center, and the plane is rasterised by a multi-site weighted Voronoi rule
where a region with n devices pulls cells in with distance scaled by
1/sqrt(n).  All ties break toward the lowest id so results are reproducible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Poi:
    id: int
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise InputError(f"POI {self.id} position must be finite")


@dataclass(frozen=True)
class Device:
    id: int
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise InputError(f"device {self.id} position must be finite")


@dataclass(frozen=True)
class Region:
    id: int
    member_ids: tuple
    center: tuple
    count: int


@dataclass
class RegionMap:
    """Region membership, centers and the rasterised weighted-Voronoi assignment."""

    regions: dict
    raster: np.ndarray
    resolution: float
    devices: dict
    steps: int = 0

    @property
    def grid_shape(self) -> tuple:
        return self.raster.shape  # (rows, cols)

    def region_of_point(self, x: float, y: float) -> int:
        rows, cols = self.raster.shape
        col = int(np.clip(x / self.resolution, 0, cols - 1))
        row = int(np.clip(y / self.resolution, 0, rows - 1))
        return int(self.raster[row, col])

    def region_of_device(self, device_id: int) -> int:
        for region in self.regions.values():
            if device_id in region.member_ids:
                return region.id
        raise InputError(f"device {device_id} not in any region")


def assign_devices(devices, pois) -> dict:
    """Map each device to its nearest POI (ties to the lowest POI id)."""
    if len(pois) < 1:
        raise InputError("need at least one POI")
    if len(devices) < 1:
        raise InputError("need at least one device")
    pois = sorted(pois, key=lambda p: p.id)
    clusters = {p.id: [] for p in pois}
    for dev in devices:
        best_id, best_d = None, np.inf
        for p in pois:
            d = (dev.x - p.x) ** 2 + (dev.y - p.y) ** 2
            if d < best_d:
                best_d, best_id = d, p.id
        clusters[best_id].append(dev.id)
    return clusters


def region_centers(clusters: dict, devices) -> dict:
    """Arithmetic mean position per nonempty cluster; empty clusters are dropped."""
    pos = {d.id: (d.x, d.y) for d in devices}
    centers = {}
    for rid in sorted(clusters):
        members = clusters[rid]
        if not members:
            log.warning("region %d has no devices and is dropped from division", rid)
            continue
        xs = [pos[m][0] for m in members]
        ys = [pos[m][1] for m in members]
        centers[rid] = (float(np.mean(xs)), float(np.mean(ys)))
    return centers


def weighted_voronoi(centers: dict, counts: dict, grid: tuple, resolution: float) -> np.ndarray:
    """Assign each raster cell to argmin over regions of ||cell - center|| / sqrt(count).

    `grid` is (cols, rows); cell (row, col) is evaluated at its center point.
    Ties go to the lowest region id.
    """
    if len(centers) < 1:
        raise InputError("need at least one region")
    cols, rows = grid
    if cols < 1 or rows < 1:
        raise InputError(f"grid {grid} must be at least 1x1")
    xs = (np.arange(cols) + 0.5) * resolution
    ys = (np.arange(rows) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    best = np.full((rows, cols), np.inf)
    raster = np.full((rows, cols), -1, dtype=np.int32)
    for rid in sorted(centers):
        cx, cy = centers[rid]
        n = counts[rid]
        if n < 1:
            raise InputError(f"region {rid} has count {n} < 1")
        d = np.hypot(gx - cx, gy - cy) / np.sqrt(n)
        better = d < best
        best[better] = d[better]
        raster[better] = rid
    return raster


def divide(
    devices,
    pois,
    grid: tuple = (50, 50),
    resolution: float = 20.0,
    lloyd_iters: int = 0,
) -> RegionMap:
    """Cluster devices to POIs, compute centers, rasterise the weighted Voronoi.

    `lloyd_iters` optionally re-assigns devices to the running centers before
    the final division (k-means style refinement of the single-pass rule).
    The instrumented `steps` counter tallies distance/assignment operations.
    """
    clusters = assign_devices(devices, pois)
    steps = len(devices) * len(pois)
    centers = region_centers(clusters, devices)
    steps += len(devices)
    for _ in range(lloyd_iters):
        center_pois = [Poi(rid, *centers[rid]) for rid in sorted(centers)]
        clusters = assign_devices(devices, center_pois)
        steps += len(devices) * len(center_pois) + len(devices)
        centers = region_centers(clusters, devices)
    counts = {rid: len(clusters[rid]) for rid in centers}
    raster = weighted_voronoi(centers, counts, grid, resolution)
    steps += grid[0] * grid[1] * len(centers)
    regions = {
        rid: Region(rid, tuple(sorted(clusters[rid])), centers[rid], counts[rid])
        for rid in centers
    }
    return RegionMap(
        regions=regions,
        raster=raster,
        resolution=resolution,
        devices={d.id: (d.x, d.y) for d in devices},
        steps=steps,
    )


def raster_rle(raster: np.ndarray) -> list:
    """Run-length encode raster rows as [[region_id, run], ...] lists."""
    rows = []
    for row in raster:
        runs = []
        current, count = int(row[0]), 0
        for value in row:
            if int(value) == current:
                count += 1
            else:
                runs.append([current, count])
                current, count = int(value), 1
        runs.append([current, count])
        rows.append(runs)
    return rows


def raster_from_rle(rows: list) -> np.ndarray:
    out = []
    for runs in rows:
        row = []
        for value, count in runs:
            row.extend([value] * count)
        out.append(row)
    return np.array(out, dtype=np.int32)


def region_map_to_dict(rm: RegionMap) -> dict:
    return {
        "resolution": rm.resolution,
        "grid": [int(rm.raster.shape[1]), int(rm.raster.shape[0])],
        "regions": {
            str(r.id): {
                "members": list(r.member_ids),
                "center": [r.center[0], r.center[1]],
                "count": r.count,
            }
            for r in rm.regions.values()
        },
        "devices": {str(k): [v[0], v[1]] for k, v in rm.devices.items()},
        "raster_rle": raster_rle(rm.raster),
    }


def region_map_from_dict(data: dict) -> RegionMap:
    regions = {
        int(rid): Region(
            int(rid),
            tuple(entry["members"]),
            (float(entry["center"][0]), float(entry["center"][1])),
            int(entry["count"]),
        )
        for rid, entry in data["regions"].items()
    }
    return RegionMap(
        regions=regions,
        raster=raster_from_rle(data["raster_rle"]),
        resolution=float(data["resolution"]),
        devices={int(k): (float(v[0]), float(v[1])) for k, v in data["devices"].items()},
    )
