"""Deterministic discrete-time simulator for the aerial-ground sensing loop.

A seeded synthetic AQI field (Gaussian plume sources plus AR(1) deviations)
drives scenario runs: per timestamp the plane is divided into regions, each
region's haze image yields an AQI scale, the wake-up scheduler picks ground
devices to measure, the spatio-temporal graph infers and forecasts the field,
and every joule spent is logged for the accuracy/consumption tradeoff.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.ndimage import gaussian_filter

from .cnn3d import Cnn3dModel, TrainConfig, infer_scale, train
from .errors import InputError
from .features import extract_stack
from .imaging import HazeImage
from .regions import Device, Poi, divide
from .scale import AQI_MAX, AqiScale, ClassPartition, OBSERVED_CLASS_BOUNDS
from .stgraph import AqiBins, Cube, NodeFeatures, build_graph, forecast, infer_current
from .wakeup import DevicePriors, plan


# ---------------------------------------------------------------------------
# synthetic AQI fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlumeSource:
    x: float
    y: float
    z: float
    strength: float
    spread: float
    drift_amp: float = 0.0
    drift_period: float = 24.0
    drift_phase: float = 0.0

    def drift(self, t: float) -> float:
        if self.drift_amp == 0.0:
            return 1.0
        return 1.0 + self.drift_amp * math.sin(
            2.0 * math.pi * t / self.drift_period + self.drift_phase
        )


@dataclass(frozen=True)
class FieldParams:
    shape: tuple = (12, 12, 1)
    cube_size: tuple = (20.0, 20.0, 10.0)
    sources: tuple = ()
    rho: float = 0.85
    noise_std: float = 9.0
    noise_smooth: float = 1.0


@dataclass(frozen=True)
class SyntheticField:
    params: FieldParams
    seed: int
    values: np.ndarray  # (stamps, ni, nj, nk), clamped to [0, AQI_MAX]

    @property
    def n_stamps(self) -> int:
        return self.values.shape[0]

    def at(self, index: tuple, t: int) -> float:
        return float(self.values[t][index])


def cube_grid(params: FieldParams):
    ni, nj, nk = params.shape
    return [
        Cube((i, j, k), params.cube_size)
        for i in range(ni)
        for j in range(nj)
        for k in range(nk)
    ]


def gen_field(params: FieldParams, n_stamps: int, seed: int) -> SyntheticField:
    """Plume base field plus smoothed AR(1) deviations, clamped to [0, AQI_MAX]."""
    if n_stamps < 1:
        raise InputError("need at least one timestamp")
    ni, nj, nk = params.shape
    rng = np.random.default_rng(seed)
    centers = np.array([c.center for c in cube_grid(params)]).reshape(ni, nj, nk, 3)

    base = np.zeros((n_stamps, ni, nj, nk))
    for src in params.sources:
        d2 = ((centers - np.array([src.x, src.y, src.z])) ** 2).sum(axis=-1)
        shape_term = src.strength * np.exp(-d2 / (2.0 * src.spread**2))
        for t in range(n_stamps):
            base[t] += shape_term * src.drift(float(t))

    deviation = np.zeros((ni, nj, nk))
    values = np.zeros_like(base)
    for t in range(n_stamps):
        if params.noise_std > 0.0:
            eps = rng.normal(0.0, params.noise_std, size=(ni, nj, nk))
            if params.noise_smooth > 0.0:
                eps = gaussian_filter(
                    eps, sigma=(params.noise_smooth, params.noise_smooth, 0.0), mode="nearest"
                )
        else:
            eps = np.zeros((ni, nj, nk))
        deviation = params.rho * deviation + eps if t > 0 else eps
        values[t] = np.clip(base[t] + deviation, 0.0, AQI_MAX)
    return SyntheticField(params, seed, values)


# ---------------------------------------------------------------------------
# synthetic haze imagery
# ---------------------------------------------------------------------------


def default_transmission(aqi: float, scale: float = 300.0) -> float:
    """Monotone decreasing AQI -> transmission map, always in (0, 1]."""
    return math.exp(-max(aqi, 0.0) / scale)


def gen_haze_image(base: HazeImage, aqi: float, mapping=None):
    """Blend the clean base toward white airlight by the AQI's transmission."""
    t = (mapping or default_transmission)(aqi)
    if not (0.0 < t <= 1.0):
        raise InputError(f"transmission {t} for aqi {aqi} outside (0, 1]")
    hazed = base.pixels * t + (1.0 - t)
    return HazeImage(np.clip(hazed, 0.0, 1.0)), float(aqi)


def make_base_image(size: int, seed: int) -> HazeImage:
    """Smooth random outdoor-like scene with saturated colors and dark regions."""
    rng = np.random.default_rng(seed)
    arr = rng.random((size, size, 3))
    arr = gaussian_filter(arr, sigma=(size / 10.0, size / 10.0, 0.0), mode="wrap")
    for c in range(3):
        ch = arr[..., c]
        lo, hi = ch.min(), ch.max()
        arr[..., c] = (ch - lo) / (hi - lo) if hi > lo else 0.0
    return HazeImage(arr)


# ---------------------------------------------------------------------------
# spatio-temporal kNN baseline
# ---------------------------------------------------------------------------


def st_knn_baseline(
    positions: np.ndarray,
    times: np.ndarray,
    values: np.ndarray,
    query_pos,
    query_time: float,
    k: int = 5,
    time_scale: float = 100.0,
) -> float:
    """Inverse-distance weighted mean of the k nearest labeled samples.

    The metric is Euclidean over (x, y, z, time_scale * t) so one hour costs
    `time_scale` meters.  With fewer than k samples, all are used; an exact
    spatio-temporal match returns the matching labels' mean.
    """
    if len(values) == 0:
        raise InputError("need at least one labeled sample")
    delta = positions - np.asarray(query_pos, dtype=np.float64)
    dt = (times - query_time) * time_scale
    dist = np.sqrt((delta**2).sum(axis=1) + dt**2)
    exact = dist < 1e-9
    if exact.any():
        return float(values[exact].mean())
    take = min(k, len(values))
    order = np.argsort(dist, kind="stable")[:take]
    w = 1.0 / dist[order]
    return float((w * values[order]).sum() / w.sum())


# ---------------------------------------------------------------------------
# energy model and scenario definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyModel:
    e_sense: float = 0.5  # J per measurement
    e_upload: float = 1.5  # J per report
    e_sleep: float = 0.01  # J per idle interval
    e_fly: float = 80.0  # J per meter of UAV travel
    e_loiter: float = 50.0  # J per second hovering
    load_factor: float = 1.5  # flight multiplier when carrying sensors

    def __post_init__(self):
        values = (self.e_sense, self.e_upload, self.e_sleep, self.e_fly, self.e_loiter)
        if any(v < 0 for v in values):
            raise InputError("energy constants must be nonnegative")
        if self.load_factor < 1.0:
            raise InputError(f"load factor {self.load_factor} must be >= 1")


@dataclass(frozen=True)
class AerialConfig:
    mode: str = "cnn"  # "cnn" runs the vision pipeline; "oracle" reads the field
    image_size: int = 32
    class_bounds: tuple = OBSERVED_CLASS_BOUNDS
    base_seed: int = 7
    comparison: bool = False  # sensor-carrying mode: loiter at centers, loaded flight
    loiter_time: float = 30.0

    def __post_init__(self):
        if self.mode not in ("cnn", "oracle"):
            raise InputError(f"unknown aerial mode {self.mode!r}")


@dataclass(frozen=True)
class SimScenario:
    field: FieldParams = dc_field(default_factory=FieldParams)
    n_devices: int = 24
    pois: tuple = ((60.0, 60.0), (180.0, 70.0), (70.0, 180.0), (180.0, 180.0))
    n_stamps: int = 6
    interval_hours: float = 1.0
    je_threshold: float = 0.3
    sigma: float = 50.0
    radius: float = 45.0  # shared graph / wake-up spatial radius, meters
    history_depth: int = 5
    bin_width: float = 10.0
    sensor_noise: float = 0.03
    learn_iters: int = 4
    horizons: tuple = (1, 3, 10)
    energy: EnergyModel = dc_field(default_factory=EnergyModel)
    aerial: AerialConfig = dc_field(default_factory=AerialConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_stamps < 1:
            raise InputError("schedule needs at least one timestamp")
        area = self.area
        for x, y in self.pois:
            if not (0 <= x <= area[0] and 0 <= y <= area[1]):
                raise InputError(f"POI ({x}, {y}) outside the monitored area {area}")

    @property
    def area(self) -> tuple:
        ni, nj, _ = self.field.shape
        return (ni * self.field.cube_size[0], nj * self.field.cube_size[1])


def default_scenario(seed: int = 0) -> SimScenario:
    sources = (
        PlumeSource(70.0, 70.0, 5.0, strength=110.0, spread=130.0),
        PlumeSource(200.0, 160.0, 5.0, strength=55.0, spread=120.0),
        PlumeSource(120.0, 220.0, 5.0, strength=45.0, spread=110.0),
    )
    return SimScenario(field=FieldParams(sources=sources), seed=seed)


def sample_positions(n: int, area: tuple, rng) -> np.ndarray:
    return np.column_stack([rng.uniform(0, area[0], n), rng.uniform(0, area[1], n)])


def default_wakeup_deployment(n: int = 100, seed: int = 0, area=(1200.0, 1200.0)):
    """The reference random deployment used by the wake-up Monte Carlo studies."""
    rng = np.random.default_rng(seed)
    pts = sample_positions(n, area, rng)
    devices = [Device(i, float(x), float(y)) for i, (x, y) in enumerate(pts)]
    k = 5
    pois = [
        Poi(i, float(x), float(y))
        for i, (x, y) in enumerate(sample_positions(k, area, rng))
    ]
    return devices, pois


# ---------------------------------------------------------------------------
# weather covariates
# ---------------------------------------------------------------------------


def gen_weather_series(n_stamps: int, rng) -> list:
    """Per-stamp (weather, wind_speed, wind_direction, humidity, temperature)."""
    series = []
    weather = int(rng.integers(0, 4))
    wind_speed = float(rng.uniform(1.0, 5.0))
    wind_dir = float(rng.uniform(0.0, 360.0))
    humidity = float(rng.uniform(35.0, 75.0))
    temperature = float(rng.uniform(10.0, 25.0))
    for _ in range(n_stamps):
        series.append((weather, wind_speed, wind_dir % 360.0, humidity, temperature))
        if rng.random() < 0.2:
            weather = int(np.clip(weather + rng.integers(-1, 2), 0, 3))
        wind_speed = float(np.clip(wind_speed + rng.normal(0.0, 0.6), 0.0, 15.0))
        wind_dir = float((wind_dir + rng.normal(0.0, 25.0)) % 360.0)
        humidity = float(np.clip(humidity + rng.normal(0.0, 3.0), 0.0, 100.0))
        temperature = float(np.clip(temperature + rng.normal(0.0, 1.0), -10.0, 40.0))
    return series


def make_feature_fn(weather_series, base_stamp: int, interval_hours: float):
    def feature_fn(cube, layer):
        stamp = base_stamp + layer
        weather, wind_speed, wind_dir, humidity, temperature = weather_series[stamp]
        cx, cy, cz = cube.center
        return NodeFeatures(
            x=cx,
            y=cy,
            z=cz,
            timestamp=stamp * interval_hours,
            weather=weather,
            wind_speed=wind_speed,
            wind_direction=wind_dir,
            humidity=humidity,
            temperature=temperature,
        )

    return feature_fn


# ---------------------------------------------------------------------------
# aerial pass helpers
# ---------------------------------------------------------------------------


def nearest_neighbor_tour(start, points: dict) -> float:
    """Greedy tour length from `start` through all points (ties to lowest id)."""
    pos = dict(points)
    current = start
    total = 0.0
    while pos:
        best_id, best_d = None, np.inf
        for pid in sorted(pos):
            px, py = pos[pid]
            d = math.hypot(px - current[0], py - current[1])
            if d < best_d:
                best_d, best_id = d, pid
        total += best_d
        current = pos.pop(best_id)
    return total


def train_scenario_model(scenario: SimScenario, samples_per_class: int = 6) -> Cnn3dModel:
    """Train the scenario's compact vision model on synthetic hazed images.

    Images are generated from the scenario's clean base scene across the AQI
    span of each class, so the classifier learns the transmission-to-scale map
    it will face during runs.  Deterministic for a given scenario.
    """
    partition = ClassPartition(scenario.aerial.class_bounds)
    base = make_base_image(scenario.aerial.image_size, scenario.aerial.base_seed)
    cfg = _feature_config(scenario)
    stacks, labels = [], []
    for ci in range(partition.num_classes):
        interval = partition.interval(ci)
        span = np.linspace(interval.x_min, interval.x_max, samples_per_class + 2)[1:-1]
        for aqi in span:
            img, label = gen_haze_image(base, float(aqi))
            stacks.append(extract_stack(img, cfg))
            labels.append(label)
    model = Cnn3dModel(
        input_shape=(scenario.aerial.image_size, scenario.aerial.image_size, 6),
        conv_filters=(16, 8, 8),
        kernel_depths=(1, 3, 4),
        classes=partition,
        seed=scenario.aerial.base_seed,
        feature_config=_feature_config(scenario),
    )
    train(
        model,
        stacks,
        labels,
        TrainConfig(epochs=150, batch_size=8, learning_rate=0.02, seed=scenario.aerial.base_seed,
                    target_accuracy=1.0),
    )
    return model


def _feature_config(scenario: SimScenario):
    from .features import FeatureConfig

    return FeatureConfig.for_size(scenario.aerial.image_size)


# ---------------------------------------------------------------------------
# scenario runs
# ---------------------------------------------------------------------------


@dataclass
class StampRecord:
    timestamp: int
    rmse_now: float
    rmse_horizon: dict
    wake_fraction: float
    ground_energy: float
    aerial_energy: float
    runtime: float


@dataclass
class RunReport:
    seed: int
    je: float
    records: list
    events: list  # (timestamp, kind, ident, joules)
    n_devices: int
    energy: EnergyModel
    n_stamps: int

    @property
    def ground_energy(self) -> float:
        return sum(e[3] for e in self.events if e[1] in ("sense", "upload", "sleep"))

    @property
    def aerial_energy(self) -> float:
        return sum(e[3] for e in self.events if e[1].startswith("uav"))

    @property
    def normalized_consumption(self) -> float:
        """Ground energy relative to an always-awake run of the same scenario."""
        awake = self.n_devices * (self.energy.e_sense + self.energy.e_upload) * self.n_stamps
        return self.ground_energy / awake if awake > 0 else 0.0

    def mean_rmse_now(self) -> float:
        return float(np.mean([r.rmse_now for r in self.records]))

    def mean_rmse_horizon(self, h: int) -> float:
        return float(np.mean([r.rmse_horizon[h] for r in self.records]))


def _rmse(predicted: dict, truth: dict, keys) -> float:
    keys = list(keys)
    if not keys:
        return 0.0
    err = np.array([predicted[k] - truth[k] for k in keys])
    return float(np.sqrt((err**2).mean()))


def _prior_map(xtilde: dict, scales: dict, bins: AqiBins):
    from .stgraph import AqiDistribution, InferredMap

    values, provenance, soft = {}, {}, {}
    for k, v in xtilde.items():
        scale = scales[k]
        value = float(np.clip(v, scale.x_min, scale.x_max))
        values[k] = value
        provenance[k] = "inferred"
        soft[k] = AqiDistribution(bins.centers, bins.point_mass(value))
    return InferredMap(0, values, provenance, soft)


def _forecast_persisted(inferred, cubes, feature_fn, radius, bins, horizon):
    """Forecast off the persisted map: its pseudo-labels anchor the chains."""
    relabeled = {k: (inferred.values[k], inferred.provenance[k]) for k in inferred.values}
    anchor_graph = build_graph(cubes, [relabeled], feature_fn, radius, bins)
    return forecast(anchor_graph, horizon)


def run_scenario(
    scenario: SimScenario,
    seed: int | None = None,
    je: float | None = None,
    model: Cnn3dModel | None = None,
) -> RunReport:
    """Simulate the full aerial-ground loop; deterministic for a given seed."""
    seed = scenario.seed if seed is None else seed
    je = scenario.je_threshold if je is None else je
    ss = np.random.SeedSequence(seed)
    rng_field, rng_deploy, rng_weather, rng_sensor = [
        np.random.default_rng(s) for s in ss.spawn(4)
    ]

    horizon_max = max(scenario.horizons)
    field_seed = int(rng_field.integers(0, 2**31))
    fld = gen_field(scenario.field, scenario.n_stamps + horizon_max, field_seed)
    cubes = cube_grid(scenario.field)
    cube_keys = [c.index for c in cubes]
    truth_at = lambda t: {c.index: fld.at(c.index, t) for c in cubes}

    area = scenario.area
    pts = sample_positions(scenario.n_devices, area, rng_deploy)
    devices = [Device(i, float(x), float(y)) for i, (x, y) in enumerate(pts)]
    pois = [Poi(i, x, y) for i, (x, y) in enumerate(scenario.pois)]
    weather = gen_weather_series(scenario.n_stamps + horizon_max, rng_weather)
    bins = AqiBins(scenario.bin_width)
    partition = ClassPartition(scenario.aerial.class_bounds)
    if scenario.aerial.mode == "cnn":
        if model is None:
            model = train_scenario_model(scenario)
        base_img = make_base_image(scenario.aerial.image_size, scenario.aerial.base_seed)

    def cube_of_device(dev: Device) -> tuple:
        ni, nj, _ = scenario.field.shape
        i = int(np.clip(dev.x // scenario.field.cube_size[0], 0, ni - 1))
        j = int(np.clip(dev.y // scenario.field.cube_size[1], 0, nj - 1))
        return (i, j, 0)

    events = []
    records = []
    persisted = []  # InferredMap per elapsed stamp
    em = scenario.energy
    carried_theta = None  # feature weights persist across stamps

    for t in range(scenario.n_stamps):
        t_start = time.perf_counter()
        truth = truth_at(t)

        # --- region division -------------------------------------------------
        ni, nj, _ = scenario.field.shape
        rm = divide(devices, pois, grid=(ni, nj), resolution=scenario.field.cube_size[0])
        cube_region = {
            c.index: rm.region_of_point(c.center[0], c.center[1]) for c in cubes
        }

        # --- aerial pass: one scale per region -------------------------------
        region_scales = {}
        for rid in sorted(rm.regions):
            members = [k for k in cube_keys if cube_region[k] == rid]
            mean_aqi = float(np.clip(np.mean([truth[k] for k in members]), 0, AQI_MAX))
            if scenario.aerial.mode == "oracle":
                region_scales[rid] = partition.interval(partition.class_of(mean_aqi))
            else:
                img, _ = gen_haze_image(base_img, mean_aqi)
                region_scales[rid] = infer_scale(model, img)
        centers = {rid: rm.regions[rid].center for rid in rm.regions}
        tour = nearest_neighbor_tour((0.0, 0.0), centers)
        if scenario.aerial.comparison:
            events.append((t, "uav_flight", "tour", em.e_fly * em.load_factor * tour))
            for rid in sorted(centers):
                events.append(
                    (t, "uav_loiter", rid, em.e_loiter * scenario.aerial.loiter_time)
                )
        else:
            events.append((t, "uav_flight", "tour", em.e_fly * tour))

        # --- pre-inference prior: persistence of the last inferred map -------
        if persisted:
            xtilde = dict(persisted[-1].values)
        else:
            xtilde = {
                k: region_scales[cube_region[k]].midpoint for k in cube_keys
            }

        # --- wake-up plan -----------------------------------------------------
        priors = []
        for dev in devices:
            ckey = cube_of_device(dev)
            scale = region_scales[rm.region_of_point(dev.x, dev.y)]
            priors.append(
                DevicePriors(dev.id, scale, float(np.clip(xtilde[ckey], 0, AQI_MAX)))
            )
        wplan = plan(rm, priors, je, scenario.sigma, scenario.radius)
        woken = set(wplan.union)

        measured: dict = {}
        for dev in devices:
            if dev.id in woken:
                value = truth[cube_of_device(dev)]
                if scenario.sensor_noise > 0:
                    value *= 1.0 + scenario.sensor_noise * rng_sensor.normal()
                measured.setdefault(cube_of_device(dev), []).append(
                    float(np.clip(value, 0, AQI_MAX))
                )
                events.append((t, "sense", dev.id, em.e_sense))
                events.append((t, "upload", dev.id, em.e_upload))
            else:
                events.append((t, "sleep", dev.id, em.e_sleep))
        measurements = {k: (float(np.mean(v)), "measured") for k, v in measured.items()}

        # --- graph inference ---------------------------------------------------
        depth = min(scenario.history_depth, t + 1)
        layers = []
        if depth > 1:
            layers = [
                {k: (m.values[k], m.provenance[k]) for k in cube_keys}
                for m in persisted[-(depth - 1) :]
            ]
        layers.append(measurements)
        base_stamp = t - (len(layers) - 1)
        feature_fn = make_feature_fn(weather, base_stamp, scenario.interval_hours)
        scales_for_cubes = {k: region_scales[cube_region[k]] for k in cube_keys}
        if any(layer for layer in layers):
            graph = build_graph(cubes, layers, feature_fn, scenario.radius, bins)
            inferred = infer_current(
                graph,
                scales_for_cubes,
                learn=True,
                max_iters=scenario.learn_iters,
                initial_theta=carried_theta,
            )
            carried_theta = graph.theta.copy()
            current_fn = make_feature_fn(weather, t, scenario.interval_hours)
            fmaps = _forecast_persisted(
                inferred, cubes, current_fn, scenario.radius, bins, horizon_max
            )
        else:
            # nothing measured yet anywhere: fall back to the conditioned prior
            inferred = _prior_map(xtilde, scales_for_cubes, bins)
            fmaps = [dict(inferred.values) for _ in range(horizon_max)]
        persisted.append(inferred)
        rmse_horizon = {
            h: _rmse(fmaps[h - 1], truth_at(t + h), cube_keys) for h in scenario.horizons
        }

        unmeasured = [k for k in cube_keys if k not in measurements]
        rmse_now = _rmse(inferred.values, truth, unmeasured if unmeasured else cube_keys)

        stamp_ground = sum(
            e[3] for e in events if e[0] == t and e[1] in ("sense", "upload", "sleep")
        )
        stamp_aerial = sum(e[3] for e in events if e[0] == t and e[1].startswith("uav"))
        records.append(
            StampRecord(
                timestamp=t,
                rmse_now=rmse_now,
                rmse_horizon=rmse_horizon,
                wake_fraction=len(woken) / scenario.n_devices,
                ground_energy=stamp_ground,
                aerial_energy=stamp_aerial,
                runtime=time.perf_counter() - t_start,
            )
        )

    return RunReport(
        seed=seed,
        je=je,
        records=records,
        events=events,
        n_devices=scenario.n_devices,
        energy=em,
        n_stamps=scenario.n_stamps,
    )


def sweep_je(scenario: SimScenario, je_values, seeds, model: Cnn3dModel | None = None):
    """Run the scenario over a JE grid and seed list; returns all reports."""
    if scenario.aerial.mode == "cnn" and model is None:
        model = train_scenario_model(scenario)
    reports = []
    for je in je_values:
        for seed in seeds:
            reports.append(run_scenario(scenario, seed=seed, je=je, model=model))
    return reports


def report_rows(report: RunReport):
    """Flatten a report into the canonical CSV rows."""
    rows = []
    for rec in report.records:
        rows.append(
            {
                "seed": report.seed,
                "timestamp": rec.timestamp,
                "je": report.je,
                "rmse_now": rec.rmse_now,
                "rmse_1h": rec.rmse_horizon.get(1, float("nan")),
                "rmse_3h": rec.rmse_horizon.get(3, float("nan")),
                "rmse_10h": rec.rmse_horizon.get(10, float("nan")),
                "wake_fraction": rec.wake_fraction,
                "ground_energy": rec.ground_energy,
                "aerial_energy": rec.aerial_energy,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# scenario (de)serialization
# ---------------------------------------------------------------------------


def scenario_to_dict(sc: SimScenario) -> dict:
    return {
        "field": {
            "shape": list(sc.field.shape),
            "cube_size": list(sc.field.cube_size),
            "sources": [
                {
                    "x": s.x,
                    "y": s.y,
                    "z": s.z,
                    "strength": s.strength,
                    "spread": s.spread,
                    "drift_amp": s.drift_amp,
                    "drift_period": s.drift_period,
                    "drift_phase": s.drift_phase,
                }
                for s in sc.field.sources
            ],
            "rho": sc.field.rho,
            "noise_std": sc.field.noise_std,
            "noise_smooth": sc.field.noise_smooth,
        },
        "n_devices": sc.n_devices,
        "pois": [list(p) for p in sc.pois],
        "n_stamps": sc.n_stamps,
        "interval_hours": sc.interval_hours,
        "je_threshold": sc.je_threshold,
        "sigma": sc.sigma,
        "radius": sc.radius,
        "history_depth": sc.history_depth,
        "bin_width": sc.bin_width,
        "sensor_noise": sc.sensor_noise,
        "learn_iters": sc.learn_iters,
        "horizons": list(sc.horizons),
        "energy": {
            "e_sense": sc.energy.e_sense,
            "e_upload": sc.energy.e_upload,
            "e_sleep": sc.energy.e_sleep,
            "e_fly": sc.energy.e_fly,
            "e_loiter": sc.energy.e_loiter,
            "load_factor": sc.energy.load_factor,
        },
        "aerial": {
            "mode": sc.aerial.mode,
            "image_size": sc.aerial.image_size,
            "class_bounds": list(sc.aerial.class_bounds),
            "base_seed": sc.aerial.base_seed,
            "comparison": sc.aerial.comparison,
            "loiter_time": sc.aerial.loiter_time,
        },
        "seed": sc.seed,
    }


def scenario_from_dict(data: dict) -> SimScenario:
    fd = data["field"]
    return SimScenario(
        field=FieldParams(
            shape=tuple(fd["shape"]),
            cube_size=tuple(fd["cube_size"]),
            sources=tuple(PlumeSource(**s) for s in fd["sources"]),
            rho=fd["rho"],
            noise_std=fd["noise_std"],
            noise_smooth=fd["noise_smooth"],
        ),
        n_devices=data["n_devices"],
        pois=tuple(tuple(p) for p in data["pois"]),
        n_stamps=data["n_stamps"],
        interval_hours=data["interval_hours"],
        je_threshold=data["je_threshold"],
        sigma=data["sigma"],
        radius=data["radius"],
        history_depth=data["history_depth"],
        bin_width=data["bin_width"],
        sensor_noise=data["sensor_noise"],
        learn_iters=data["learn_iters"],
        horizons=tuple(data["horizons"]),
        energy=EnergyModel(**data["energy"]),
        aerial=AerialConfig(
            mode=data["aerial"]["mode"],
            image_size=data["aerial"]["image_size"],
            class_bounds=tuple(data["aerial"]["class_bounds"]),
            base_seed=data["aerial"]["base_seed"],
            comparison=data["aerial"]["comparison"],
            loiter_time=data["aerial"]["loiter_time"],
        ),
        seed=data["seed"],
    )


# ---------------------------------------------------------------------------
# inference quality experiment (graph vs spatio-temporal kNN)
# ---------------------------------------------------------------------------


def compare_inference(
    scenario: SimScenario,
    seed: int,
    measured_fraction: float = 0.1,
    knn_k: int = 5,
    knn_time_scale: float = 100.0,
    horizons=(1, 3, 10),
):
    """One seeded trial of graph inference vs the kNN baseline on equal data.

    A fixed random subset of cubes is measured at every timestamp of the
    history window; the full multi-layer graph is solved over those raw
    measurements with region-scale conditioning on the newest layer.  The kNN
    baseline sees exactly the same samples.  Both are scored on the unmeasured
    cubes of the newest layer; forecast horizons are scored on the same cubes.
    """
    ss = np.random.SeedSequence(seed)
    rng_field, rng_pick, rng_weather = [np.random.default_rng(s) for s in ss.spawn(3)]
    depth = scenario.history_depth
    horizon_max = max(horizons)
    fld = gen_field(scenario.field, depth + horizon_max, int(rng_field.integers(0, 2**31)))
    cubes = cube_grid(scenario.field)
    cube_keys = [c.index for c in cubes]
    n_pick = max(1, int(round(measured_fraction * len(cubes))))
    picked = [cube_keys[i] for i in rng_pick.choice(len(cubes), size=n_pick, replace=False)]

    measured_layers = [{k: fld.at(k, t) for k in picked} for t in range(depth)]
    weather = gen_weather_series(depth + horizon_max, rng_weather)
    bins = AqiBins(scenario.bin_width)

    devices = [Device(i, c.center[0], c.center[1]) for i, c in enumerate(cubes) if c.index in picked]
    pois = [Poi(i, x, y) for i, (x, y) in enumerate(scenario.pois)]
    rm = divide(devices, pois, grid=scenario.field.shape[:2], resolution=scenario.field.cube_size[0])
    partition = ClassPartition(scenario.aerial.class_bounds)
    cube_region = {c.index: rm.region_of_point(c.center[0], c.center[1]) for c in cubes}

    truth_last = {k: fld.at(k, depth - 1) for k in cube_keys}
    region_scales = {}
    for rid in sorted(rm.regions):
        members = [k for k in cube_keys if cube_region[k] == rid]
        mean_aqi = float(np.clip(np.mean([truth_last[k] for k in members]), 0, AQI_MAX))
        region_scales[rid] = partition.interval(partition.class_of(mean_aqi))
    scales = {k: region_scales[cube_region[k]] for k in cube_keys}

    feature_fn = make_feature_fn(weather, 0, scenario.interval_hours)
    graph = build_graph(cubes, measured_layers, feature_fn, scenario.radius, bins)
    inferred = infer_current(graph, scales, learn=True, max_iters=12)

    unmeasured = [k for k in cube_keys if k not in measured_layers[-1]]
    rmse_graph = _rmse(inferred.values, truth_last, unmeasured)

    current_fn = make_feature_fn(weather, depth - 1, scenario.interval_hours)
    fmaps = _forecast_persisted(
        inferred, cubes, current_fn, scenario.radius, bins, horizon_max
    )
    rmse_fc = {
        h: _rmse(fmaps[h - 1], {k: fld.at(k, depth - 1 + h) for k in cube_keys}, unmeasured)
        for h in horizons
    }

    # kNN sees the same labeled samples
    pos, times, vals = [], [], []
    for t, layer in enumerate(measured_layers):
        for k, v in layer.items():
            cube = cubes[cube_keys.index(k)]
            pos.append(cube.center)
            times.append(t * scenario.interval_hours)
            vals.append(v)
    pos = np.array(pos)
    times = np.array(times)
    vals = np.array(vals)
    knn_pred = {}
    for k in unmeasured:
        cube = cubes[cube_keys.index(k)]
        knn_pred[k] = st_knn_baseline(
            pos,
            times,
            vals,
            cube.center,
            (depth - 1) * scenario.interval_hours,
            k=knn_k,
            time_scale=knn_time_scale,
        )
    rmse_knn = _rmse(knn_pred, truth_last, unmeasured)

    return {
        "rmse_graph": rmse_graph,
        "rmse_knn": rmse_knn,
        "rmse_now": rmse_graph,
        "rmse_forecast": rmse_fc,
    }
