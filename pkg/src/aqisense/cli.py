"""Unified command-line entry point.

Subcommands mirror the pipeline stages: features, cnn, graph, regions,
wakeup, simulate, dataset.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import cnn3d, sim, stgraph, tensorio, wakeup as wakeup_mod
from .config import ENV_VAR, load_config
from .errors import AqiSenseError
from .features import FeatureConfig, extract_stack
from .imaging import read_image, write_pgm
from .regions import (
    Device,
    Poi,
    divide,
    region_map_from_dict,
    region_map_to_dict,
)
from .scale import AqiScale, ClassPartition
from .stgraph import AqiBins, Cube, NodeFeatures, build_graph, forecast, infer_current

COMMANDS = ("features", "cnn", "graph", "regions", "wakeup", "simulate", "dataset")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aqisense",
        description="Aerial-ground air quality sensing pipeline tools",
    )
    parser.add_argument("--config", help=f"config file (default ${ENV_VAR})")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("features", help="haze feature extraction")
    fsub = p.add_subparsers(dest="action", metavar="action")
    fx = fsub.add_parser("extract", help="extract feature stacks from images")
    fx.add_argument("--in", dest="input", required=True, help="image file or directory")
    fx.add_argument("--out", dest="output", required=True, help="output directory")
    fx.add_argument("--size", type=int, help="working size (default from config)")
    fx.add_argument("--previews", action="store_true", help="also write PGM previews")

    p = sub.add_parser("cnn", help="AQI scale classifier")
    csub = p.add_subparsers(dest="action", metavar="action")
    ct = csub.add_parser("train", help="train from a labeled image manifest")
    ct.add_argument("--manifest", required=True, help="json: {images: [{path, aqi}], ...}")
    ct.add_argument("--out", dest="output", required=True, help="model file")
    ct.add_argument("--epochs", type=int)
    ct.add_argument("--seed", type=int)
    ci = csub.add_parser("infer", help="infer the AQI scale of an image")
    ci.add_argument("--model", required=True)
    ci.add_argument("--img", required=True)

    p = sub.add_parser("graph", help="spatio-temporal AQI inference")
    gsub = p.add_subparsers(dest="action", metavar="action")
    gi = gsub.add_parser("infer", help="infer the newest layer from history")
    gi.add_argument("--history", required=True, help="sensor history csv")
    gi.add_argument("--out", dest="output", required=True, help="inferred map csv")
    gi.add_argument("--scales", help="per-cube conditioning csv (i,j,k,x_min,x_max)")
    gi.add_argument("--radius", type=float)
    gi.add_argument("--bin-width", type=float)
    gi.add_argument("--no-learn", action="store_true", help="skip weight learning")
    gf = gsub.add_parser("forecast", help="forecast future layers from history")
    gf.add_argument("--history", required=True)
    gf.add_argument("--out", dest="output", required=True)
    gf.add_argument("--horizon", type=int, required=True)
    gf.add_argument("--radius", type=float)
    gf.add_argument("--bin-width", type=float)

    p = sub.add_parser("regions", help="weighted Voronoi region division")
    rsub = p.add_subparsers(dest="action", metavar="action")
    rd = rsub.add_parser("divide", help="divide the plane into device regions")
    rd.add_argument("--devices", required=True, help="csv id,x,y")
    rd.add_argument("--pois", required=True, help="csv id,x,y")
    rd.add_argument("--out", dest="output", required=True, help="regions json")
    rd.add_argument("--grid", help="raster size as COLSxROWS")
    rd.add_argument("--resolution", type=float)
    rd.add_argument("--lloyd-iters", type=int)

    p = sub.add_parser("wakeup", help="wake-up planning")
    wsub = p.add_subparsers(dest="action", metavar="action")
    wp = wsub.add_parser("plan", help="select devices to wake")
    wp.add_argument("--regions", required=True, help="regions json from `regions divide`")
    wp.add_argument("--priors", required=True, help="csv device,x_min,x_max,pre_inferred")
    wp.add_argument("--je", type=float)
    wp.add_argument("--sigma", type=float)
    wp.add_argument("--r", dest="radius", type=float)
    wp.add_argument("--out", dest="output", help="plan json (default stdout)")

    p = sub.add_parser("simulate", help="end-to-end scenario simulation")
    ssub = p.add_subparsers(dest="action", metavar="action")
    sr = ssub.add_parser("run", help="run a scenario")
    sr.add_argument("--scenario", required=True, help="scenario json")
    sr.add_argument("--out", dest="output", required=True, help="report csv")
    sr.add_argument("--sweep", help="threshold sweep, e.g. je=0:1:0.1")
    sr.add_argument("--seeds", type=int, help="number of seeds (default from config)")
    sr.add_argument("--seed", type=int, help="first seed")

    p = sub.add_parser("dataset", help="synthetic data generators")
    dsub = p.add_subparsers(dest="action", metavar="action")
    dsc = dsub.add_parser("scenario", help="write the default scenario json")
    dsc.add_argument("--out", dest="output", required=True)
    dsc.add_argument("--seed", type=int, default=0)
    dim = dsub.add_parser("images", help="synthetic labeled haze images + manifest")
    dim.add_argument("--out", dest="output", required=True, help="output directory")
    dim.add_argument("--count", type=int, default=40)
    dim.add_argument("--seed", type=int, default=0)
    dim.add_argument("--size", type=int, default=32)
    dhi = dsub.add_parser("history", help="synthetic sensor history csv")
    dhi.add_argument("--out", dest="output", required=True)
    dhi.add_argument("--seed", type=int, default=0)
    dhi.add_argument("--stamps", type=int, default=5)
    dhi.add_argument("--fraction", type=float, default=0.2, help="measured cube fraction")
    dde = dsub.add_parser("deployment", help="random devices and POIs csv")
    dde.add_argument("--devices", required=True)
    dde.add_argument("--pois", required=True)
    dde.add_argument("--n", type=int, default=100)
    dde.add_argument("--k", type=int, default=5)
    dde.add_argument("--seed", type=int, default=0)

    return parser


# ---------------------------------------------------------------------------
# command implementations
# ---------------------------------------------------------------------------


def _cmd_features_extract(args, cfg) -> int:
    size = args.size or cfg.feature_size
    fc = FeatureConfig.for_size(size)
    paths = []
    if os.path.isdir(args.input):
        for name in sorted(os.listdir(args.input)):
            if name.lower().endswith((".png", ".ppm")):
                paths.append(os.path.join(args.input, name))
    else:
        paths.append(args.input)
    if not paths:
        raise AqiSenseError(f"no images found under {args.input}")
    os.makedirs(args.output, exist_ok=True)
    for path in paths:
        img = read_image(path)
        stack = extract_stack(img, fc)
        stem = os.path.splitext(os.path.basename(path))[0]
        tensorio.write_tensor(os.path.join(args.output, stem + ".aqtn"), stack.layers)
        if args.previews:
            for li in range(stack.layers.shape[2]):
                write_pgm(stack.layer(li), os.path.join(args.output, f"{stem}_f{li + 1}.pgm"))
        print(f"{path} -> {stem}.aqtn")
    return 0


def _cmd_cnn_train(args, cfg) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    entries = manifest["images"]
    if not entries:
        raise AqiSenseError("manifest lists no images")
    size = int(manifest.get("size", cfg.feature_size))
    fc = FeatureConfig.for_size(size)
    stacks, labels = [], []
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    for entry in entries:
        path = entry["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        stacks.append(extract_stack(read_image(path), fc))
        labels.append(float(entry["aqi"]))
    if "class_bounds" in manifest:
        classes = ClassPartition(manifest["class_bounds"])
    else:
        classes = ClassPartition.uniform(cfg.num_classes)
    filters = tuple(manifest.get("conv_filters", (16, 8, 8) if size < 64 else (32, 16, 16)))
    model = cnn3d.Cnn3dModel(
        input_shape=(size, size, 6),
        conv_filters=filters,
        classes=classes,
        seed=args.seed if args.seed is not None else cfg.seed,
        feature_config=fc,
    )
    tc = cnn3d.TrainConfig(
        epochs=args.epochs or cfg.epochs,
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        seed=args.seed if args.seed is not None else cfg.seed,
    )
    result = cnn3d.train(model, stacks, labels, tc)
    cnn3d.save_model(model, args.output)
    print(
        f"trained on {len(stacks)} images, {result.epochs_run} epochs, "
        f"final loss {result.loss_history[-1]:.4f}, train accuracy {result.train_accuracy:.2%}"
    )
    return 0


def _cmd_cnn_infer(args, cfg) -> int:
    model = cnn3d.load_model(args.model)
    scale = cnn3d.infer_scale(model, read_image(args.img))
    print(json.dumps({"x_min": scale.x_min, "x_max": scale.x_max}))
    return 0


def _history_graph(args, cfg):
    stamps, rows = tensorio.read_history_csv(args.history)
    radius = args.radius or cfg.radius
    bin_width = getattr(args, "bin_width", None) or cfg.bin_width
    cube_size = (cfg.cube_x, cfg.cube_y, cfg.cube_z)
    indices = sorted({r["index"] for r in rows})
    cubes = [Cube(i, cube_size) for i in indices]
    stamp_pos = {s: t for t, s in enumerate(stamps)}

    by_node = {}
    by_stamp = {t: [] for t in range(len(stamps))}
    for r in rows:
        t = stamp_pos[r["timestamp"]]
        by_node[(r["index"], t)] = r
        by_stamp[t].append(r)

    layers = []
    for t in range(len(stamps)):
        layer = {}
        for r in by_stamp[t]:
            if r["aqi"] is not None:
                layer[r["index"]] = r["aqi"]
        layers.append(layer)

    def feature_fn(cube, t):
        row = by_node.get((cube.index, t))
        if row is None:
            pool = by_stamp[t] or rows
            row = {
                "weather": int(round(float(np.median([p["weather"] for p in pool])))),
                "wind_speed": float(np.mean([p["wind_speed"] for p in pool])),
                "wind_dir": float(np.mean([p["wind_dir"] for p in pool])) % 360.0,
                "humidity": float(np.mean([p["humidity"] for p in pool])),
                "temperature": float(np.mean([p["temperature"] for p in pool])),
            }
        cx, cy, cz = cube.center
        return NodeFeatures(
            x=cx,
            y=cy,
            z=cz,
            timestamp=stamps[t],
            weather=row["weather"],
            wind_speed=row["wind_speed"],
            wind_direction=row["wind_dir"] % 360.0,
            humidity=row["humidity"],
            temperature=row["temperature"],
        )

    graph = build_graph(cubes, layers, feature_fn, radius, AqiBins(bin_width))
    return graph, stamps


def _cmd_graph_infer(args, cfg) -> int:
    graph, stamps = _history_graph(args, cfg)
    scales = None
    if args.scales:
        scales = {
            index: AqiScale(lo, hi)
            for index, (lo, hi) in tensorio.read_scales_csv(args.scales).items()
        }
    result = infer_current(
        graph, scales, learn=not args.no_learn, max_iters=cfg.learn_iters
    )
    tensorio.write_map_csv(args.output, stamps[-1], result.values, result.provenance)
    print(f"inferred {len(result.values)} cubes at timestamp {stamps[-1]} -> {args.output}")
    return 0


def _cmd_graph_forecast(args, cfg) -> int:
    graph, stamps = _history_graph(args, cfg)
    maps = forecast(graph, args.horizon)
    step = stamps[-1] - stamps[-2] if len(stamps) > 1 else 1.0
    import csv as _csv

    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.writer(fh)
        writer.writerow(tensorio.MAP_COLUMNS)
        for h, layer in enumerate(maps, start=1):
            stamp = stamps[-1] + h * step
            for index in sorted(layer):
                writer.writerow(
                    [stamp, index[0], index[1], index[2], layer[index], "forecast"]
                )
    print(f"forecast {len(maps)} layers -> {args.output}")
    return 0


def _cmd_regions_divide(args, cfg) -> int:
    devices = [Device(*row) for row in tensorio.read_points_csv(args.devices)]
    pois = [Poi(*row) for row in tensorio.read_points_csv(args.pois)]
    if args.grid:
        cols, rows = (int(v) for v in args.grid.lower().split("x"))
    else:
        cols, rows = cfg.grid_cols, cfg.grid_rows
    rm = divide(
        devices,
        pois,
        grid=(cols, rows),
        resolution=args.resolution or cfg.resolution,
        lloyd_iters=args.lloyd_iters if args.lloyd_iters is not None else cfg.lloyd_iters,
    )
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(region_map_to_dict(rm), fh, indent=1)
    print(f"divided {len(devices)} devices into {len(rm.regions)} regions -> {args.output}")
    return 0


def _cmd_wakeup_plan(args, cfg) -> int:
    with open(args.regions, encoding="utf-8") as fh:
        rm = region_map_from_dict(json.load(fh))
    priors = [
        wakeup_mod.DevicePriors(
            row["device"], AqiScale(row["x_min"], row["x_max"]), row["pre_inferred"]
        )
        for row in tensorio.read_priors_csv(args.priors)
    ]
    result = wakeup_mod.plan(
        rm,
        priors,
        args.je if args.je is not None else cfg.je,
        args.sigma if args.sigma is not None else cfg.sigma,
        args.radius if args.radius is not None else cfg.wake_radius,
    )
    payload = {
        "regions": {
            str(rid): {
                "candidates": list(result.candidates.get(rid, ())),
                "selected": list(result.selected.get(rid, ())),
            }
            for rid in sorted(rm.regions)
        },
        "union": list(result.union),
    }
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=1)
        print(f"wake plan: {len(result.union)} devices -> {args.output}")
    else:
        print(json.dumps(payload, indent=1))
    return 0


def _parse_sweep(text: str):
    name, _, spec = text.partition("=")
    if name.strip() != "je":
        raise AqiSenseError(f"unsupported sweep variable {name!r}")
    parts = spec.split(":")
    if len(parts) != 3:
        raise AqiSenseError(f"sweep must be start:stop:step, got {spec!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0:
        raise AqiSenseError("sweep step must be positive")
    values = []
    v = start
    while v <= stop + 1e-9:
        values.append(round(v, 10))
        v += step
    return values


def _cmd_simulate_run(args, cfg) -> int:
    with open(args.scenario, encoding="utf-8") as fh:
        scenario = sim.scenario_from_dict(json.load(fh))
    first_seed = args.seed if args.seed is not None else cfg.seed
    n_seeds = args.seeds or cfg.seeds
    seeds = list(range(first_seed, first_seed + n_seeds))
    je_values = _parse_sweep(args.sweep) if args.sweep else [scenario.je_threshold]
    reports = sim.sweep_je(scenario, je_values, seeds)
    import csv as _csv

    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(
            fh,
            fieldnames=[
                "seed",
                "timestamp",
                "je",
                "rmse_now",
                "rmse_1h",
                "rmse_3h",
                "rmse_10h",
                "wake_fraction",
                "ground_energy",
                "aerial_energy",
            ],
        )
        writer.writeheader()
        for report in reports:
            for row in sim.report_rows(report):
                writer.writerow(row)
    print(f"{len(reports)} runs ({len(seeds)} seeds x {len(je_values)} thresholds) -> {args.output}")
    return 0


def _cmd_dataset(args, cfg) -> int:
    if args.action == "scenario":
        scenario = sim.default_scenario(seed=args.seed)
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(sim.scenario_to_dict(scenario), fh, indent=1)
        print(f"default scenario -> {args.output}")
        return 0
    if args.action == "images":
        from .imaging import write_ppm

        rng = np.random.default_rng(args.seed)
        os.makedirs(args.output, exist_ok=True)
        base = sim.make_base_image(args.size, args.seed)
        entries = []
        for i in range(args.count):
            aqi = float(rng.uniform(0, 500))
            img, label = sim.gen_haze_image(base, aqi)
            name = f"haze_{i:04d}.ppm"
            write_ppm(img, os.path.join(args.output, name))
            entries.append({"path": name, "aqi": label})
        manifest = {"images": entries, "size": args.size}
        with open(os.path.join(args.output, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
        print(f"{args.count} labeled images -> {args.output}")
        return 0
    if args.action == "history":
        scenario = sim.default_scenario(seed=args.seed)
        ss = np.random.SeedSequence(args.seed)
        rng_field, rng_pick, rng_weather = [np.random.default_rng(s) for s in ss.spawn(3)]
        fld = sim.gen_field(scenario.field, args.stamps, int(rng_field.integers(0, 2**31)))
        cubes = sim.cube_grid(scenario.field)
        n_pick = max(1, int(round(args.fraction * len(cubes))))
        picked = set(
            cubes[i].index for i in rng_pick.choice(len(cubes), size=n_pick, replace=False)
        )
        weather = sim.gen_weather_series(args.stamps, rng_weather)
        rows = []
        for t in range(args.stamps):
            w, wsp, wdir, hum, temp = weather[t]
            for cube in cubes:
                rows.append(
                    {
                        "timestamp": float(t),
                        "index": cube.index,
                        "aqi": fld.at(cube.index, t) if cube.index in picked else None,
                        "weather": w,
                        "wind_speed": wsp,
                        "wind_dir": wdir,
                        "humidity": hum,
                        "temperature": temp,
                    }
                )
        tensorio.write_history_csv(args.output, rows)
        print(f"{args.stamps} stamps x {len(cubes)} cubes -> {args.output}")
        return 0
    if args.action == "deployment":
        devices, pois = sim.default_wakeup_deployment(n=args.n, seed=args.seed)
        pois = pois[: args.k]
        tensorio.write_points_csv(args.devices, [(d.id, d.x, d.y) for d in devices])
        tensorio.write_points_csv(args.pois, [(p.id, p.x, p.y) for p in pois])
        print(f"{args.n} devices, {len(pois)} POIs -> {args.devices}, {args.pois}")
        return 0
    raise AqiSenseError(f"unknown dataset action {args.action!r}")


_DISPATCH = {
    ("features", "extract"): _cmd_features_extract,
    ("cnn", "train"): _cmd_cnn_train,
    ("cnn", "infer"): _cmd_cnn_infer,
    ("graph", "infer"): _cmd_graph_infer,
    ("graph", "forecast"): _cmd_graph_forecast,
    ("regions", "divide"): _cmd_regions_divide,
    ("wakeup", "plan"): _cmd_wakeup_plan,
    ("simulate", "run"): _cmd_simulate_run,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # friendlier diagnostics than argparse's default for unknown subcommands
    positional = [a for a in argv if not a.startswith("-")]
    if positional and positional[0] not in COMMANDS:
        print(f"aqisense: unknown command {positional[0]!r}", file=sys.stderr)
        return 2
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help()
        return 2
    if getattr(args, "action", None) is None:
        print(f"aqisense {args.command}: missing action", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.command == "dataset":
            return _cmd_dataset(args, cfg)
        return _DISPATCH[(args.command, args.action)](args, cfg)
    except AqiSenseError as exc:
        print(f"aqisense: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"aqisense: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
