"""Headless command-line driver: train, replay interactive sessions,
benchmark the pipeline, generate phantom datasets, serve the HTTP API.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import volume as volmod
from .backend import BACKEND_NAME, get_backend
from .errors import IoFailureError, OverlappingSelectionError, PipelineError
from .features import DEFAULT_CHANNEL_WEIGHTS, build_feature_field, default_stride, sample_features
from .groups import GroupRegistry, build_color_volume
from .lattice import TrainingParams, build_lattice, load_snapshot, save_snapshot
from .render import Camera, RenderSettings, default_camera, raycast, write_png
from .som import assign_voxels, compute_umatrix, quantization_error, topographic_error, train

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2


def _add_volume_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--volume", help="path to the .raw volume")
    p.add_argument("--meta", help="path to the JSON sidecar (default: <volume>.json)")
    p.add_argument("--phantom", help="synthetic volume kind instead of a file "
                                     "(constant|ramp-x|two-blobs|quadratic-x|demo-ct)")
    p.add_argument("--dims", default="32,32,32", help="phantom dims as nx,ny,nz")
    p.add_argument("--feature-weights", default=None,
                   help="six comma-separated channel weights")


def _add_training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--level", type=int, default=3, help="lattice subdivision level")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--eta0", type=float, default=0.5)
    p.add_argument("--eta-min", type=float, default=0.01)
    p.add_argument("--sigma0", type=float, default=float(np.pi / 4))
    p.add_argument("--sigma-min", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stride", type=int, default=0,
                   help="training subsample stride (0 = aim for ~50k samples)")


def _parse_dims(text: str) -> tuple[int, int, int]:
    parts = [int(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"dims must be nx,ny,nz, got {text!r}")
    return tuple(parts)


def _parse_weights(text: str | None):
    if text is None:
        return DEFAULT_CHANNEL_WEIGHTS
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 6:
        raise ValueError(f"feature weights need 6 values, got {text!r}")
    return tuple(parts)


def _load_volume(args) -> volmod.Volume:
    if args.phantom:
        dims = _parse_dims(args.dims)
        if args.phantom == "demo-ct":
            return volmod.make_demo_ct(dims)
        return volmod.make_phantom(args.phantom, dims=dims)
    if not args.volume:
        raise FileNotFoundError("either --volume or --phantom is required")
    return volmod.load_raw_file(args.volume, args.meta)


def _parse_camera(text: str | None, vol: volmod.Volume) -> Camera:
    if not text:
        return default_camera(vol)
    doc = json.loads(text if text.lstrip().startswith("{") else Path(text).read_text())
    return Camera.from_dict(doc)


def _parse_settings(args) -> RenderSettings:
    doc = {}
    if getattr(args, "settings_json", None):
        text = args.settings_json
        doc = json.loads(text if text.lstrip().startswith("{") else Path(text).read_text())
    if getattr(args, "width", None):
        doc["width"] = args.width
    if getattr(args, "height", None):
        doc["height"] = args.height
    if getattr(args, "step", None):
        doc["step"] = args.step
    return RenderSettings.from_dict(doc)


def _emit(report: dict, out: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    print(text)


def _params_from_args(args, n_voxels: int) -> TrainingParams:
    stride = args.stride if args.stride >= 1 else default_stride(n_voxels)
    return TrainingParams(
        epochs=args.epochs, eta0=args.eta0, eta_min=args.eta_min,
        sigma0=args.sigma0, sigma_min=args.sigma_min, seed=args.seed, stride=stride,
    )


def cmd_train(args) -> int:
    kernels = args.kernels
    vol = _load_volume(args)
    weights = _parse_weights(args.feature_weights)
    field = build_feature_field(vol, weights)
    params = _params_from_args(args, vol.meta.n_voxels)
    _, samples = sample_features(field, params.stride, params.seed)
    lattice = build_lattice(args.level, seed=params.seed)
    qe_initial = quantization_error(lattice, samples, channel_weights=field.weights, kernels=kernels)
    train(lattice, samples, params, channel_weights=field.weights, kernels=kernels)
    save_snapshot(lattice, args.out)
    report = {
        "snapshot": str(args.out),
        "backend": kernels.NAME,
        "level": args.level,
        "node_count": lattice.n_nodes,
        "n_voxels": vol.meta.n_voxels,
        "sample_count": int(samples.shape[0]),
        "params": params.to_dict(),
        "feature_weights": list(weights),
        "quantization_error_initial": qe_initial,
        "quantization_error": quantization_error(
            lattice, samples, channel_weights=field.weights, kernels=kernels),
        "topographic_error": topographic_error(
            lattice, samples, channel_weights=field.weights, kernels=kernels),
    }
    _emit(report, args.metrics_out)
    return EXIT_OK


def cmd_replay(args) -> int:
    vol = _load_volume(args)
    weights = _parse_weights(args.feature_weights)
    field = build_feature_field(vol, weights)
    lattice = load_snapshot(args.snapshot)
    assignment = assign_voxels(lattice, field, kernels=args.kernels)
    script = json.loads(Path(args.script).read_text()) if args.script else []
    registry = GroupRegistry()
    for entry in script:
        registry.define(entry["node_ids"], assignment, vol)
    color_volume = build_color_volume(registry.groups, vol, field)
    camera = _parse_camera(args.camera_json, vol)
    settings = _parse_settings(args)
    img = raycast(color_volume, vol, camera, settings, kernels=args.kernels)
    write_png(img, args.out)
    report = {
        "out": str(args.out),
        "groups": [
            {"id": g.id, "node_count": len(g.node_ids), "voxel_count": g.voxel_count,
             "variance": g.variance, "opacity": g.opacity, "hue": g.hue}
            for g in registry.groups
        ],
        "pixel_sha256": hashlib.sha256(img.pixels.tobytes()).hexdigest(),
    }
    _emit(report, None)
    return EXIT_OK


def cmd_bench(args) -> int:
    def run(backend_name: str) -> dict:
        kernels = get_backend(backend_name)
        vol = _load_volume(args)
        weights = _parse_weights(args.feature_weights)
        timings = {}
        t0 = time.perf_counter()
        field = build_feature_field(vol, weights)
        timings["feature_build"] = time.perf_counter() - t0
        params = _params_from_args(args, vol.meta.n_voxels)
        _, samples = sample_features(field, params.stride, params.seed)
        lattice = build_lattice(args.level, seed=params.seed)
        t0 = time.perf_counter()
        train(lattice, samples, params, channel_weights=field.weights, kernels=kernels)
        timings["train"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        assignment = assign_voxels(lattice, field, kernels=kernels)
        timings["assign"] = time.perf_counter() - t0
        umatrix = compute_umatrix(lattice, channel_weights=field.weights)
        # render one frame with every node in a single group, worst case
        registry = GroupRegistry()
        registry.define(list(range(lattice.n_nodes)), assignment, vol)
        color_volume = build_color_volume(registry.groups, vol, field)
        settings = _parse_settings(args)
        camera = _parse_camera(args.camera_json, vol)
        t0 = time.perf_counter()
        raycast(color_volume, vol, camera, settings, kernels=kernels)
        timings["render"] = time.perf_counter() - t0
        timings["total"] = sum(timings.values())
        return {
            "backend": kernels.NAME,
            "dims": list(vol.dims),
            "n_voxels": vol.meta.n_voxels,
            "sample_count": int(samples.shape[0]),
            "stride": params.stride,
            "image": {"width": settings.width, "height": settings.height},
            "umatrix_max": float(umatrix.values.max()),
            "timings_seconds": timings,
        }

    if args.compare_backends:
        report = {"native": None, "python": None}
        try:
            report["native"] = run("native")
        except ImportError:
            report["native"] = {"error": "native backend not built"}
        report["python"] = run("python")
    else:
        report = run(args.backend)
    _emit(report, args.out)
    return EXIT_OK


def cmd_phantom(args) -> int:
    dims = _parse_dims(args.dims)
    if args.kind == "demo-ct":
        vol = volmod.make_demo_ct(dims)
    else:
        kwargs = {}
        if args.value is not None:
            kwargs["value"] = args.value
        if args.i1 is not None:
            kwargs["i1"] = args.i1
        if args.i2 is not None:
            kwargs["i2"] = args.i2
        if args.a is not None:
            kwargs["a"] = args.a
        vol = volmod.make_phantom(args.kind, dims=dims, **kwargs)
    # quantize to the requested bit depth so the file round-trips as raw
    depth = args.bits
    max_val = 255 if depth == 8 else 65535
    meta = volmod.VolumeMeta(dims=dims, spacing=vol.meta.spacing, bits_per_sample=depth,
                             byte_order="little", source_path=str(args.out))
    raw = np.round(vol.intensities * max_val)
    data = raw.astype(np.uint8 if depth == 8 else np.dtype("<u2")).tobytes()
    Path(args.out).write_bytes(data)
    volmod.write_sidecar(meta, Path(args.out).with_suffix(".json"))
    _emit({"out": str(args.out), "dims": list(dims), "bits": depth,
           "n_voxels": meta.n_voxels}, None)
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import app

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="somdvr", description=__doc__)
    parser.add_argument("--backend", choices=["auto", "native", "python"], default="auto",
                        help="kernel backend override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a lattice and write a snapshot")
    _add_volume_args(p)
    _add_training_args(p)
    p.add_argument("--out", required=True, help="snapshot JSON path")
    p.add_argument("--metrics-out", help="also write the metrics report here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("replay", help="apply a group script to a snapshot and render")
    _add_volume_args(p)
    p.add_argument("--snapshot", required=True)
    p.add_argument("--script", help="JSON list of {node_ids} in definition order")
    p.add_argument("--camera-json", help="camera as JSON literal or file path")
    p.add_argument("--settings-json", help="render settings as JSON literal or file path")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("bench", help="time feature build, training, assignment, render")
    _add_volume_args(p)
    _add_training_args(p)
    p.add_argument("--camera-json")
    p.add_argument("--settings-json")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--step", type=float)
    p.add_argument("--compare-backends", action="store_true",
                   help="run both kernel backends and report each")
    p.add_argument("--out", help="write the JSON report here as well")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("phantom", help="write a synthetic volume as .raw + sidecar")
    p.add_argument("--kind", required=True,
                   choices=["constant", "ramp-x", "two-blobs", "quadratic-x", "demo-ct"])
    p.add_argument("--dims", default="32,32,32")
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.add_argument("--value", type=float, help="constant phantom value")
    p.add_argument("--i1", type=float, help="two-blobs first intensity")
    p.add_argument("--i2", type=float, help="two-blobs second intensity")
    p.add_argument("--a", type=float, help="quadratic-x coefficient")
    p.add_argument("--out", required=True, help="output .raw path")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("serve", help="run the HTTP session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    args.kernels = get_backend(args.backend)
    try:
        return args.func(args)
    except (FileNotFoundError, IoFailureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OverlappingSelectionError as exc:
        print(f"error: overlapping selection: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
