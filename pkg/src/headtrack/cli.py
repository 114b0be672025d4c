"""Operator entry points.

    headtrack track --scenario s.json [--trace out.jsonl] [--backend remote]
    headtrack serve --scenario s.json --port 9000
    headtrack eval  --trace out.jsonl [--report r.json] [--curve c.csv]
    headtrack fit   --landmarks lm.json
    headtrack bench

Configuration comes from an optional JSON file (--config); command line
flags override file values and --dump-config prints the merged result.
Exit codes: 0 ok, 1 runtime failure, 2 configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import evaluation, netproto, pipeline, pose_fit, sim, temporal
from .anchoring import reinit_landmarks
from .errors import (
    ConfigError,
    HeadTrackError,
    ParseError,
    ValidationError,
)
from .face_model import (
    LEFT_OUTER_EYE,
    RIGHT_OUTER_EYE,
    load_default_model,
    load_model,
    scale_to_ipd,
)
from .failure import HogParams, extract_hog, load_predictor
from .geometry import CameraIntrinsics
from .pose_fit import FitParams
from .temporal import FilterConfig

TRACE_FORMAT_VERSION = 1

DEFAULT_CONFIG = {
    "model_path": None,
    "intrinsics": {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0},
    "fit": {
        "max_iterations": 50,
        "step_tolerance": 1e-10,
        "residual_tolerance": 1e-9,
        "weight_regularization": 1e-3,
        "damping_floor": 1e-9,
        "freeze_weights": False,
    },
    "filter": {
        "sigma_a": 10.0,
        "sigma_z": 0.01,
        "tau_m": 0.1,
        "max_prediction_horizon": 0.120,
        "avg_translation_threshold": 0.005,
        "avg_rotation_threshold": 0.06981317007977318,
        "acquisition_to_render_delay": 0.170,
    },
    "hog": {
        "patch_size": 16,
        "cell_size": 4,
        "orientation_bins": 9,
        "signed": False,
    },
    "attributes": {"smiling": 0.5, "eyebrow_raising": 0.5, "mouth_opening": 0.5},
    "backend": {"endpoint": None, "timeout": 0.1, "retry_interval": 1.0},
    "failure_predictor_path": None,
    "eval": {"left_outer_eye": LEFT_OUTER_EYE, "right_outer_eye": RIGHT_OUTER_EYE},
}


def _merge(base, override, path="config"):
    if not isinstance(override, dict):
        raise ConfigError(f"{path}: expected an object")
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"{path}.{key}: unknown field")
        if isinstance(base[key], dict) and base[key]:
            out[key] = _merge(base[key], value, f"{path}.{key}")
        else:
            out[key] = value
    return out


def load_config(path=None) -> dict:
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno}: {e.msg}") from e
    return _merge(DEFAULT_CONFIG, doc)


def _typed(cfg: dict):
    """Build the typed objects a command needs from the merged config."""
    try:
        intr = CameraIntrinsics(**{k: float(v) for k, v in cfg["intrinsics"].items()})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config.intrinsics: {e}") from e
    try:
        fit_params = FitParams(**cfg["fit"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config.fit: {e}") from e
    try:
        filter_cfg = FilterConfig(**cfg["filter"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config.filter: {e}") from e
    try:
        hog = HogParams(**cfg["hog"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config.hog: {e}") from e
    return intr, fit_params, filter_cfg, hog


def _load_model_from(cfg: dict):
    path = cfg.get("model_path")
    if path is None:
        return load_default_model()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model file not found: {p}")
    return scale_to_ipd(load_model(p))


def _build_tracker(cfg, model, intr, fit_params, filter_cfg, frames, scenario,
                   backend_choice, endpoint):
    local = sim.oracle_backend(frames, scenario)
    detector = sim.oracle_detector(frames, scenario)
    remote = None
    if backend_choice == "remote":
        ep = endpoint or cfg["backend"]["endpoint"]
        if not ep:
            raise ConfigError("remote backend requested but no endpoint configured")
        host, _, port = str(ep).rpartition(":")
        if not host:
            raise ConfigError(f"config.backend.endpoint: expected host:port, got {ep!r}")
        remote = netproto.RemoteAlignmentBackend(
            host,
            int(port),
            timeout=float(cfg["backend"]["timeout"]),
            retry_interval=float(cfg["backend"]["retry_interval"]),
        )
    predictor = None
    if cfg.get("failure_predictor_path"):
        predictor = load_predictor(cfg["failure_predictor_path"])
    tracker_cfg = pipeline.TrackerConfig(
        model=model,
        intrinsics=intr,
        detector=detector,
        local_backend=local,
        remote_backend=remote,
        fit_params=fit_params,
        filter_config=filter_cfg,
        attribute_thresholds=dict(cfg["attributes"]),
        failure_predictor=predictor,
        image_size=scenario.image_size,
    )
    return pipeline.Tracker(tracker_cfg), remote


def cmd_track(args) -> int:
    cfg = load_config(args.config)
    intr, fit_params, filter_cfg, _ = _typed(cfg)
    model = _load_model_from(cfg)
    scenario = sim.load_scenario(args.scenario)
    frames = sim.generate(scenario, model, intr)
    tracker, remote = _build_tracker(
        cfg, model, intr, fit_params, filter_cfg, frames, scenario,
        args.backend, args.endpoint,
    )

    records = []
    backend_counts = {"local": 0, "remote": 0}
    residuals = []
    for frame in frames:
        out = tracker.step(frame, scenario.render_time(frame.acquisition_time))
        rec = {"type": "frame", "index": frame.index, "time": frame.acquisition_time}
        rec.update(out.to_record())
        rec["gt_landmarks"] = frame.true_landmarks.tolist()
        rec["occluded"] = frame.occluded
        records.append(rec)
        if out.tracking_valid:
            backend_counts[out.backend_used] += 1
            residuals.append(out.residual)
    if remote is not None:
        remote.close()

    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as f:
            header = {
                "type": "header",
                "trace_format_version": TRACE_FORMAT_VERSION,
                "frames": len(frames),
                "scenario": str(args.scenario),
            }
            f.write(json.dumps(header) + "\n")
            for rec in records:
                f.write(json.dumps(rec) + "\n")

    tracked = sum(1 for r in records if r["tracking_valid"])
    pct = 100.0 * tracked / len(records) if records else 0.0
    mean_res = float(np.mean(residuals)) if residuals else float("nan")
    print(f"frames:        {len(records)}")
    print(f"tracked:       {tracked} ({pct:.1f}%)")
    print(f"mean residual: {mean_res:.3e} px")
    print(f"backend usage: local={backend_counts['local']} remote={backend_counts['remote']}")
    if args.backend == "remote" and backend_counts["local"] > 0:
        print("note: fell back to the local backend on some frames")
    return 0


def cmd_serve(args) -> int:
    cfg = load_config(args.config)
    intr, *_ = _typed(cfg)
    model = _load_model_from(cfg)
    scenario = sim.load_scenario(args.scenario)
    frames = sim.generate(scenario, model, intr)
    backend = sim.oracle_backend(frames, scenario)
    server = netproto.AlignServer(backend, host=args.host, port=args.port).start()
    print(f"serving alignment on {server.host}:{server.port}", flush=True)
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    left = int(cfg["eval"]["left_outer_eye"])
    right = int(cfg["eval"]["right_outer_eye"])
    if args.trace:
        errors, n_frames, n_valid = evaluation.errors_from_trace(
            args.trace, left, right, untracked_as_failure=args.untracked_as_failure
        )
        extra = {"frames": n_frames, "tracked": n_valid}
    elif args.csv:
        errors = evaluation.errors_from_landmark_csv(args.csv, left, right)
        extra = {"frames": int(errors.size)}
    else:
        raise ConfigError("eval needs --trace or --csv")
    report = evaluation.summarize(errors)
    report.update(extra)
    print(f"frames evaluated: {report['count']}")
    print(f"AUC(0.08):        {report['auc_008']:.2f}")
    print(f"failure rate:     {report['failure_rate_percent']:.2f}%")
    print(f"mean error:       {report['mean_error']:.4f}")
    if args.report:
        evaluation.write_report(args.report, report)
    if args.curve:
        evaluation.write_ced_csv(args.curve, errors)
    return 0


def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    intr, fit_params, *_ = _typed(cfg)
    model = _load_model_from(cfg)
    try:
        with open(args.landmarks, "r", encoding="utf-8") as f:
            doc = json.load(f)
        landmarks = np.array(doc["landmarks"], dtype=np.float64)
    except FileNotFoundError:
        raise ConfigError(f"landmark file not found: {args.landmarks}") from None
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{args.landmarks}: {e}") from e
    init = pose_fit.initial_guess(model, landmarks, intr)
    result = pose_fit.fit(model, landmarks, intr, init, fit_params)
    attrs = pose_fit.estimate_attributes(model, result.weights, dict(cfg["attributes"]))
    out = {
        "rotation": result.pose.rotation.tolist(),
        "translation": result.pose.translation.tolist(),
        "weights": dict(zip(model.blendshape_names, result.weights.tolist())),
        "rms_residual_px": result.rms_residual,
        "iterations": result.iterations,
        "converged": result.converged,
        "attributes": sorted(attrs),
    }
    text = json.dumps(out, indent=2)
    if args.output:
        Path(args.output).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    return 0


def _time_loop(fn, repeats: int):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append((time.perf_counter_ns() - t0) / 1e3)
    return {
        "median_us": statistics.median(samples),
        "p95_us": float(np.percentile(samples, 95)),
    }


def cmd_bench(args) -> int:
    cfg = load_config(args.config)
    intr, fit_params, filter_cfg, hog = _typed(cfg)
    model = _load_model_from(cfg)

    scenario = sim.ScenarioConfig(
        duration=2,
        head_keyframes=(sim.PoseKeyframe(0.0, (0.0, 0.0, 1.0)),),
        camera_keyframes=(sim.PoseKeyframe(0.0, (0.0, 0.0, 0.0)),),
    )
    frames = sim.generate(scenario, model, intr)
    gt = frames[0]
    init = pose_fit.HeadPoseFit(
        gt.true_cam_pose, np.zeros(model.blendshape_count), 0.0, 0, False
    )
    warm = pose_fit.fit(model, gt.true_landmarks, intr, init, fit_params)
    kal = temporal.AxisKalman.from_measurement(1.0, 0.0, filter_cfg)
    image = sim.rasterize(model, gt.true_cam_pose, intr, (640, 480))
    center = gt.true_landmarks[0]
    req = netproto.AlignRequest(
        frame_id=1,
        acquisition_time_us=0,
        crop=netproto.CropTransform(1.0, 0.0, 0.0, 0.0),
        init_landmarks=np.clip(gt.true_landmarks % 112, 0, 111.0),
        patch=np.zeros((112, 112), dtype=np.uint8),
    )

    rows = {
        "fit_warm_51lm": lambda: pose_fit.fit(
            model, gt.true_landmarks, intr, warm, fit_params
        ),
        "reinit_51lm": lambda: reinit_landmarks(
            gt.true_landmarks, gt.true_world_pose.translation, gt.ctx, gt.ctx, intr
        ),
        "kalman_step": lambda: temporal.kalman_step(kal, 1 / 30, 1.0, filter_cfg),
        "hog_per_landmark": lambda: extract_hog(image, center, hog),
        "encode_request": lambda: netproto.encode_request(req),
    }
    print(f"{'operation':<20}{'median (us)':>14}{'p95 (us)':>14}")
    results = {}
    for name, fn in rows.items():
        fn()  # warm-up
        stats = _time_loop(fn, args.repeats)
        results[name] = stats
        print(f"{name:<20}{stats['median_us']:>14.1f}{stats['p95_us']:>14.1f}")
    if args.json:
        Path(args.json).write_text(json.dumps(results, indent=2) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="headtrack", description="head pose tracking toolkit"
    )
    parser.add_argument("--config", help="JSON config file", default=None)
    parser.add_argument(
        "--dump-config", action="store_true", help="print the merged config and exit"
    )
    parser.add_argument(
        "--json-errors", action="store_true",
        help="emit errors as machine-parsable JSON on stderr",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("track", help="run a scenario through the tracking pipeline")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--trace", help="write a per-frame JSONL trace here")
    p.add_argument("--backend", choices=["local", "remote"], default="local")
    p.add_argument("--endpoint", help="host:port of the remote alignment server")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("serve", help="serve an oracle alignment backend")
    p.add_argument("--scenario", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=9400)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="compute metrics from a trace or CSV")
    p.add_argument("--trace", help="pipeline trace (JSON lines)")
    p.add_argument("--csv", help="CSV of predicted + ground-truth landmarks")
    p.add_argument("--report", help="write a JSON report here")
    p.add_argument("--curve", help="write CED curve samples (CSV) here")
    p.add_argument(
        "--untracked-as-failure", action="store_true",
        help="count untracked frames as failures",
    )
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit", help="fit the model to one landmark set")
    p.add_argument("--landmarks", required=True, help='JSON {"landmarks": [[u, v], ...]}')
    p.add_argument("--output", help="write the pose JSON here instead of stdout")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bench", help="micro-benchmarks of the hot paths")
    p.add_argument("--repeats", type=int, default=200)
    p.add_argument("--json", help="also write results as JSON here")
    p.set_defaults(func=cmd_bench)
    return parser


def demo_scenario_path():
    """Filesystem path of the bundled demo scenario."""
    return resources.files("headtrack").joinpath("data/demo_scenario.json")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.dump_config:
            print(json.dumps(load_config(args.config), indent=2, sort_keys=True))
            return 0
        if args.command is None:
            parser.print_help()
            return 2
        return args.func(args)
    except (ConfigError, ParseError, ValidationError) as e:
        _report_error(args, e)
        return 2
    except FileNotFoundError as e:
        _report_error(args, e)
        return 2
    except HeadTrackError as e:
        _report_error(args, e)
        return 1


def _report_error(args, exc) -> None:
    if getattr(args, "json_errors", False):
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
    else:
        print(f"error: {exc}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
