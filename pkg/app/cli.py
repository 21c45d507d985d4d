"""
Command-line entry point: python -m app.cli <command>

Every failure prints one JSON error record on stderr and exits with 1.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.config import PipelineConfig, configure_logging, load_config
from app.errors import SingleViewError
from app.vision.frames import ImageDirectory, write_video
from app.vision.metrics import evaluate
from app.vision.pipeline import AlignmentMode, compare_modes, detect_moves, run_pipeline
from app.vision.simulator import load_scenario, scaled, simulate

logger = logging.getLogger("app.cli")


def _config(path: Optional[str]) -> PipelineConfig:
    return load_config(path)


def _emit(record: dict, path: Optional[str] = None) -> None:
    text = json.dumps(record, indent=2)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    print(text)


def cmd_simulate(args: argparse.Namespace) -> None:
    scenario = scaled(load_scenario(args.scenario), args.size, args.time)
    frames, truth = simulate(scenario, args.out, args.seed)
    _emit(
        {
            "scenario": scenario.name,
            "out": args.out,
            "frames": len(frames),
            "cameras": len(frames.camera_ids),
            "move_frames": truth.move_frames,
        }
    )


def cmd_run(args: argparse.Namespace) -> None:
    result = run_pipeline(_config(args.config), args.input, args.out, alignment_mode=args.alignment)
    _emit(
        {
            "out": args.out,
            "frames": len(result.output),
            "alignment_states": [s.valid_from for s in result.states],
            "movements": result.log.movement_times(),
            "rehomings": result.log.rehoming_times(),
            "segments": len(result.schedule.segments),
        }
    )


def cmd_evaluate(args: argparse.Namespace) -> None:
    config = _config(args.config)
    video = ImageDirectory(args.input)
    baseline = ImageDirectory(args.baseline) if args.baseline else None
    _emit(evaluate(video, baseline, config.metrics, include_trace=args.trace), args.report)


def cmd_detect_moves(args: argparse.Namespace) -> None:
    scan = detect_moves(args.input, _config(args.config))
    _emit(
        {
            "t_c": scan.event.t_c if scan.event else None,
            "candidates": scan.candidates,
            "thresholds": scan.thresholds,
        }
    )


def cmd_compare(args: argparse.Namespace) -> None:
    config = _config(args.config)
    results = compare_modes(args.input, config)
    out = Path(args.out)
    reports = {}
    for mode, result in results.items():
        z = [result.output[t] for t in range(len(result.output))]
        write_video(out / mode / "z", z)
        result.log.write(out / mode / "events.json")
        reports[mode] = evaluate(z, settings=config.metrics)
    _emit(reports, args.report)


def cmd_serve(args: argparse.Namespace) -> None:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.cli", description="Virtual single-view video toolkit")
    parser.add_argument("--log-level", default=None, help="Overrides SVV_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Render a scenario to frame directories plus ground truth")
    p.add_argument("--scenario", required=True, help="Scenario JSON file or built-in name")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=float, default=1.0, help="Image size scale")
    p.add_argument("--time", type=float, default=1.0, help="Timeline scale")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="Full pipeline: align, track movements, select, synthesize")
    p.add_argument("--config", default=None)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alignment", choices=[m.value for m in AlignmentMode], default=AlignmentMode.AUTO.value)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="ITF/AvSpeed report of a single-view video")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--baseline", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--trace", action="store_true", help="Include per-transition PSNR and displacement")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("detect-moves", help="Movement detection only; prints t_c candidates")
    p.add_argument("--config", default=None)
    p.add_argument("--in", dest="input", required=True)
    p.set_defaults(func=cmd_detect_moves)

    p = sub.add_parser("compare", help="z and metrics for auto, fixed and no alignment under one schedule")
    p.add_argument("--config", default=None)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("serve", help="Start the HTTP service")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        args.func(args)
    except SingleViewError as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(json.dumps(e.to_record()), file=sys.stderr)
        return 1
    except Exception as e:
        logger.error("Command %s failed unexpectedly", args.command, exc_info=True)
        record = {"error": "internal", "message": str(e) or type(e).__name__, "exception": type(e).__name__}
        print(json.dumps(record), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
