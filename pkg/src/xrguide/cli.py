"""Command-line front end: serve, simulate, eval, and plan verbs."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
from pathlib import Path

from .evalreport import eval_report
from .fsm import SessionStatus
from .harness import (
    DATA_DIR,
    Scenario,
    bundled_scenarios,
    build_engine,
    load_bundled,
    run_many,
    run_scenario,
)


def _load_scenario(ref: str) -> Scenario:
    if Path(ref).exists():
        return Scenario.load(ref)
    return load_bundled(ref)


def cmd_simulate(args) -> int:
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="xrguide-sim-"))
    if args.all:
        names = bundled_scenarios()
        reports = run_many(names, workdir, parallel=args.parallel)
    else:
        reports = [run_scenario(_load_scenario(ref), workdir / ref) for ref in args.scenario]
    exit_code = 0
    for report in reports:
        print(json.dumps(report.to_wire(), indent=2))
        if not report.passed:
            exit_code = 1
    return exit_code


def _looks_like_labels(path: str) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        return isinstance(obj, dict) and "steps" in obj
    except (OSError, ValueError):
        return False


def cmd_eval(args) -> int:
    inputs = list(args.inputs or [])
    labels = args.labels
    if labels is None and inputs and _looks_like_labels(inputs[-1]):
        labels = inputs.pop()
    labels = labels or str(DATA_DIR / "labels" / "steps.json")
    logs = (args.logs or []) + inputs
    report = eval_report(labels, logs or None)
    if args.json:
        print(json.dumps(report.to_wire(), indent=2))
    else:
        print(report.to_text())
    return 0


def _scenario_for_prompt(prompt: str) -> Scenario:
    for name in bundled_scenarios():
        scenario = load_bundled(name)
        if scenario.prompt == prompt:
            return scenario
    raise SystemExit(
        f"no bundled fixtures match the prompt {prompt!r}; pass --scenario "
        f"(bundled: {', '.join(bundled_scenarios())})"
    )


def cmd_plan(args) -> int:
    if not args.prompt and not args.scenario:
        raise SystemExit("plan needs a prompt or --scenario")
    if args.scenario:
        scenario = _load_scenario(args.scenario)
        prompt = args.prompt or scenario.prompt
    else:
        prompt = args.prompt
        scenario = _scenario_for_prompt(prompt)
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="xrguide-plan-"))
    engine = build_engine(scenario, workdir, mode=args.mode)
    engine.start_task(prompt)
    if engine.status == SessionStatus.FAILED or engine.plan is None:
        print(json.dumps({"error": [e.payload for e in engine.events if e.kind.value == "Error"]}))
        return 1
    plan = engine.plan
    print(
        json.dumps(
            {
                "goal": plan.goal,
                "steps": [
                    {
                        "index": s.index,
                        "instruction": s.instruction,
                        "stepType": s.step_type.value,
                        "status": s.status.value,
                    }
                    for s in plan.steps
                ],
                "activeIndex": plan.active_index,
                "warnings": plan.warnings,
            },
            indent=2,
        )
    )
    return 0


def cmd_serve(args) -> int:
    from .gateway import Gateway
    from .media import AssetStore, MediaPipeline, MockSegmentation, OfflineProvider
    from .fsm import GuidanceEngine
    from .harness import load_overlay_catalog
    from .server import BlobStore, SessionHub, serve

    scenario = _load_scenario(args.scenario) if args.scenario else None
    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="xrguide-srv-"))
    blobs = BlobStore(workdir / "blobs")

    def engine_factory(session_id: str) -> GuidanceEngine:
        # share the blob root so clients can fetch masks and icons by digest
        store = AssetStore(workdir / "blobs")
        if scenario is not None:
            gateway = Gateway(mode=args.mode, fixture_path=scenario.fixtures / "calls.jsonl")
            provider = OfflineProvider(scenario.media_manifest)
            segmentation = MockSegmentation(scenario.seg_boxes) if scenario.seg_boxes else None
        else:
            gateway = Gateway.from_env(mode=args.mode)
            provider = OfflineProvider(args.manifest) if args.manifest else _none_provider()
            segmentation = None
        media = MediaPipeline(
            store=store, provider=provider, gateway=gateway, segmentation=segmentation
        )
        import time

        return GuidanceEngine(
            gateway=gateway,
            media=media,
            clock=time.time,
            overlay_catalog=load_overlay_catalog(store),
        )

    hub = SessionHub(engine_factory, logs_dir=workdir / "logs", blobs=blobs)
    static = args.static or _default_static()
    print(f"session server: ws://{args.host}:{args.port}")
    print(f"blobs/console:  http://{args.host}:{args.blob_port or args.port + 1}")
    print(f"logs:           {workdir / 'logs'}")
    serve(hub, host=args.host, port=args.port, blob_port=args.blob_port, static_dir=static)
    return 0


def _none_provider():
    class _Empty:
        def search(self, query):
            return []

    return _Empty()


def _default_static():
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return candidate if candidate.exists() else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xrguide",
        description="Cross-reality task guidance engine: plan, simulate, serve, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run scenarios end to end and check expectations")
    sim.add_argument("scenario", nargs="*", help="bundled scenario name or scenario JSON path")
    sim.add_argument("--all", action="store_true", help="run every bundled scenario")
    sim.add_argument("--parallel", action="store_true", help="run scenarios concurrently")
    sim.add_argument("--workdir", help="working directory for logs and caches")
    sim.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("eval", help="aggregate labeled runs into the report tables")
    ev.add_argument(
        "inputs",
        nargs="*",
        help="event logs, optionally followed by a labels file (default labels: bundled fixture)",
    )
    ev.add_argument("--labels", help="labels JSON (defaults to the bundled fixture)")
    ev.add_argument("--logs", nargs="*", help="event logs to cross-check against labels")
    ev.add_argument("--json", action="store_true", help="emit JSON instead of text")
    ev.set_defaults(func=cmd_eval)

    pl = sub.add_parser("plan", help="offline pre-task planning only")
    pl.add_argument(
        "prompt",
        nargs="?",
        help="task prompt; replay fixtures are matched by prompt among bundled scenarios",
    )
    pl.add_argument("--scenario", help="bundled scenario name or path supplying the fixtures")
    pl.add_argument("--mode", default="replay", choices=["replay", "record", "live"])
    pl.add_argument("--workdir")
    pl.set_defaults(func=cmd_plan)

    srv = sub.add_parser("serve", help="run the session server")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8731)
    srv.add_argument("--blob-port", type=int, dest="blob_port")
    srv.add_argument("--mode", default="replay", choices=["replay", "record", "live"])
    srv.add_argument("--scenario", help="bundled scenario supplying fixtures for replay mode")
    srv.add_argument("--manifest", help="offline media manifest for live/record modes")
    srv.add_argument("--static", help="directory with the browser console build")
    srv.add_argument("--workdir")
    srv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
