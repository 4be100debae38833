"""Command line front end: synthesize data, run simulations, serve reviews.

Every command exits 0 on success. Failures print one canonical JSON line
to stderr ({"error": <type>, "message": ...}) and exit 1, so scripted
callers can parse them.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
from pathlib import Path

import click

from .config import ConfigError, load_config
from .crowdgate import CrowdGateError, TaskEngine
from .detector import DetectorError, HiddenWorld
from .events import EventLog, EventLogError, canonical_json
from .geometry import GeometryError
from .labelstore import (
    AnnotationState,
    LabelStore,
    StoreError,
    export_boxes,
    import_boxes,
    import_dots,
    open_store,
)
from .orchestrator import LoopReport, OrchestratorError, replay_run, run_simulation
from .seeds import TAG_ASSEMBLE, rng_for
from .worldgen import generate_world, legacy_documents, save_dot_csv, seed_document

_FAILURES = (ConfigError, CrowdGateError, DetectorError, EventLogError,
             GeometryError, OrchestratorError, StoreError, OSError, ValueError)


def guarded(func):
    """Turn known failures into one machine-parsable stderr line."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except _FAILURES as exc:
            line = canonical_json({"error": type(exc).__name__, "message": str(exc)})
            click.echo(line, err=True)
            sys.exit(1)

    return wrapper


def _write_json(path: Path, payload) -> None:
    path.write_text(canonical_json(payload) + "\n", encoding="utf-8")


@click.group()
def main():
    """Iterative box-labeling pipeline: simulate, review, inspect."""


@main.command("init")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="run config (TOML)")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="directory for the synthesized dataset")
@guarded
def init_cmd(config_path: str, out_dir: str):
    """Synthesize a hidden world plus starter labels for the configured mode."""
    cfg = load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = generate_world(cfg.world, cfg.seed)
    world.save(out / "world.json")
    written = ["world.json"]
    if cfg.mode == "legacy_dots":
        boxes, dots, uncovered = legacy_documents(
            world, cfg.world.dot_coverage, cfg.world.seed_fraction, cfg.seed)
        _write_json(out / "legacy_boxes.json", boxes)
        save_dot_csv(dots, out / "legacy_dots.csv")
        _write_json(out / "legacy_uncovered.json", uncovered)
        written += ["legacy_boxes.json", "legacy_dots.csv", "legacy_uncovered.json"]
    else:
        _write_json(out / "seed_boxes.json", seed_document(
            world, cfg.world.seed_fraction, cfg.seed))
        written.append("seed_boxes.json")
    click.echo(f"wrote {', '.join(written)} to {out}")


@main.command("import-boxes")
@click.option("--journal", required=True, type=click.Path(dir_okay=False),
              help="journal file to create")
@click.option("--boxes", "boxes_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="box document (JSON)")
@guarded
def import_boxes_cmd(journal: str, boxes_path: str):
    """Start a fresh journal from a verified box document."""
    journal_path = Path(journal)
    if journal_path.exists():
        raise StoreError(f"{journal_path} already exists; refusing to overwrite")
    journal_path.parent.mkdir(parents=True, exist_ok=True)
    with open(boxes_path, encoding="utf-8") as fh:
        document = json.load(fh)
    store = import_boxes(document, LabelStore(EventLog(journal_path)))
    store.commit()
    click.echo(f"imported {len(store.annotations)} starter boxes into {journal_path}")


@main.command("import-dots")
@click.option("--journal", required=True, type=click.Path(exists=True, dir_okay=False),
              help="existing journal to append to")
@click.option("--dots", "dots_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="dot rows (CSV)")
@click.option("--half-extent", type=float, default=40.0, show_default=True,
              help="half side of the box drawn around each dot")
@guarded
def import_dots_cmd(journal: str, dots_path: str, half_extent: float):
    """Append dot-derived proposals to an existing journal."""
    store = open_store(journal)
    ids = import_dots(dots_path, store, half_extent=half_extent)
    store.commit()
    click.echo(f"imported {len(ids)} dot proposals into {journal}")


def _loop_line(report: LoopReport) -> str:
    total = sum(report.counts.values())
    delta = sum(report.deltas.values())
    map50 = "n/a" if report.map50 is None else f"{report.map50:.3f}"
    return (f"loop {report.loop_index}: labels {total} (+{delta}) "
            f"coverage {report.coverage:.3f} map50 {map50} "
            f"new_ratio {report.new_label_ratio:.4f} "
            f"hits {report.hits_accepted}/{report.hits_published} accepted")


@main.command("run-sim")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="run config (TOML)")
@click.option("--run-dir", default=None, type=click.Path(file_okay=False),
              help="artifact directory (default: the config's paths.output)")
@click.option("--run-seed", type=int, default=0, show_default=True,
              help="per-run stream selector; the dataset seed stays in the config")
@guarded
def run_sim_cmd(config_path: str, run_dir: str | None, run_seed: int):
    """Run the full labeling simulation and write its artifacts."""
    cfg = load_config(config_path)
    world = HiddenWorld.load(cfg.paths.world) if cfg.paths.world else None
    label_document = None
    if cfg.paths.boxes:
        with open(cfg.paths.boxes, encoding="utf-8") as fh:
            label_document = json.load(fh)
    dot_rows = None
    if cfg.paths.dots:
        with open(cfg.paths.dots, newline="", encoding="utf-8") as fh:
            dot_rows = list(csv.DictReader(fh))
    target = Path(run_dir) if run_dir else Path(cfg.paths.output)
    result = run_simulation(cfg, run_dir=target, run_seed=run_seed, world=world,
                            label_document=label_document, dot_rows=dot_rows)
    for report in result.reports:
        click.echo(_loop_line(report))
    status = "converged" if result.converged else "loop budget exhausted"
    click.echo(f"{status} after {len(result.reports)} loops; artifacts in {target}")


@main.command("replay")
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="directory produced by run-sim")
@guarded
def replay_cmd(run_dir: str):
    """Re-derive every loop report from the journal and verify it byte for byte."""
    reports = replay_run(run_dir)
    click.echo(f"replay ok: {len(reports)} loop reports verified")


@main.command("report")
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="directory produced by run-sim")
@guarded
def report_cmd(run_dir: str):
    """Print the per-loop summary table for a finished run."""
    reports_dir = Path(run_dir) / "reports"
    paths = sorted(reports_dir.glob("loop_*.json"),
                   key=lambda p: int(p.stem.split("_")[1]))
    if not paths:
        raise OrchestratorError(f"no loop reports under {reports_dir}")
    header = (f"{'loop':>4} {'labels':>7} {'delta':>6} {'coverage':>9} "
              f"{'map50':>7} {'new_ratio':>9} {'background':>10} {'hits':>11}")
    click.echo(header)
    for path in paths:
        r = LoopReport.from_dict(json.loads(path.read_text(encoding="utf-8")))
        map50 = "n/a" if r.map50 is None else f"{r.map50:.3f}"
        hits = f"{r.hits_accepted}/{r.hits_published}"
        click.echo(f"{r.loop_index:>4} {sum(r.counts.values()):>7} "
                   f"{sum(r.deltas.values()):>6} {r.coverage:>9.3f} {map50:>7} "
                   f"{r.new_label_ratio:>9.4f} {r.background:>10} {hits:>11}")


@main.command("serve")
@click.option("--journal", required=True, type=click.Path(exists=True, dir_okay=False),
              help="journal with annotations awaiting review")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="stream selector for task assembly")
@click.option("--lease-seconds", type=float, default=600.0, show_default=True)
@guarded
def serve_cmd(journal: str, host: str, port: int, seed: int, lease_seconds: float):
    """Serve the review API over an existing journal."""
    import uvicorn

    from .service import create_app

    store = open_store(journal)
    engine = TaskEngine(store, rng_for(seed, 0, TAG_ASSEMBLE),
                        lease_seconds=lease_seconds)
    open_states = {AnnotationState.PREDICTED, AnnotationState.REPUBLISHED,
                   AnnotationState.PENDING_REVIEW}
    pending = sorted(a.ann_id for a in store.annotations_in(open_states))
    built = engine.build_hits(pending)
    store.commit()
    click.echo(f"serving {built} hits ({len(pending)} open annotations) "
               f"from {journal} on {host}:{port}")
    uvicorn.run(create_app(engine), host=host, port=port, log_level="warning")


@main.command("export")
@click.option("--journal", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--states", default="seed,approved", show_default=True,
              help="comma-separated annotation states to export")
@click.option("--include-background", is_flag=True,
              help="also export confirmed background regions")
@guarded
def export_cmd(journal: str, out_path: str, states: str, include_background: bool):
    """Write settled labels from a journal as a box document."""
    store = open_store(journal)
    try:
        selected = {AnnotationState(s.strip()) for s in states.split(",") if s.strip()}
    except ValueError as exc:
        raise StoreError(f"unknown annotation state in --states: {exc}") from exc
    if not selected:
        raise StoreError("--states selected nothing")
    document = export_boxes(store, selected, include_background=include_background)
    _write_json(Path(out_path), document)
    click.echo(f"exported {len(document['annotations'])} boxes to {out_path}")


if __name__ == "__main__":
    main()
