"""Loop driver: train, predict, review, retrain, until labels stop growing.

Each loop publishes new predictions to the review pool, drains the pool
with the simulated crowd, then refreshes the scoring model on whatever
is settled. A loop either commits completely or rolls the store and the
journal back to the previous loop's state. Per-loop reports are pure
functions of the journal, so replaying a run's event log reproduces
them byte for byte.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .config import RunConfig, build_config, config_hash, config_to_dict
from .crowdgate import TaskEngine
from .detector import (
    FEATURE_DIM,
    HiddenWorld,
    SimulatedDetector,
    build_training_instances,
    filter_new,
    publishable,
    training_summary,
)
from .events import Event, EventLog, canonical_json, read_events
from .labelstore import AnnotationState, LabelStore, import_boxes, import_dots
from .metrics import evaluate_map, label_quality
from .seeds import TAG_ASSEMBLE, TAG_EVAL, TAG_TRAIN, TAG_WORKERS, rng_for
from .trainer import (
    LinearLogisticModel,
    MatchConfig,
    new_reference_model,
    train_epochs,
    write_trace,
)
from .workersim import WorkerProfile, answer_hit, spawn_workers
from .worldgen import generate_world, legacy_documents, seed_document

SETTLED = frozenset({AnnotationState.SEED, AnnotationState.APPROVED})


class OrchestratorError(RuntimeError):
    """Raised when a run cannot make progress or its artifacts conflict."""


class ReplayMismatch(OrchestratorError):
    """A recomputed report disagrees with the journaled or on-disk one."""


class RunMode(str, Enum):
    """How a run bootstraps: verified starter boxes, or legacy dot labels."""

    FROM_SEED = "from_seed"
    LEGACY_DOTS = "legacy_dots"


class SimClock:
    """Deterministic stand-in for wall time: one second per recorded action.

    Every timestamp written to the journal comes from here, so two runs
    with the same seeds produce identical journals.
    """

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self._t = start
        self._step = step

    def now(self) -> float:
        return self._t

    def tick(self) -> float:
        self._t += self._step
        return self._t


@dataclass(frozen=True)
class LoopReport:
    """One row of run telemetry; everything derives from the journal.

    counts/deltas cover settled object labels (starter plus approved);
    ``published`` counts predictions added by this loop's detection pass,
    so it is zero in a loop that only reviews imported labels.
    """

    loop_index: int
    counts: dict[str, int]
    deltas: dict[str, int]
    background: int
    background_delta: int
    precision: dict[str, float]
    ap: dict[str, float]
    map50: float | None
    coverage: float
    coverage_classful: float
    new_label_ratio: float
    approved_total: int
    published: int
    hits_published: int
    hits_accepted: int
    hits_rejected: int
    finalized: int
    republished: int
    rejected: int

    def to_dict(self) -> dict:
        return {
            "loop": self.loop_index,
            "counts": dict(self.counts),
            "deltas": dict(self.deltas),
            "background": self.background,
            "background_delta": self.background_delta,
            "precision": dict(self.precision),
            "ap": dict(self.ap),
            "map50": self.map50,
            "coverage": self.coverage,
            "coverage_classful": self.coverage_classful,
            "new_label_ratio": self.new_label_ratio,
            "approved_total": self.approved_total,
            "published": self.published,
            "hits": {
                "published": self.hits_published,
                "accepted": self.hits_accepted,
                "rejected": self.hits_rejected,
            },
            "reviews": {
                "finalized": self.finalized,
                "republished": self.republished,
                "rejected": self.rejected,
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> LoopReport:
        return cls(
            loop_index=raw["loop"],
            counts={k: int(v) for k, v in raw["counts"].items()},
            deltas={k: int(v) for k, v in raw["deltas"].items()},
            background=raw["background"],
            background_delta=raw["background_delta"],
            precision={k: float(v) for k, v in raw["precision"].items()},
            ap={k: float(v) for k, v in raw["ap"].items()},
            map50=raw["map50"],
            coverage=raw["coverage"],
            coverage_classful=raw["coverage_classful"],
            new_label_ratio=raw["new_label_ratio"],
            approved_total=raw["approved_total"],
            published=raw["published"],
            hits_published=raw["hits"]["published"],
            hits_accepted=raw["hits"]["accepted"],
            hits_rejected=raw["hits"]["rejected"],
            finalized=raw["reviews"]["finalized"],
            republished=raw["reviews"]["republished"],
            rejected=raw["reviews"]["rejected"],
        )


@dataclass
class LoopCounters:
    """Event tallies for one loop window; shared by live runs and replay."""

    published: int = 0
    hits_published: int = 0
    hits_accepted: int = 0
    hits_rejected: int = 0
    finalized: int = 0
    republished: int = 0
    rejected: int = 0


def tally_event(counters: LoopCounters, event: Event) -> None:
    if event.type == "annotation_added":
        if event.data.get("state") == AnnotationState.PREDICTED.value:
            counters.published += 1
    elif event.type == "audit":
        kind = event.data.get("kind")
        if kind == "hit_published":
            counters.hits_published += 1
        elif kind == "hit_submitted":
            if event.data.get("passed"):
                counters.hits_accepted += 1
            else:
                counters.hits_rejected += 1
    elif event.type == "review_applied":
        kind = event.data["kind"]
        if kind == "finalize":
            counters.finalized += 1
        elif kind == "republish":
            counters.republished += 1
        elif kind == "reject":
            counters.rejected += 1


def tally_counters(events: Iterable[Event]) -> LoopCounters:
    counters = LoopCounters()
    for event in events:
        tally_event(counters, event)
    return counters


def compute_loop_report(loop_index: int, store: LabelStore, world: HiddenWorld,
                        config: RunConfig, run_seed: int,
                        prev_counts: dict[str, int], prev_background: int,
                        counters: LoopCounters) -> LoopReport:
    """Derive one report row from store state at the end of a loop.

    Detection metrics come from a dedicated evaluation pass on its own
    random stream, so they are reproducible from (journal, world, config,
    run seed) alone.
    """
    raw_counts = store.class_counts(SETTLED)
    counts = {c: int(raw_counts.get(c, 0)) for c in world.classes}
    deltas = {c: counts[c] - int(prev_counts.get(c, 0)) for c in world.classes}
    background = len(store.annotations_in({AnnotationState.BACKGROUND_CONFIRMED}))

    settled_annotations = store.annotations_in(SETTLED)
    quality = label_quality(settled_annotations, world)

    detector = SimulatedDetector(world, config.detector)
    summary = training_summary(world, store,
                               include_background=config.training.include_background)
    eval_detections = detector.detect_all(summary, run_seed, loop_index, tag=TAG_EVAL)
    ap, map50 = evaluate_map(eval_detections, world)

    total = sum(counts.values())
    prev_total = sum(int(prev_counts.get(c, 0)) for c in world.classes)
    ratio = (total - prev_total) / total if total > 0 else 0.0

    return LoopReport(
        loop_index=loop_index,
        counts=counts,
        deltas=deltas,
        background=background,
        background_delta=background - prev_background,
        precision={c: float(v) for c, v in sorted(quality.precision.items())},
        ap={c: float(v) for c, v in sorted(ap.items())},
        map50=float(map50) if map50 is not None else None,
        coverage=float(quality.coverage),
        coverage_classful=float(quality.coverage_classful),
        new_label_ratio=float(ratio),
        approved_total=len(store.annotations_in({AnnotationState.APPROVED})),
        published=counters.published,
        hits_published=counters.hits_published,
        hits_accepted=counters.hits_accepted,
        hits_rejected=counters.hits_rejected,
        finalized=counters.finalized,
        republished=counters.republished,
        rejected=counters.rejected,
    )


def has_converged(reports: list[LoopReport], epsilon: float = 0.01,
                  patience: int = 1) -> bool:
    """True once the new-label ratio stayed below epsilon for `patience` loops."""
    if patience < 1:
        raise ValueError("patience must be positive")
    if len(reports) < patience:
        return False
    return all(r.new_label_ratio < epsilon for r in reports[-patience:])


# --- run state and stages --------------------------------------------------


@dataclass
class RunState:
    """Everything a running simulation mutates between loops."""

    config: RunConfig
    mode: RunMode
    run_seed: int
    world: HiddenWorld
    store: LabelStore
    engine: TaskEngine
    detector: SimulatedDetector
    model: LinearLogisticModel
    roster: list[WorkerProfile]
    spawn_rng: np.random.Generator
    clock: SimClock
    spawned: int
    prev_counts: dict[str, int]
    prev_background: int
    run_dir: Path | None = None
    reports: list[LoopReport] = field(default_factory=list)


def _train_stage(state: RunState, loop_index: int) -> list:
    cfg = state.config
    rng = rng_for(cfg.seed, state.run_seed, loop_index, TAG_TRAIN)
    match_config = MatchConfig(batch_size=cfg.training.batch_size,
                               positive_fraction=cfg.training.positive_fraction)
    instances = build_training_instances(
        state.world, state.store, state.model, rng, match_config,
        include_background=cfg.training.include_background,
        augment_enabled=cfg.training.augment,
        anchor_stride=cfg.training.anchor_stride,
        anchor_sizes=tuple(cfg.training.anchor_sizes))
    if not instances or cfg.training.epochs == 0:
        return []
    return train_epochs(state.model, instances, cfg.training.epochs,
                        cfg.training.learning_rate, cfg.training.lambda_reg)


def _publish_stage(state: RunState, loop_index: int) -> list[str]:
    """Add this loop's fresh predictions; return everything awaiting review."""
    bootstrap = state.mode is RunMode.LEGACY_DOTS and loop_index == 0
    if not bootstrap:
        cfg = state.config
        summary = training_summary(state.world, state.store,
                                   include_background=cfg.training.include_background)
        detections = state.detector.detect_all(summary, state.run_seed, loop_index)
        confident = publishable(detections, cfg.detector.publish_threshold)
        existing = state.store.annotations_in(set(AnnotationState))
        for det in filter_new(confident, existing, cfg.detector.dedup_iou):
            ann_id = state.store.next_ann_id("p")
            state.store.add_annotation(ann_id, det.image_id, det.class_label,
                                       det.box, AnnotationState.PREDICTED,
                                       det.score, ts=state.clock.tick())
    pending = state.store.annotations_in({AnnotationState.PREDICTED})
    return sorted(a.ann_id for a in pending)


def _grow_roster(state: RunState) -> None:
    crowd = state.config.crowd
    count = min(crowd.workers, crowd.worker_cap - state.spawned)
    if count < 1:
        raise OrchestratorError(
            f"worker cap {crowd.worker_cap} reached with review work still open")
    state.roster.extend(spawn_workers(count, state.spawn_rng, crowd.mix,
                                      id_start=state.spawned + 1))
    state.spawned += count


def _crowd_stage(state: RunState, loop_index: int) -> None:
    """Drain the review pool with the simulated worker population.

    Workers lease and submit round-robin. When a full round leases
    nothing while work remains (everyone blocked or already exposed to
    the open annotations), fresh workers join, up to the cap.
    """
    engine = state.engine
    answer_rng = rng_for(state.config.seed, state.run_seed, loop_index, TAG_WORKERS)
    while engine.open_work() > 0:
        if engine.pool.outstanding() == 0:
            if engine.reassemble(ts=state.clock.tick()) == 0:
                raise OrchestratorError(
                    f"loop {loop_index}: open review work cannot be reassembled")
        leased_any = False
        for profile in state.roster:
            hit = engine.lease(profile.worker_id, state.clock.tick())
            if hit is None:
                continue
            leased_any = True
            answers = answer_hit(profile, hit, state.world, answer_rng)
            engine.submit(profile.worker_id, hit.hit_id, answers, state.clock.tick())
        if not leased_any and engine.open_work() > 0:
            _grow_roster(state)


def run_loop(state: RunState, loop_index: int) -> LoopReport:
    """Execute one full loop atomically and append its report.

    Any stage failure restores the store and drops the loop's journal
    entries, leaving the run exactly at the previous commit.
    """
    store = state.store
    snapshot = store.snapshot()
    events_before = len(store.log.events())
    try:
        bootstrap = state.mode is RunMode.LEGACY_DOTS and loop_index == 0
        # Bootstrap reviews raw imports directly; there is no model yet.
        trace_rows = [] if bootstrap else _train_stage(state, loop_index)
        pending = _publish_stage(state, loop_index)
        state.engine.build_hits(pending, ts=state.clock.tick())
        _crowd_stage(state, loop_index)

        counters = tally_counters(store.log.events()[events_before:])
        report = compute_loop_report(loop_index, store, state.world, state.config,
                                     state.run_seed, state.prev_counts,
                                     state.prev_background, counters)
        store.append_audit("loop_completed",
                           {"loop": loop_index, "report": report.to_dict()},
                           ts=state.clock.tick())
        store.commit()
    except Exception:
        store.restore(snapshot)
        store.log.rollback()
        raise

    state.prev_counts = dict(report.counts)
    state.prev_background = report.background
    state.reports.append(report)
    if state.run_dir is not None:
        report_path = state.run_dir / "reports" / f"loop_{loop_index}.json"
        report_path.write_text(canonical_json(report.to_dict()) + "\n", encoding="utf-8")
        if trace_rows:
            write_trace(trace_rows, state.run_dir / "reports" / f"train_loop_{loop_index}.csv")
    return report


# --- whole runs -------------------------------------------------------------


@dataclass
class RunResult:
    reports: list[LoopReport]
    converged: bool
    store: LabelStore
    world: HiddenWorld
    run_dir: Path | None
    manifest: dict


def run_simulation(config: RunConfig, *, run_dir: Path | str | None = None,
                   run_seed: int = 0, world: HiddenWorld | None = None,
                   label_document: dict | None = None,
                   dot_rows: list[dict] | None = None) -> RunResult:
    """Run a complete labeling simulation under one configuration.

    With ``run_dir`` set, the journal, per-loop reports, a consolidated
    CSV, the hidden world, and a manifest (config hash, seeds) land
    there; such a run can later be verified with :func:`replay_run`.
    Callers may inject a prebuilt world or bootstrap files; defaults are
    generated from the config.
    """
    mode = RunMode(config.mode)
    if world is None:
        world = generate_world(config.world, config.seed)

    run_path: Path | None = None
    log_path = None
    if run_dir is not None:
        run_path = Path(run_dir)
        run_path.mkdir(parents=True, exist_ok=True)
        (run_path / "reports").mkdir(exist_ok=True)
        log_path = run_path / "events.jsonl"
        if log_path.exists():
            raise OrchestratorError(f"{log_path} already exists; refusing to mix runs")

    clock = SimClock()
    store = LabelStore(EventLog(log_path))
    if mode is RunMode.FROM_SEED:
        if label_document is None:
            label_document = seed_document(world, config.world.seed_fraction, config.seed)
        import_boxes(label_document, store, ts=clock.tick())
    else:
        if label_document is None or dot_rows is None:
            document, rows, _ = legacy_documents(world, config.world.dot_coverage,
                                                 config.world.seed_fraction, config.seed)
            label_document = label_document if label_document is not None else document
            dot_rows = dot_rows if dot_rows is not None else rows
        import_boxes(label_document, store, ts=clock.tick())
        import_dots(dot_rows, store, ts=clock.tick())
    store.append_audit("run_started", {
        "mode": mode.value,
        "run_seed": run_seed,
        "config_hash": config_hash(config),
    }, ts=clock.tick())
    store.commit()

    raw_counts = store.class_counts(SETTLED)
    # One roster stream for the whole run: later growth continues it.
    spawn_rng = rng_for(config.seed, run_seed, TAG_WORKERS)
    roster = spawn_workers(config.crowd.workers, spawn_rng,
                           config.crowd.mix, id_start=1)
    state = RunState(
        config=config, mode=mode, run_seed=run_seed, world=world, store=store,
        engine=TaskEngine(store, rng_for(config.seed, run_seed, TAG_ASSEMBLE),
                          lease_seconds=config.crowd.lease_seconds,
                          gold_iou_threshold=config.crowd.gold_iou_threshold,
                          require_gold_class=config.crowd.require_gold_class,
                          max_republishes=config.crowd.max_republishes),
        detector=SimulatedDetector(world, config.detector),
        model=new_reference_model(FEATURE_DIM),
        roster=roster,
        spawn_rng=spawn_rng,
        clock=clock,
        spawned=len(roster),
        prev_counts={c: int(raw_counts.get(c, 0)) for c in world.classes},
        prev_background=0,
        run_dir=run_path,
    )
    if run_path is not None:
        world.save(run_path / "world.json")

    converged = False
    start = 0 if mode is RunMode.LEGACY_DOTS else 1
    for loop_index in range(start, start + config.max_loops):
        run_loop(state, loop_index)
        if has_converged(state.reports, config.epsilon, config.patience):
            converged = True
            break

    manifest = {
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "run_seed": run_seed,
        "mode": mode.value,
        "loops": [r.loop_index for r in state.reports],
        "converged": converged,
    }
    if run_path is not None:
        (run_path / "manifest.json").write_text(canonical_json(manifest) + "\n",
                                                encoding="utf-8")
        write_report_csv(state.reports, list(world.classes), run_path / "reports.csv")
    return RunResult(state.reports, converged, store, world, run_path, manifest)


def write_report_csv(reports: list[LoopReport], classes: list[str],
                     path: Path | str) -> None:
    """Flatten reports to one CSV row per loop (human artifact, not replayed)."""
    fieldnames = ["loop", "map50", "coverage", "coverage_classful", "new_label_ratio",
                  "background", "background_delta", "approved_total", "published",
                  "hits_published", "hits_accepted", "hits_rejected",
                  "finalized", "republished", "rejected"]
    for name in classes:
        fieldnames += [f"count_{name}", f"delta_{name}",
                       f"precision_{name}", f"ap_{name}"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for r in reports:
            row = {
                "loop": r.loop_index,
                "map50": "" if r.map50 is None else f"{r.map50:.6f}",
                "coverage": f"{r.coverage:.6f}",
                "coverage_classful": f"{r.coverage_classful:.6f}",
                "new_label_ratio": f"{r.new_label_ratio:.6f}",
                "background": r.background,
                "background_delta": r.background_delta,
                "approved_total": r.approved_total,
                "published": r.published,
                "hits_published": r.hits_published,
                "hits_accepted": r.hits_accepted,
                "hits_rejected": r.hits_rejected,
                "finalized": r.finalized,
                "republished": r.republished,
                "rejected": r.rejected,
            }
            for name in classes:
                row[f"count_{name}"] = r.counts.get(name, 0)
                row[f"delta_{name}"] = r.deltas.get(name, 0)
                p = r.precision.get(name)
                a = r.ap.get(name)
                row[f"precision_{name}"] = "" if p is None else f"{p:.6f}"
                row[f"ap_{name}"] = "" if a is None else f"{a:.6f}"
            writer.writerow(row)


# --- replay verification -----------------------------------------------------


def replay_run(run_dir: Path | str) -> list[LoopReport]:
    """Rebuild a run from its journal and verify every report byte for byte.

    Raises ReplayMismatch if any recomputed report differs from the one
    embedded in the journal or from the corresponding reports/loop_<n>.json
    file. Returns the recomputed reports.
    """
    run_path = Path(run_dir)
    manifest = json.loads((run_path / "manifest.json").read_text(encoding="utf-8"))
    config = build_config(manifest["config"])
    run_seed = int(manifest["run_seed"])
    world = HiddenWorld.load(run_path / "world.json")

    store = LabelStore(EventLog())
    counters = LoopCounters()
    prev_counts = {c: 0 for c in world.classes}
    prev_background = 0
    baseline_seen = False
    reports: list[LoopReport] = []

    for event in read_events(run_path / "events.jsonl"):
        if event.type == "audit" and event.data.get("kind") == "run_started":
            raw_counts = store.class_counts(SETTLED)
            prev_counts = {c: int(raw_counts.get(c, 0)) for c in world.classes}
            prev_background = len(
                store.annotations_in({AnnotationState.BACKGROUND_CONFIRMED}))
            counters = LoopCounters()  # imports are not loop activity
            baseline_seen = True
            continue
        if event.type == "audit" and event.data.get("kind") == "loop_completed":
            loop_index = int(event.data["loop"])
            report = compute_loop_report(loop_index, store, world, config, run_seed,
                                         prev_counts, prev_background, counters)
            recomputed = canonical_json(report.to_dict())
            journaled = canonical_json(event.data["report"])
            if recomputed != journaled:
                raise ReplayMismatch(
                    f"loop {loop_index}: recomputed report differs from the journal")
            report_path = run_path / "reports" / f"loop_{loop_index}.json"
            if report_path.exists() and report_path.read_text(
                    encoding="utf-8") != recomputed + "\n":
                raise ReplayMismatch(
                    f"loop {loop_index}: report file differs from the journal")
            reports.append(report)
            prev_counts = dict(report.counts)
            prev_background = report.background
            counters = LoopCounters()
            continue
        tally_event(counters, event)
        store.apply_event(event)

    if not baseline_seen:
        raise ReplayMismatch("journal has no run_started marker")
    return reports


# --- ablation ---------------------------------------------------------------


@dataclass(frozen=True)
class AblationPair:
    """Final reports of one paired run: background training on vs off."""

    seed: int
    on: LoopReport
    off: LoopReport

    @property
    def background_wins(self) -> bool:
        """True when the on arm's precision is at least the off arm's, per class."""
        shared = sorted(set(self.on.precision) & set(self.off.precision))
        return bool(shared) and all(
            self.on.precision[c] >= self.off.precision[c] for c in shared)


def precision_ablation(config: RunConfig, seeds: Iterable[int]) -> list[AblationPair]:
    """Paired simulations isolating the effect of training on background labels.

    Both arms of a pair share the hidden world, starter labels, and all
    random streams; only include_background differs.
    """
    if config.mode != RunMode.FROM_SEED.value:
        raise OrchestratorError("ablation pairs are defined for from_seed runs")
    pairs: list[AblationPair] = []
    for seed in seeds:
        seed = int(seed)
        world = generate_world(config.world, seed)
        document = seed_document(world, config.world.seed_fraction, seed)
        finals: dict[bool, LoopReport] = {}
        for arm_on in (True, False):
            arm_config = replace(config, seed=seed,
                                 training=replace(config.training,
                                                  include_background=arm_on))
            result = run_simulation(arm_config, run_seed=seed, world=world,
                                    label_document=document)
            finals[arm_on] = result.reports[-1]
        pairs.append(AblationPair(seed, finals[True], finals[False]))
    return pairs
