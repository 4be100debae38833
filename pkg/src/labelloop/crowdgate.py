"""Crowd task assembly, leasing, hidden-gold quality gating, and vote consensus.

A HIT bundles ten subtasks: nine real annotations under review plus one
hidden quality-control task in the last slot, built from an already-settled
label. A submission is accepted only when the worker's box on that last
task overlaps the truth strictly above the gate threshold; otherwise every
answer in the HIT is discarded and the work is re-pooled unchanged.

Class consensus is a double-check: the model's prediction counts as the
zeroth vote, and a label is final once two consecutive votes agree. A
disagreeing vote replaces the current class and sends the annotation back
to the crowd for another worker.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

import numpy as np

from .geometry import BBox, iou
from .labelstore import (
    BACKGROUND,
    Annotation,
    AnnotationState,
    Finalize,
    LabelStore,
    Reject,
    Republish,
    ReviewEvent,
    ReviewOutcome,
)

HIT_SIZE = 10
WORK_SLOTS = HIT_SIZE - 1
GOLD_IOU_THRESHOLD = 0.8
LEASE_SECONDS = 600.0
SOFT_BLOCK_REJECTIONS = 3
MAX_REPUBLISHES = 8
VIEWPORT_SCALE = 2.0


class CrowdGateError(RuntimeError):
    """Raised on malformed submissions or configuration problems."""


@dataclass(frozen=True)
class GoldTask:
    """A settled annotation reused as a hidden check, with its true box."""

    gold_id: str
    image_id: str
    truth_box: BBox
    class_label: str


@dataclass(frozen=True)
class SubTask:
    """One unit of work: adjust the proposal box and confirm the class.

    The viewport is the zoomed region shown to the worker; it always
    contains the proposal with margin. The gold flag never leaves the
    server process.
    """

    ann_id: str
    image_id: str
    crop_viewport: BBox
    proposal_box: BBox
    current_class: str
    is_gold: bool = False


@dataclass
class Hit:
    hit_id: str
    subtasks: tuple[SubTask, ...]
    gold: GoldTask
    created_ts: float = 0.0
    leased_by: str | None = None
    lease_expires: float = 0.0

    def __post_init__(self):
        if len(self.subtasks) != HIT_SIZE:
            raise CrowdGateError(f"hit {self.hit_id!r} has {len(self.subtasks)} subtasks, "
                                 f"expected {HIT_SIZE}")
        if not self.subtasks[-1].is_gold:
            raise CrowdGateError(f"hit {self.hit_id!r}: last subtask must be the hidden check")


@dataclass(frozen=True)
class WorkerAnswer:
    """A worker's response to one subtask.

    ``box`` is None exactly when the worker selected none-of-the-above,
    in which case ``class_label`` must be the background sentinel.
    """

    ann_id: str
    box: BBox | None
    class_label: str

    def __post_init__(self):
        if (self.box is None) != (self.class_label == BACKGROUND):
            raise CrowdGateError(
                f"answer for {self.ann_id!r}: box must be omitted iff class is {BACKGROUND}")


@dataclass
class WorkerStats:
    accepted: int = 0
    rejected: int = 0
    consecutive_rejections: int = 0

    @property
    def blocked(self) -> bool:
        return self.consecutive_rejections >= SOFT_BLOCK_REJECTIONS


@dataclass(frozen=True)
class SubmitResult:
    hit_id: str
    accepted: bool
    gold_iou: float
    reason: str = ""
    finalized: tuple[str, ...] = ()
    republished: tuple[str, ...] = ()
    rejected_annotations: tuple[str, ...] = ()


def make_viewport(proposal: BBox, image_w: float, image_h: float,
                  scale: float = VIEWPORT_SCALE) -> BBox:
    """Zoom region around a proposal: scaled up, clipped, still containing it."""
    grown = proposal.expanded(scale).clipped(image_w, image_h)
    if grown is None:  # proposal already touches the frame everywhere
        return proposal
    return BBox(min(grown.x_min, proposal.x_min), min(grown.y_min, proposal.y_min),
                max(grown.x_max, proposal.x_max), max(grown.y_max, proposal.y_max))


def make_gold_proposal(truth: BBox, rng: np.random.Generator,
                       image_w: float, image_h: float) -> BBox:
    """Perturb a gold box into the proposal shown to workers.

    The shift is large enough that submitting the proposal verbatim always
    fails the gate, so passing requires actually re-drawing the box.
    """
    dx = 0.25 * truth.width * (1 if rng.random() < 0.5 else -1)
    dy = 0.25 * truth.height * (1 if rng.random() < 0.5 else -1)
    scale = 0.9 + 0.05 * rng.random()
    w = truth.width * scale
    h = truth.height * scale
    cx = truth.center[0] + dx
    cy = truth.center[1] + dy
    shifted = BBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
    clipped = shifted.clipped(image_w, image_h)
    return clipped if clipped is not None else truth


def assemble_hits(pending: list[Annotation], golds: list[GoldTask],
                  rng: np.random.Generator, image_sizes: dict[str, tuple[float, float]],
                  hit_id_prefix: str = "h", id_start: int = 1,
                  created_ts: float = 0.0) -> list[Hit]:
    """Group pending annotations into HITs of nine plus one hidden gold.

    A short final group is padded with additional distinct golds so every
    HIT has exactly ten subtasks; the designated check stays in the last
    slot. Golds are drawn uniformly without replacement within a HIT.
    """
    if not pending:
        return []
    if not golds:
        raise CrowdGateError("cannot assemble hits without gold tasks")

    def work_subtask(a: Annotation) -> SubTask:
        w, h = image_sizes[a.image_id]
        return SubTask(a.ann_id, a.image_id, make_viewport(a.box, w, h),
                       a.box, a.class_label)

    def gold_subtask(g: GoldTask) -> SubTask:
        w, h = image_sizes[g.image_id]
        proposal = make_gold_proposal(g.truth_box, rng, w, h)
        return SubTask(g.gold_id, g.image_id, make_viewport(proposal, w, h),
                       proposal, g.class_label, is_gold=True)

    hits: list[Hit] = []
    counter = id_start
    for start in range(0, len(pending), WORK_SLOTS):
        group = pending[start:start + WORK_SLOTS]
        pad_count = WORK_SLOTS - len(group)
        picks = rng.choice(len(golds), size=min(1 + pad_count, len(golds)), replace=False)
        chosen = [golds[int(i)] for i in picks]
        # Reuse golds only if the pool is too small to keep them distinct.
        while len(chosen) < 1 + pad_count:
            chosen.append(golds[int(rng.integers(len(golds)))])
        gate_gold, padding = chosen[0], chosen[1:]

        subtasks = [work_subtask(a) for a in group]
        subtasks.extend(gold_subtask(g) for g in padding)
        subtasks.append(gold_subtask(gate_gold))
        hits.append(Hit(f"{hit_id_prefix}{counter:06d}", tuple(subtasks), gate_gold,
                        created_ts=created_ts))
        counter += 1
    return hits


# --- consensus state machine --------------------------------------------------


@dataclass(frozen=True)
class ConsensusOutcome:
    finalized: bool
    class_label: str
    votes_used: int


def trace_consensus(initial_class: str, votes: list[str]) -> ConsensusOutcome:
    """Run the double-check rule over a vote sequence.

    The initial class is vote zero; finalization happens at the first vote
    equal to the one before it. Votes after finalization never happen in
    the pipeline and are ignored here.
    """
    current = initial_class
    for i, vote in enumerate(votes):
        if vote == current:
            return ConsensusOutcome(True, vote, i + 1)
        current = vote
    return ConsensusOutcome(False, current, len(votes))


def enumerate_consensus(initial_class: str, options: list[str],
                        max_len: int) -> dict[tuple[str, ...], ConsensusOutcome]:
    """Exhaustive outcome table over all vote sequences up to max_len.

    Guarded to short lengths; the table grows as |options|^L.
    """
    if not 1 <= max_len <= 6:
        raise CrowdGateError(f"max_len must be in [1, 6], got {max_len}")
    table: dict[tuple[str, ...], ConsensusOutcome] = {}
    for length in range(1, max_len + 1):
        for seq in itertools.product(options, repeat=length):
            table[seq] = trace_consensus(initial_class, list(seq))
    return table


def consensus_decision(current_class: str, vote_class: str, vote_box: BBox | None,
                       fallback_box: BBox, review: ReviewEvent, republishes: int,
                       max_republishes: int = MAX_REPUBLISHES) -> ReviewOutcome:
    """Decide an annotation's fate from one new vote.

    The stored class is the previous vote (the prediction for a fresh
    annotation), so agreement here is exactly two consecutive equal votes.
    A chronically flip-flopping annotation is abandoned once it would
    exceed the republish cap.
    """
    box = vote_box if vote_box is not None else fallback_box
    if vote_class == current_class:
        return Finalize(vote_class, box, review)
    if republishes + 1 > max_republishes:
        return Reject(review)
    return Republish(vote_class, box, review)


# --- pool and engine ------------------------------------------------------


class HitPool:
    """Thread-safe pool of assembled HITs with exclusive, expiring leases."""

    def __init__(self, lease_seconds: float = LEASE_SECONDS):
        self._lock = threading.Lock()
        self.lease_seconds = lease_seconds
        self._hits: dict[str, Hit] = {}
        self._seen: dict[str, set[str]] = {}

    def add(self, hits: list[Hit]) -> None:
        with self._lock:
            for hit in hits:
                if hit.hit_id in self._hits:
                    raise CrowdGateError(f"duplicate hit_id {hit.hit_id!r}")
                self._hits[hit.hit_id] = hit

    def lease(self, worker_id: str, now: float) -> Hit | None:
        """Hand the first eligible HIT to the worker, or None if drained.

        A worker is never leased a HIT containing an annotation id they
        have already received; expired leases are reclaimed in passing.
        """
        with self._lock:
            seen = self._seen.setdefault(worker_id, set())
            for hit in self._hits.values():
                if hit.leased_by is not None and hit.lease_expires > now:
                    continue
                ids = {st.ann_id for st in hit.subtasks}
                if ids & seen:
                    continue
                hit.leased_by = worker_id
                hit.lease_expires = now + self.lease_seconds
                seen.update(ids)
                return hit
            return None

    def take_for_submit(self, hit_id: str, worker_id: str,
                        now: float) -> tuple[Hit | None, str]:
        """Remove the HIT for a valid submission, or report why not.

        A stale or usurped lease leaves the HIT in the pool for others.
        """
        with self._lock:
            hit = self._hits.get(hit_id)
            if hit is None:
                return None, "unknown_hit"
            if hit.leased_by != worker_id:
                return None, "not_leaseholder"
            if hit.lease_expires <= now:
                return None, "stale_lease"
            del self._hits[hit_id]
            return hit, ""

    def outstanding(self) -> int:
        with self._lock:
            return len(self._hits)


class TaskEngine:
    """Drives the review pipeline: build HITs, lease, gate, apply consensus."""

    def __init__(self, store: LabelStore, rng: np.random.Generator,
                 lease_seconds: float = LEASE_SECONDS,
                 gold_iou_threshold: float = GOLD_IOU_THRESHOLD,
                 require_gold_class: bool = False,
                 max_republishes: int = MAX_REPUBLISHES):
        self.store = store
        self.rng = rng
        self.pool = HitPool(lease_seconds)
        self.gold_iou_threshold = gold_iou_threshold
        self.require_gold_class = require_gold_class
        self.max_republishes = max_republishes
        self.stats: dict[str, WorkerStats] = {}
        self._requeue: list[str] = []
        self._hit_counter = 1

    # --- assembly ---------------------------------------------------------

    def gold_pool(self) -> list[GoldTask]:
        settled = self.store.annotations_in({AnnotationState.SEED, AnnotationState.APPROVED})
        settled.sort(key=lambda a: a.ann_id)
        return [GoldTask(a.ann_id, a.image_id, a.box, a.class_label) for a in settled]

    def _image_sizes(self) -> dict[str, tuple[float, float]]:
        return {im.image_id: (im.width, im.height) for im in self.store.images.values()}

    def build_hits(self, ann_ids: list[str], ts: float = 0.0) -> int:
        """Mark annotations for review and publish them as HITs."""
        if not ann_ids:
            return 0
        to_mark = [a for a in ann_ids
                   if self.store.get(a).state in (AnnotationState.PREDICTED,
                                                  AnnotationState.REPUBLISHED)]
        if to_mark:
            self.store.mark_pending_review(to_mark, ts=ts)
        pending = sorted((self.store.get(a) for a in ann_ids), key=lambda a: a.ann_id)
        hits = assemble_hits(pending, self.gold_pool(), self.rng, self._image_sizes(),
                             id_start=self._hit_counter, created_ts=ts)
        self._hit_counter += len(hits)
        self.pool.add(hits)
        for hit in hits:
            self.store.append_audit("hit_published", {
                "hit_id": hit.hit_id,
                "ann_ids": [st.ann_id for st in hit.subtasks],
                "gold_id": hit.gold.gold_id,
            }, ts=ts)
        return len(hits)

    def reassemble(self, ts: float = 0.0) -> int:
        """Re-publish republished and re-pooled annotations as fresh HITs."""
        queued, self._requeue = self._requeue, []
        still_open = [a for a in dict.fromkeys(queued)
                      if self.store.get(a).state in (AnnotationState.REPUBLISHED,
                                                     AnnotationState.PENDING_REVIEW)]
        return self.build_hits(still_open, ts=ts)

    # --- worker interaction -------------------------------------------------

    def lease(self, worker_id: str, now: float) -> Hit | None:
        stats = self.stats.setdefault(worker_id, WorkerStats())
        if stats.blocked:
            return None
        return self.pool.lease(worker_id, now)

    def submit(self, worker_id: str, hit_id: str, answers: list[WorkerAnswer],
               now: float) -> SubmitResult:
        """Gate a submission on its hidden check, then apply consensus.

        Answers must arrive in subtask order (a padded HIT may show the
        same check twice, so ids alone cannot pair them). A failed check
        discards every answer: the nine work subtasks are returned to the
        pool unchanged for other workers. A stale lease is audited and
        rejected without counting against the worker.
        """
        if len(answers) != HIT_SIZE:
            raise CrowdGateError(f"expected {HIT_SIZE} answers, got {len(answers)}")
        hit, reason = self.pool.take_for_submit(hit_id, worker_id, now)
        if hit is None:
            self.store.append_audit("hit_submitted", {
                "hit_id": hit_id, "worker_id": worker_id,
                "gold_iou": 0.0, "passed": False, "reason": reason,
            }, ts=now)
            return SubmitResult(hit_id, False, 0.0, reason)
        if [a.ann_id for a in answers] != [st.ann_id for st in hit.subtasks]:
            # Malformed client payload; put the work back for others.
            self.pool.add([hit])
            raise CrowdGateError("answers do not match the hit's subtasks")

        gold_answer = answers[-1]
        # Plain Python scalars: these land in journal events.
        gold_iou = 0.0 if gold_answer.box is None else float(iou(gold_answer.box, hit.gold.truth_box))
        passed = bool(gold_iou > self.gold_iou_threshold)
        if self.require_gold_class:
            passed = passed and gold_answer.class_label == hit.gold.class_label

        stats = self.stats.setdefault(worker_id, WorkerStats())
        self.store.append_audit("hit_submitted", {
            "hit_id": hit_id, "worker_id": worker_id,
            "gold_iou": round(gold_iou, 6), "passed": passed,
        }, ts=now)

        if not passed:
            stats.rejected += 1
            stats.consecutive_rejections += 1
            self._requeue.extend(st.ann_id for st in hit.subtasks if not st.is_gold)
            return SubmitResult(hit_id, False, gold_iou, "gold_gate")

        stats.accepted += 1
        stats.consecutive_rejections = 0
        finalized: list[str] = []
        republished: list[str] = []
        rejected: list[str] = []
        for st, answer in zip(hit.subtasks, answers):
            if st.is_gold:
                continue  # gating only, never a consensus vote
            ann = self.store.get(st.ann_id)
            review = ReviewEvent(worker_id, answer.box if answer.box is not None else ann.box,
                                 answer.class_label, True, now)
            outcome = consensus_decision(ann.class_label, answer.class_label, answer.box,
                                         ann.box, review, ann.republishes,
                                         self.max_republishes)
            self.store.apply_review_outcome(st.ann_id, outcome, ts=now)
            if isinstance(outcome, Finalize):
                finalized.append(st.ann_id)
            elif isinstance(outcome, Republish):
                republished.append(st.ann_id)
                self._requeue.append(st.ann_id)
            else:
                rejected.append(st.ann_id)
        return SubmitResult(hit_id, True, gold_iou, "", tuple(finalized),
                            tuple(republished), tuple(rejected))

    def open_work(self) -> int:
        """Subtasks still in flight: pooled HITs plus the requeue backlog."""
        return self.pool.outstanding() + len(self._requeue)
