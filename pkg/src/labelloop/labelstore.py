"""Persistent store of images, classes, and annotations with full lifecycle state.

All mutations are serialized through one writer lock and journaled to an
append-only event log; replaying the log from empty reproduces the exact
final state. Readers get deep-copied snapshots. Annotations are never
deleted: rejected and background records stay queryable with history.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from .events import Event, EventLog, canonical_json, read_events
from .geometry import BBox, Dot, GeometryError, dot_to_seed_box

logger = logging.getLogger(__name__)

BACKGROUND = "Background"

DEFAULT_HALF_EXTENT = 40.0

VALID_SPLITS = ("seed", "pool", "validation")


class StoreError(RuntimeError):
    """Base error for label-store failures."""


class SchemaError(StoreError):
    """A document violates the box-JSON or dot-CSV schema."""


class StateTransitionError(StoreError):
    """An annotation was asked to make an illegal lifecycle transition."""


class AnnotationState(str, Enum):
    SEED = "seed"
    PREDICTED = "predicted"
    PENDING_REVIEW = "pending_review"
    APPROVED = "approved"
    BACKGROUND_CONFIRMED = "background_confirmed"
    REPUBLISHED = "republished"
    REJECTED = "rejected"


# Legal lifecycle edges; anything else is a hard error.
_TRANSITIONS: dict[AnnotationState, set[AnnotationState]] = {
    AnnotationState.PREDICTED: {AnnotationState.PENDING_REVIEW},
    AnnotationState.PENDING_REVIEW: {
        AnnotationState.APPROVED,
        AnnotationState.REPUBLISHED,
        AnnotationState.REJECTED,
        AnnotationState.BACKGROUND_CONFIRMED,
    },
    AnnotationState.REPUBLISHED: {AnnotationState.PENDING_REVIEW},
}

# States that count as settled object labels.
LABELED_STATES = frozenset({AnnotationState.SEED, AnnotationState.APPROVED})


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width: float
    height: float
    uri: str = ""
    split: str = "pool"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise SchemaError(f"image {self.image_id!r} has non-positive dimensions")
        if self.split not in VALID_SPLITS:
            raise SchemaError(f"image {self.image_id!r} has unknown split {self.split!r}")


class ClassCatalog:
    """Ordered list of detector output classes plus the reserved Background sentinel."""

    def __init__(self, names: Iterable[str]):
        names = list(names)
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate class names: {names}")
        if BACKGROUND in names:
            raise SchemaError(f"{BACKGROUND!r} is reserved and cannot be a catalog class")
        if not names:
            raise SchemaError("catalog must contain at least one class")
        self.names: tuple[str, ...] = tuple(names)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __iter__(self):
        return iter(self.names)

    def __len__(self) -> int:
        return len(self.names)

    def validate_label(self, name: str, allow_background: bool = True) -> str:
        if name in self.names or (allow_background and name == BACKGROUND):
            return name
        raise SchemaError(f"unknown class label {name!r} (catalog: {list(self.names)})")


@dataclass(frozen=True)
class ReviewEvent:
    """One worker's submission on an annotation, append-only in history."""

    worker_id: str
    submitted_box: BBox
    selected_class: str
    gold_passed: bool | None
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "worker_id": self.worker_id,
            "box": [self.submitted_box.x_min, self.submitted_box.y_min,
                    self.submitted_box.x_max, self.submitted_box.y_max],
            "class": self.selected_class,
            "gold_passed": self.gold_passed,
            "ts": self.timestamp,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> ReviewEvent:
        x1, y1, x2, y2 = raw["box"]
        return cls(raw["worker_id"], BBox(x1, y1, x2, y2), raw["class"],
                   raw["gold_passed"], raw["ts"])


@dataclass
class Annotation:
    """One labeled or predicted object with lifecycle state and review history."""

    ann_id: str
    image_id: str
    class_label: str
    box: BBox
    state: AnnotationState
    score: float | None = None
    history: list[ReviewEvent] = field(default_factory=list)
    republishes: int = 0

    def __post_init__(self):
        if self.state in LABELED_STATES and self.class_label == BACKGROUND:
            raise StoreError(
                f"annotation {self.ann_id!r}: {self.state.value} may not be {BACKGROUND}"
            )


# --- review outcomes ---------------------------------------------------------


@dataclass(frozen=True)
class Finalize:
    """Two consecutive matching votes: settle class and box."""

    class_label: str
    box: BBox
    review: ReviewEvent


@dataclass(frozen=True)
class Republish:
    """Class disagreement: adopt the new vote and send back to the crowd."""

    class_label: str
    box: BBox
    review: ReviewEvent


@dataclass(frozen=True)
class Reject:
    """Abandon the annotation (e.g. republish cap exceeded)."""

    review: ReviewEvent | None = None


ReviewOutcome = Finalize | Republish | Reject


def _box_to_list(box: BBox) -> list[float]:
    return [box.x_min, box.y_min, box.x_max, box.y_max]


def _box_from_list(raw) -> BBox:
    return BBox(raw[0], raw[1], raw[2], raw[3])


class LabelStore:
    """Single-writer, multi-reader label database backed by an event journal."""

    def __init__(self, log: EventLog | None = None):
        self._lock = threading.RLock()
        self.log = log if log is not None else EventLog()
        self.catalog: ClassCatalog | None = None
        self.images: dict[str, ImageRecord] = {}
        self.annotations: dict[str, Annotation] = {}
        self._id_counter = 0

    # --- journal plumbing ----------------------------------------------

    def _emit(self, type: str, data: dict, ts: float) -> None:
        self.log.append(type, data, ts)

    def commit(self) -> None:
        self.log.commit()

    # --- mutations (each mirrored by an event) ---------------------------

    def set_catalog(self, names: Iterable[str], ts: float = 0.0) -> None:
        with self._lock:
            catalog = ClassCatalog(names)
            self.catalog = catalog
            self._emit("catalog_set", {"classes": list(catalog.names)}, ts)

    def add_image(self, image: ImageRecord, ts: float = 0.0) -> None:
        with self._lock:
            if image.image_id in self.images:
                raise SchemaError(f"duplicate image_id {image.image_id!r}")
            self.images[image.image_id] = image
            self._emit("image_added", {
                "image_id": image.image_id, "width": image.width,
                "height": image.height, "uri": image.uri, "split": image.split,
            }, ts)

    def next_ann_id(self, prefix: str) -> str:
        with self._lock:
            self._id_counter += 1
            return f"{prefix}{self._id_counter:06d}"

    def add_annotation(self, ann_id: str, image_id: str, class_label: str,
                       box: BBox, state: AnnotationState,
                       score: float | None = None, ts: float = 0.0) -> Annotation:
        with self._lock:
            if self.catalog is None:
                raise StoreError("catalog must be set before adding annotations")
            if ann_id in self.annotations:
                raise SchemaError(f"duplicate ann_id {ann_id!r}")
            if image_id not in self.images:
                raise SchemaError(f"annotation {ann_id!r} references unknown image {image_id!r}")
            self.catalog.validate_label(class_label)
            ann = Annotation(ann_id, image_id, class_label, box, state, score)
            self.annotations[ann_id] = ann
            # Track explicit ids too, so generated ids can never collide
            # and replayed stores agree with live ones.
            self._id_counter = max(self._id_counter, _trailing_counter(ann_id))
            self._emit("annotation_added", {
                "ann_id": ann_id, "image_id": image_id, "class_label": class_label,
                "box": _box_to_list(box), "state": state.value, "score": score,
            }, ts)
            return ann

    def mark_pending_review(self, ann_ids: Iterable[str], ts: float = 0.0) -> None:
        """Transition Predicted/Republished annotations into PendingReview."""
        ann_ids = list(ann_ids)
        with self._lock:
            for ann_id in ann_ids:
                self._check_transition(ann_id, AnnotationState.PENDING_REVIEW)
            for ann_id in ann_ids:
                self.annotations[ann_id].state = AnnotationState.PENDING_REVIEW
            self._emit("pending_marked", {"ann_ids": ann_ids}, ts)

    def apply_review_outcome(self, ann_id: str, outcome: ReviewOutcome,
                             ts: float = 0.0) -> Annotation:
        """Apply one consensus decision; the store is unchanged on error."""
        with self._lock:
            if isinstance(outcome, Finalize):
                target = (AnnotationState.BACKGROUND_CONFIRMED
                          if outcome.class_label == BACKGROUND else AnnotationState.APPROVED)
                self._check_transition(ann_id, target)
                ann = self.annotations[ann_id]
                ann.state = target
                # A background label carries no meaningful box; keep the old one.
                if target is AnnotationState.APPROVED:
                    ann.class_label = outcome.class_label
                    ann.box = outcome.box
                else:
                    ann.class_label = BACKGROUND
                ann.history.append(outcome.review)
                kind = "finalize"
                review = outcome.review
            elif isinstance(outcome, Republish):
                self._check_transition(ann_id, AnnotationState.REPUBLISHED)
                ann = self.annotations[ann_id]
                ann.state = AnnotationState.REPUBLISHED
                ann.class_label = outcome.class_label
                # Latest worker box is the current best estimate.
                ann.box = outcome.box
                ann.history.append(outcome.review)
                ann.republishes += 1
                kind = "republish"
                review = outcome.review
            elif isinstance(outcome, Reject):
                self._check_transition(ann_id, AnnotationState.REJECTED)
                ann = self.annotations[ann_id]
                ann.state = AnnotationState.REJECTED
                if outcome.review is not None:
                    ann.history.append(outcome.review)
                kind = "reject"
                review = outcome.review
            else:  # pragma: no cover - type guard
                raise TypeError(f"unknown outcome {outcome!r}")

            self._emit("review_applied", {
                "ann_id": ann_id,
                "kind": kind,
                "class_label": ann.class_label,
                "box": _box_to_list(ann.box),
                "review": review.to_dict() if review is not None else None,
            }, ts)
            return ann

    def append_audit(self, kind: str, data: dict, ts: float = 0.0) -> None:
        """Journal-only record (gold outcomes, loop markers); no state change."""
        with self._lock:
            self._emit("audit", {"kind": kind, **data}, ts)

    def _check_transition(self, ann_id: str, target: AnnotationState) -> None:
        ann = self.annotations.get(ann_id)
        if ann is None:
            raise StateTransitionError(f"unknown annotation {ann_id!r}")
        allowed = _TRANSITIONS.get(ann.state, set())
        if target not in allowed:
            raise StateTransitionError(
                f"annotation {ann_id!r}: illegal transition {ann.state.value} -> {target.value}"
            )

    # --- queries ---------------------------------------------------------

    def class_counts(self, states: Iterable[AnnotationState] | None = None) -> dict[str, int]:
        """Per-class annotation counts over the given states (all states if None)."""
        wanted = set(states) if states is not None else None
        counts: dict[str, int] = {}
        with self._lock:
            if self.catalog is not None:
                counts = {name: 0 for name in self.catalog.names}
            counts[BACKGROUND] = 0
            for ann in self.annotations.values():
                if wanted is None or ann.state in wanted:
                    counts[ann.class_label] = counts.get(ann.class_label, 0) + 1
        return counts

    def annotations_in(self, states: Iterable[AnnotationState]) -> list[Annotation]:
        wanted = set(states)
        with self._lock:
            return [copy.deepcopy(a) for a in self.annotations.values() if a.state in wanted]

    def annotations_for_image(self, image_id: str,
                              states: Iterable[AnnotationState] | None = None) -> list[Annotation]:
        wanted = set(states) if states is not None else None
        with self._lock:
            return [copy.deepcopy(a) for a in self.annotations.values()
                    if a.image_id == image_id and (wanted is None or a.state in wanted)]

    def get(self, ann_id: str) -> Annotation:
        with self._lock:
            ann = self.annotations.get(ann_id)
            if ann is None:
                raise StoreError(f"unknown annotation {ann_id!r}")
            return copy.deepcopy(ann)

    def republish_total(self) -> int:
        with self._lock:
            return sum(a.republishes for a in self.annotations.values())

    def snapshot(self) -> LabelStore:
        """Immutable-by-convention deep copy for readers and loop rollback."""
        with self._lock:
            clone = LabelStore(log=EventLog())
            clone.catalog = self.catalog
            clone.images = dict(self.images)
            clone.annotations = copy.deepcopy(self.annotations)
            clone._id_counter = self._id_counter
            return clone

    def restore(self, snapshot: LabelStore) -> None:
        """Roll state back to a snapshot taken from this store."""
        with self._lock:
            self.catalog = snapshot.catalog
            self.images = dict(snapshot.images)
            self.annotations = copy.deepcopy(snapshot.annotations)
            self._id_counter = snapshot._id_counter

    def state_dict(self) -> dict:
        """Canonical serializable state, stable ordering, for snapshots and diffing."""
        with self._lock:
            return {
                "catalog": list(self.catalog.names) if self.catalog else None,
                "images": [
                    {"image_id": im.image_id, "width": im.width, "height": im.height,
                     "uri": im.uri, "split": im.split}
                    for im in sorted(self.images.values(), key=lambda im: im.image_id)
                ],
                "annotations": [
                    {"ann_id": a.ann_id, "image_id": a.image_id,
                     "class_label": a.class_label, "box": _box_to_list(a.box),
                     "state": a.state.value, "score": a.score,
                     "republishes": a.republishes,
                     "history": [ev.to_dict() for ev in a.history]}
                    for a in sorted(self.annotations.values(), key=lambda a: a.ann_id)
                ],
                "id_counter": self._id_counter,
            }

    def save_snapshot(self, path: Path | str) -> None:
        Path(path).write_text(canonical_json(self.state_dict()) + "\n", encoding="utf-8")

    # --- replay ----------------------------------------------------------

    def apply_event(self, event: Event) -> None:
        """Apply one journal event without re-emitting it."""
        data = event.data
        if event.type == "catalog_set":
            self.catalog = ClassCatalog(data["classes"])
        elif event.type == "image_added":
            self.images[data["image_id"]] = ImageRecord(
                data["image_id"], data["width"], data["height"], data["uri"], data["split"])
        elif event.type == "annotation_added":
            try:
                state = AnnotationState(data["state"])
            except ValueError as exc:
                raise StoreError(f"unknown annotation state {data['state']!r} in journal") from exc
            ann = Annotation(data["ann_id"], data["image_id"], data["class_label"],
                             _box_from_list(data["box"]), state, data.get("score"))
            self.annotations[ann.ann_id] = ann
            self._id_counter = max(self._id_counter, _trailing_counter(ann.ann_id))
        elif event.type == "pending_marked":
            for ann_id in data["ann_ids"]:
                self.annotations[ann_id].state = AnnotationState.PENDING_REVIEW
        elif event.type == "review_applied":
            ann = self.annotations[data["ann_id"]]
            kind = data["kind"]
            if kind == "finalize":
                ann.state = (AnnotationState.BACKGROUND_CONFIRMED
                             if data["class_label"] == BACKGROUND else AnnotationState.APPROVED)
            elif kind == "republish":
                ann.state = AnnotationState.REPUBLISHED
                ann.republishes += 1
            elif kind == "reject":
                ann.state = AnnotationState.REJECTED
            else:
                raise StoreError(f"unknown review kind {kind!r} in journal")
            ann.class_label = data["class_label"]
            ann.box = _box_from_list(data["box"])
            if data["review"] is not None:
                ann.history.append(ReviewEvent.from_dict(data["review"]))
        elif event.type == "audit":
            pass  # journal-only
        else:
            raise StoreError(f"unknown event type {event.type!r} in journal")

    @classmethod
    def replay(cls, events: Iterable[Event]) -> LabelStore:
        store = cls(log=EventLog())
        for event in events:
            store.apply_event(event)
        return store

    @classmethod
    def replay_file(cls, path: Path | str) -> LabelStore:
        return cls.replay(read_events(path))


def open_store(path: Path | str) -> LabelStore:
    """Load a journal file into a store positioned to append to it.

    The returned store's log continues the file's sequence numbers, so
    further mutations extend the same journal on commit.
    """
    events = list(read_events(path))
    store = LabelStore.replay(events)
    next_seq = events[-1].seq + 1 if events else 1
    store.log = EventLog(path, start_seq=next_seq)
    return store


def _trailing_counter(ann_id: str) -> int:
    digits = ""
    for ch in reversed(ann_id):
        if ch.isdigit():
            digits = ch + digits
        else:
            break
    return int(digits) if digits else 0


# --- box-JSON interchange -----------------------------------------------------


def import_boxes(document: dict, store: LabelStore | None = None,
                 state: AnnotationState = AnnotationState.SEED,
                 id_prefix: str = "s", ts: float = 0.0) -> LabelStore:
    """Load a box-JSON document into a store; all annotations enter as Seed.

    Boxes are clipped to their image on ingestion; a record whose box is
    invalid even after clipping fails the whole import, naming the record.
    """
    if document.get("hidden"):
        raise SchemaError("document is a hidden-world file and cannot be loaded as labels")
    for key in ("images", "categories", "annotations"):
        if key not in document:
            raise SchemaError(f"box-JSON document missing {key!r}")

    store = store if store is not None else LabelStore()
    if store.catalog is None:
        names = [c["name"] for c in sorted(document["categories"], key=lambda c: c["id"])]
        store.set_catalog(names, ts=ts)
    cat_by_id = {c["id"]: c["name"] for c in document["categories"]}

    for im in document["images"]:
        try:
            record = ImageRecord(str(im["id"]), im["width"], im["height"],
                                 im.get("file_name", ""), im.get("split", "pool"))
        except KeyError as exc:
            raise SchemaError(f"image record missing field {exc}: {im!r}") from exc
        store.add_image(record, ts=ts)

    for raw in document["annotations"]:
        ann_id = str(raw.get("id") or store.next_ann_id(id_prefix))
        image_id = str(raw.get("image_id"))
        image = store.images.get(image_id)
        if image is None:
            raise SchemaError(f"annotation {ann_id!r} references unknown image {image_id!r}")
        if raw.get("category_id") not in cat_by_id:
            raise SchemaError(f"annotation {ann_id!r} has unknown category_id "
                              f"{raw.get('category_id')!r}")
        try:
            box = BBox.from_xywh(raw["bbox"])
        except (GeometryError, KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"annotation {ann_id!r} has invalid bbox {raw.get('bbox')!r}: {exc}")
        clipped = box.clipped(image.width, image.height)
        if clipped is None:
            raise SchemaError(f"annotation {ann_id!r} box collapses when clipped to image")
        store.add_annotation(ann_id, image_id, cat_by_id[raw["category_id"]],
                             clipped, state, raw.get("score"), ts=ts)
    return store


def import_dots(rows: Iterable[dict] | Path | str, store: LabelStore,
                half_extent: float = DEFAULT_HALF_EXTENT, id_prefix: str = "d",
                ts: float = 0.0) -> list[str]:
    """Seed Predicted annotations from dot rows (``image_id,x,y,class_label``).

    Unknown class names fail the import up front, listing every unknown
    name; out-of-bounds dots are skipped with a logged warning.

    Returns:
        The created annotation ids, in input order.
    """
    if isinstance(rows, (str, Path)):
        with open(rows, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = list(rows)
    if store.catalog is None:
        raise StoreError("catalog must be set before importing dots")

    required = {"image_id", "x", "y", "class_label"}
    for row in rows:
        missing = required - set(row)
        if missing:
            raise SchemaError(f"dot row missing fields {sorted(missing)}: {row!r}")
    unknown = sorted({row["class_label"] for row in rows}
                     - set(store.catalog.names))
    if unknown:
        raise SchemaError(f"dot file references unknown classes: {unknown}")

    created: list[str] = []
    for row in rows:
        image = store.images.get(str(row["image_id"]))
        if image is None:
            raise SchemaError(f"dot references unknown image {row['image_id']!r}")
        dot = Dot(float(row["x"]), float(row["y"]), row["class_label"])
        try:
            box = dot_to_seed_box(dot, half_extent, (image.width, image.height))
        except GeometryError:
            logger.warning("skipping out-of-bounds dot (%s, %s) on image %s",
                           row["x"], row["y"], image.image_id)
            continue
        ann_id = store.next_ann_id(id_prefix)
        store.add_annotation(ann_id, image.image_id, dot.class_label, box,
                             AnnotationState.PREDICTED, ts=ts)
        created.append(ann_id)
    return created


def export_boxes(store: LabelStore, states: Iterable[AnnotationState],
                 include_background: bool = False) -> dict:
    """Serialize a store to box-JSON, byte-stable for a fixed dataset.

    Background records are exported only when explicitly requested, under
    a reserved category id 0.
    """
    if store.catalog is None:
        raise StoreError("cannot export a store without a catalog")
    wanted = set(states)
    categories = [{"id": i + 1, "name": name} for i, name in enumerate(store.catalog.names)]
    cat_ids = {name: i + 1 for i, name in enumerate(store.catalog.names)}
    if include_background:
        categories = [{"id": 0, "name": BACKGROUND}] + categories
        cat_ids[BACKGROUND] = 0

    annotations = []
    for ann in sorted(store.annotations.values(), key=lambda a: (a.image_id, a.ann_id)):
        if ann.state not in wanted:
            continue
        if ann.class_label == BACKGROUND and not include_background:
            continue
        entry = {
            "id": ann.ann_id,
            "image_id": ann.image_id,
            "category_id": cat_ids[ann.class_label],
            "bbox": [round(v, 6) for v in ann.box.as_xywh()],
            "state": ann.state.value,
        }
        if ann.score is not None:
            entry["score"] = ann.score
        annotations.append(entry)

    return {
        "images": [
            {"id": im.image_id, "width": im.width, "height": im.height,
             "file_name": im.uri, "split": im.split}
            for im in sorted(store.images.values(), key=lambda im: im.image_id)
        ],
        "categories": categories,
        "annotations": annotations,
    }


def load_box_json(path: Path | str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def save_box_json(document: dict, path: Path | str) -> None:
    Path(path).write_text(canonical_json(document) + "\n", encoding="utf-8")
