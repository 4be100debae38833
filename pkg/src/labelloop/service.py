"""HTTP review service: leases annotation tasks and accepts worker answers.

The wire format is deliberately narrow. A leased task exposes only what
an annotator needs: the crop viewport, the proposal box, the current
class, and the catalog of class options. Whether a subtask is a hidden
quality check is never serialized, and the service has no access to the
simulation's private ground truth at all.
"""

from __future__ import annotations

import time
from contextlib import asynccontextmanager
from typing import Callable

from fastapi import APIRouter, FastAPI, HTTPException, Query, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .crowdgate import HIT_SIZE, CrowdGateError, Hit, TaskEngine, WorkerAnswer
from .geometry import BBox, GeometryError
from .labelstore import BACKGROUND, AnnotationState

EXAMPLE_LIMIT = 12

# Worker-facing reason strings; internal gate wording stays server-side.
_REASONS = {"gold_gate": "quality_check"}


class BoxModel(BaseModel):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @classmethod
    def from_bbox(cls, box: BBox) -> BoxModel:
        return cls(x_min=box.x_min, y_min=box.y_min, x_max=box.x_max, y_max=box.y_max)

    def to_bbox(self) -> BBox:
        return BBox(self.x_min, self.y_min, self.x_max, self.y_max)


class SubtaskView(BaseModel):
    ann_id: str
    image_id: str
    image_uri: str
    image_width: float
    image_height: float
    crop_viewport: BoxModel
    proposal_box: BoxModel
    current_class: str


class HitView(BaseModel):
    hit_id: str
    expires_at: float
    classes: list[str]
    subtasks: list[SubtaskView]


class AnswerModel(BaseModel):
    ann_id: str
    class_label: str
    box: BoxModel | None = None


class SubmitModel(BaseModel):
    worker_id: str
    answers: list[AnswerModel]


class SubmitView(BaseModel):
    status: str
    reason: str = ""


class ExampleView(BaseModel):
    image_id: str
    image_uri: str
    box: BoxModel


class ExamplesView(BaseModel):
    class_label: str
    examples: list[ExampleView]


class ProgressView(BaseModel):
    counts: dict[str, int]
    background: int
    approved_total: int
    open_work: int


def _hit_view(hit: Hit, engine: TaskEngine) -> HitView:
    store = engine.store
    subtasks = []
    for st in hit.subtasks:
        image = store.images[st.image_id]
        subtasks.append(SubtaskView(
            ann_id=st.ann_id,
            image_id=st.image_id,
            image_uri=image.uri,
            image_width=image.width,
            image_height=image.height,
            crop_viewport=BoxModel.from_bbox(st.crop_viewport),
            proposal_box=BoxModel.from_bbox(st.proposal_box),
            current_class=st.current_class,
        ))
    classes = list(store.catalog.names) if store.catalog is not None else []
    return HitView(hit_id=hit.hit_id, expires_at=hit.lease_expires,
                   classes=classes, subtasks=subtasks)


def create_app(engine: TaskEngine,
               clock: Callable[[], float] = time.time) -> FastAPI:
    """Build the service around one task engine (and its store)."""

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        engine.store.commit()  # flush the journal on shutdown

    app = FastAPI(title="labelloop review service", lifespan=lifespan)
    router = APIRouter(prefix="/api/v1")

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    @router.get("/hits/next", response_model=HitView,
                responses={204: {"description": "no work available"}})
    def next_hit(worker_id: str = Query(min_length=1)):
        hit = engine.lease(worker_id, now=clock())
        if hit is None:
            return Response(status_code=204)
        return _hit_view(hit, engine)

    @router.post("/hits/{hit_id}/answers", response_model=SubmitView)
    def submit_answers(hit_id: str, payload: SubmitModel):
        if len(payload.answers) != HIT_SIZE:
            raise HTTPException(
                status_code=400,
                detail=f"expected {HIT_SIZE} answers, got {len(payload.answers)}")
        try:
            answers = [
                WorkerAnswer(a.ann_id,
                             a.box.to_bbox() if a.box is not None else None,
                             a.class_label)
                for a in payload.answers
            ]
            result = engine.submit(payload.worker_id, hit_id, answers, now=clock())
        except (CrowdGateError, GeometryError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        engine.store.commit()
        return SubmitView(status="approved" if result.accepted else "rejected",
                          reason=_REASONS.get(result.reason, result.reason))

    @router.get("/progress", response_model=ProgressView)
    def progress():
        store = engine.store
        settled = store.class_counts({AnnotationState.SEED, AnnotationState.APPROVED})
        counts = {name: settled.get(name, 0)
                  for name in (store.catalog.names if store.catalog else [])}
        return ProgressView(
            counts=counts,
            background=len(store.annotations_in({AnnotationState.BACKGROUND_CONFIRMED})),
            approved_total=len(store.annotations_in({AnnotationState.APPROVED})),
            open_work=engine.open_work(),
        )

    @router.get("/examples/{class_label}", response_model=ExamplesView)
    def examples(class_label: str):
        store = engine.store
        known = set(store.catalog.names) if store.catalog is not None else set()
        if class_label not in known | {BACKGROUND}:
            raise HTTPException(status_code=404, detail=f"unknown class {class_label!r}")
        states = ({AnnotationState.BACKGROUND_CONFIRMED} if class_label == BACKGROUND
                  else {AnnotationState.SEED, AnnotationState.APPROVED})
        picked = sorted((a for a in store.annotations_in(states)
                         if a.class_label == class_label),
                        key=lambda a: a.ann_id)[:EXAMPLE_LIMIT]
        return ExamplesView(class_label=class_label, examples=[
            ExampleView(image_id=a.image_id, image_uri=store.images[a.image_id].uri,
                        box=BoxModel.from_bbox(a.box))
            for a in picked
        ])

    app.include_router(router)
    return app
