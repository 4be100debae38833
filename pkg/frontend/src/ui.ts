// DOM layer: renders one subtask at a time onto a canvas with a draggable,
// resizable box, a class dropdown with a "None of the above" entry, and an
// examples sidebar. All geometry goes through coords/session; this file is
// only event wiring and drawing.

import { ApiClient } from "./api.js";
import {
  fitMapping,
  toCanvasBox,
  toCanvasPoint,
  type Point,
  type ViewMapping,
} from "./coords.js";
import { HitSession, TaskExpiredError } from "./session.js";
import { NONE_OF_THE_ABOVE, type Box, type ExamplesView } from "./types.js";

const CANVAS_W = 720;
const CANVAS_H = 540;
const HANDLE_PX = 8;

interface Elements {
  canvas: HTMLCanvasElement;
  classSelect: HTMLSelectElement;
  acceptButton: HTMLButtonElement;
  noneButton: HTMLButtonElement;
  backButton: HTMLButtonElement;
  nextButton: HTMLButtonElement;
  submitButton: HTMLButtonElement;
  progress: HTMLElement;
  status: HTMLElement;
  examplesPanel: HTMLElement;
}

type HandleName = "nw" | "ne" | "sw" | "se";

function handlePoints(box: Box): Record<HandleName, Point> {
  return {
    nw: { x: box.x_min, y: box.y_min },
    ne: { x: box.x_max, y: box.y_min },
    sw: { x: box.x_min, y: box.y_max },
    se: { x: box.x_max, y: box.y_max },
  };
}

function oppositeCorner(box: Box, handle: HandleName): Point {
  const points = handlePoints(box);
  const opposite: Record<HandleName, HandleName> = { nw: "se", ne: "sw", sw: "ne", se: "nw" };
  return points[opposite[handle]];
}

export class AnnotatorApp {
  private session: HitSession | null = null;
  private mapping: ViewMapping | null = null;
  private dragFrom: Point | null = null;   // fixed corner, canvas coords
  private dragTo: Point | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly el: Elements,
    private readonly workerId: string,
  ) {
    el.canvas.width = CANVAS_W;
    el.canvas.height = CANVAS_H;
    el.acceptButton.addEventListener("click", () => this.guarded(() => {
      this.session?.acceptProposal();
      this.refresh();
    }));
    el.noneButton.addEventListener("click", () => this.guarded(() => {
      this.session?.chooseNoneOfTheAbove();
      this.refresh();
    }));
    el.backButton.addEventListener("click", () => { this.session?.goBack(); this.refresh(); });
    el.nextButton.addEventListener("click", () => { this.session?.advance(); this.refresh(); });
    el.submitButton.addEventListener("click", () => { void this.submit(); });
    el.classSelect.addEventListener("change", () => this.guarded(() => {
      const value = this.el.classSelect.value;
      this.session?.setClass(value === NONE_OF_THE_ABOVE ? "Background" : value);
      this.refresh();
    }));
    el.canvas.addEventListener("pointerdown", (ev) => this.onPointerDown(ev));
    el.canvas.addEventListener("pointermove", (ev) => this.onPointerMove(ev));
    el.canvas.addEventListener("pointerup", (ev) => this.onPointerUp(ev));
  }

  async start(): Promise<void> {
    this.el.status.textContent = "fetching work...";
    const hit = await this.api.leaseNextHit(this.workerId);
    if (hit === null) {
      this.session = null;
      this.el.status.textContent = "no work available right now";
      return;
    }
    this.session = new HitSession(hit);
    this.el.status.textContent = "";
    this.populateClassSelect(hit.classes);
    this.refresh();
  }

  private populateClassSelect(classes: string[]): void {
    this.el.classSelect.replaceChildren();
    for (const name of [...classes, NONE_OF_THE_ABOVE]) {
      const option = document.createElement("option");
      option.value = name;
      option.textContent = name;
      this.el.classSelect.append(option);
    }
  }

  // Expiry can surface from any interaction; reset to a fresh lease prompt.
  private guarded(action: () => void): void {
    try {
      action();
    } catch (err) {
      if (err instanceof TaskExpiredError) {
        this.session = null;
        this.el.status.textContent = "task expired; please fetch a new one";
        this.drawEmpty();
        return;
      }
      this.el.status.textContent = String(err);
    }
  }

  private async submit(): Promise<void> {
    if (this.session === null) return;
    try {
      const body = this.session.buildSubmission(this.workerId);
      const verdict = await this.api.submitAnswers(this.session.hit.hit_id, body);
      this.el.status.textContent = verdict.status === "approved"
        ? "submitted: accepted"
        : `submitted: rejected (${verdict.reason})`;
      this.session = null;
      await this.start();
    } catch (err) {
      this.guarded(() => { throw err; });
    }
  }

  private onPointerDown(ev: PointerEvent): void {
    if (this.session === null || this.mapping === null) return;
    const p = this.canvasPoint(ev);
    const draft = this.session.draftAt(this.session.index);
    if (draft.box !== null) {
      const canvasBox = toCanvasBox(draft.box, this.mapping);
      for (const [name, corner] of Object.entries(handlePoints(canvasBox))) {
        if (Math.abs(corner.x - p.x) <= HANDLE_PX && Math.abs(corner.y - p.y) <= HANDLE_PX) {
          // Grab a corner: the opposite corner stays fixed.
          this.dragFrom = toCanvasPoint(
            oppositeCorner(draft.box, name as HandleName), this.mapping);
          this.dragTo = p;
          this.el.canvas.setPointerCapture(ev.pointerId);
          return;
        }
      }
    }
    // Start a fresh box.
    this.dragFrom = p;
    this.dragTo = p;
    this.el.canvas.setPointerCapture(ev.pointerId);
  }

  private onPointerMove(ev: PointerEvent): void {
    if (this.dragFrom === null) return;
    this.dragTo = this.canvasPoint(ev);
    this.draw();
  }

  private onPointerUp(ev: PointerEvent): void {
    if (this.dragFrom === null || this.dragTo === null || this.mapping === null) return;
    const from = this.dragFrom;
    const to = this.canvasPoint(ev);
    this.dragFrom = null;
    this.dragTo = null;
    if (Math.abs(to.x - from.x) < 2 && Math.abs(to.y - from.y) < 2) return; // a click, not a drag
    this.guarded(() => {
      this.session?.setBoxFromCanvas(from, to, this.mapping as ViewMapping);
      this.refresh();
    });
  }

  private canvasPoint(ev: PointerEvent): Point {
    const rect = this.el.canvas.getBoundingClientRect();
    return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
  }

  private refresh(): void {
    if (this.session === null) {
      this.drawEmpty();
      return;
    }
    const st = this.session.current;
    this.mapping = fitMapping(st.crop_viewport, CANVAS_W, CANVAS_H);
    this.el.progress.textContent = this.session.progressLabel;
    const draft = this.session.draftAt(this.session.index);
    this.el.classSelect.value =
      draft.classLabel === "Background" ? NONE_OF_THE_ABOVE : draft.classLabel;
    this.el.submitButton.disabled = !this.session.complete;
    this.draw();
    void this.renderExamples(st.current_class);
  }

  private draw(): void {
    const ctx = this.el.canvas.getContext("2d");
    if (ctx === null || this.session === null || this.mapping === null) return;
    const st = this.session.current;
    ctx.fillStyle = "#1c2230";
    ctx.fillRect(0, 0, CANVAS_W, CANVAS_H);

    // The crop of the source image; pixels come from a separate static root.
    const frame = toCanvasBox(st.crop_viewport, this.mapping);
    const img = new Image();
    img.src = st.image_uri;
    ctx.fillStyle = "#2c3448";
    ctx.fillRect(frame.x_min, frame.y_min,
                 frame.x_max - frame.x_min, frame.y_max - frame.y_min);
    if (img.complete && img.naturalWidth > 0) {
      const sx = st.crop_viewport.x_min * (img.naturalWidth / st.image_width);
      const sy = st.crop_viewport.y_min * (img.naturalHeight / st.image_height);
      const sw = (st.crop_viewport.x_max - st.crop_viewport.x_min)
        * (img.naturalWidth / st.image_width);
      const sh = (st.crop_viewport.y_max - st.crop_viewport.y_min)
        * (img.naturalHeight / st.image_height);
      ctx.drawImage(img, sx, sy, sw, sh,
                    frame.x_min, frame.y_min,
                    frame.x_max - frame.x_min, frame.y_max - frame.y_min);
    }

    const draft = this.session.draftAt(this.session.index);
    let shown: Box | null = draft.box;
    if (this.dragFrom !== null && this.dragTo !== null) {
      shown = {
        x_min: Math.min(this.dragFrom.x, this.dragTo.x),
        y_min: Math.min(this.dragFrom.y, this.dragTo.y),
        x_max: Math.max(this.dragFrom.x, this.dragTo.x),
        y_max: Math.max(this.dragFrom.y, this.dragTo.y),
      };
    } else if (shown !== null) {
      shown = toCanvasBox(shown, this.mapping);
    }
    if (shown !== null) {
      ctx.strokeStyle = "#4cc38a";
      ctx.lineWidth = 2;
      ctx.strokeRect(shown.x_min, shown.y_min,
                     shown.x_max - shown.x_min, shown.y_max - shown.y_min);
      ctx.fillStyle = "#4cc38a";
      for (const corner of Object.values(handlePoints(shown))) {
        ctx.fillRect(corner.x - HANDLE_PX / 2, corner.y - HANDLE_PX / 2, HANDLE_PX, HANDLE_PX);
      }
    }
  }

  private drawEmpty(): void {
    const ctx = this.el.canvas.getContext("2d");
    if (ctx === null) return;
    ctx.fillStyle = "#1c2230";
    ctx.fillRect(0, 0, CANVAS_W, CANVAS_H);
    this.el.progress.textContent = "";
    this.el.submitButton.disabled = true;
  }

  private async renderExamples(classLabel: string): Promise<void> {
    let view: ExamplesView;
    try {
      view = await this.api.getExamples(classLabel);
    } catch {
      this.el.examplesPanel.replaceChildren();
      return;
    }
    const header = document.createElement("h3");
    header.textContent = `${view.class_label} examples`;
    const list = document.createElement("ul");
    for (const example of view.examples) {
      const item = document.createElement("li");
      item.textContent = `${example.image_id} `
        + `[${example.box.x_min.toFixed(0)}, ${example.box.y_min.toFixed(0)}, `
        + `${example.box.x_max.toFixed(0)}, ${example.box.y_max.toFixed(0)}]`;
      list.append(item);
    }
    this.el.examplesPanel.replaceChildren(header, list);
  }
}
