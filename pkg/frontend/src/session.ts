// Wizard state for one leased task: ten subtasks answered one at a time, in
// order, then a single submission. The session holds no server state beyond
// the lease it was built from, so abandoning it loses nothing but local
// drafts (which is exactly what lease expiry demands).

import { orderedBox, toImageBox, type Point, type ViewMapping } from "./coords.js";
import {
  BACKGROUND,
  HIT_SIZE,
  type AnswerPayload,
  type Box,
  type HitView,
  type SubmitBody,
  type SubtaskView,
} from "./types.js";

export class SessionError extends Error {}

export class TaskExpiredError extends SessionError {
  constructor() {
    super("task expired; local answers discarded");
  }
}

interface Draft {
  classLabel: string;
  box: Box | null;
  answered: boolean;
}

export type Clock = () => number; // seconds, same epoch as expires_at

export class HitSession {
  readonly hit: HitView;
  private readonly drafts: Draft[];
  private readonly clock: Clock;
  private cursor = 0;

  constructor(hit: HitView, clock: Clock = () => Date.now() / 1000) {
    if (hit.subtasks.length !== HIT_SIZE) {
      throw new SessionError(`expected ${HIT_SIZE} subtasks, got ${hit.subtasks.length}`);
    }
    this.hit = hit;
    this.clock = clock;
    // Drafts start at the proposal so "accept" is a plain confirmation.
    this.drafts = hit.subtasks.map((st) => ({
      classLabel: st.current_class,
      box: { ...st.proposal_box },
      answered: false,
    }));
  }

  get index(): number {
    return this.cursor;
  }

  get current(): SubtaskView {
    const st = this.hit.subtasks[this.cursor];
    if (st === undefined) throw new SessionError(`no subtask at ${this.cursor}`);
    return st;
  }

  get progressLabel(): string {
    return `${this.cursor + 1} of ${HIT_SIZE}`;
  }

  get complete(): boolean {
    return this.drafts.every((d) => d.answered);
  }

  expired(): boolean {
    return this.clock() >= this.hit.expires_at;
  }

  remainingSeconds(): number {
    return Math.max(0, this.hit.expires_at - this.clock());
  }

  draftAt(index: number): { classLabel: string; box: Box | null } {
    const d = this.drafts[index];
    if (d === undefined) throw new SessionError(`no subtask at ${index}`);
    return { classLabel: d.classLabel, box: d.box === null ? null : { ...d.box } };
  }

  private draft(): Draft {
    const d = this.drafts[this.cursor];
    if (d === undefined) throw new SessionError(`no subtask at ${this.cursor}`);
    return d;
  }

  private guardLease(): void {
    if (this.expired()) throw new TaskExpiredError();
  }

  // Confirm the shown proposal as-is and move on.
  acceptProposal(): void {
    this.guardLease();
    const d = this.draft();
    d.classLabel = this.current.current_class;
    d.box = { ...this.current.proposal_box };
    d.answered = true;
    this.advance();
  }

  setClass(classLabel: string): void {
    this.guardLease();
    if (classLabel !== BACKGROUND && !this.hit.classes.includes(classLabel)) {
      throw new SessionError(`unknown class ${classLabel}`);
    }
    const d = this.draft();
    d.classLabel = classLabel;
    if (classLabel === BACKGROUND) {
      d.box = null;
    } else if (d.box === null) {
      d.box = { ...this.current.proposal_box };
    }
    d.answered = true;
  }

  chooseNoneOfTheAbove(): void {
    this.setClass(BACKGROUND);
    this.advance();
  }

  // Adjusted box in image coordinates. Rejects inverted or empty boxes;
  // drag handles should funnel through setBoxFromCanvas instead.
  setBox(box: Box): void {
    this.guardLease();
    if (!(box.x_min < box.x_max && box.y_min < box.y_max)) {
      throw new SessionError(`box must have positive extent, got ${JSON.stringify(box)}`);
    }
    const d = this.draft();
    if (d.classLabel === BACKGROUND) {
      throw new SessionError("cannot set a box while 'none of the above' is selected");
    }
    d.box = { ...box };
    d.answered = true;
  }

  // Two drag corners in canvas space; ordering and the viewport-to-image
  // mapping happen here so callers never hand over raw canvas coordinates.
  setBoxFromCanvas(cornerA: Point, cornerB: Point, mapping: ViewMapping): Box {
    const imageBox = toImageBox(orderedBox(cornerA, cornerB), mapping);
    this.setBox(imageBox);
    return imageBox;
  }

  advance(): void {
    if (this.cursor < HIT_SIZE - 1) this.cursor += 1;
  }

  goBack(): void {
    if (this.cursor > 0) this.cursor -= 1;
  }

  // Ordered payload, one answer per subtask, image coordinates throughout.
  buildSubmission(workerId: string): SubmitBody {
    this.guardLease();
    if (!this.complete) {
      const missing = this.drafts.filter((d) => !d.answered).length;
      throw new SessionError(`${missing} subtasks still unanswered`);
    }
    const answers: AnswerPayload[] = this.hit.subtasks.map((st, i) => {
      const d = this.drafts[i];
      if (d === undefined) throw new SessionError(`no draft at ${i}`);
      return {
        ann_id: st.ann_id,
        class_label: d.classLabel,
        box: d.box === null ? null : { ...d.box },
      };
    });
    return { worker_id: workerId, answers };
  }
}
