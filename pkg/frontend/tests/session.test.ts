import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";
import { fitMapping, toCanvasPoint } from "../src/coords.js";
import { HitSession, SessionError, TaskExpiredError } from "../src/session.js";
import { BACKGROUND, HIT_SIZE, type Box, type HitView } from "../src/types.js";

function makeHit(expiresAt = 1000): HitView {
  const subtasks = Array.from({ length: HIT_SIZE }, (_, i) => {
    const x = 30 * i;
    const proposal: Box = { x_min: x + 10, y_min: 40, x_max: x + 90, y_max: 120 };
    return {
      ann_id: `p${String(i).padStart(3, "0")}`,
      image_id: "im0",
      image_uri: "im0.jpg",
      image_width: 640,
      image_height: 512,
      crop_viewport: { x_min: x, y_min: 0, x_max: x + 200, y_max: 160 },
      proposal_box: proposal,
      current_class: i % 2 === 0 ? "Rockfish" : "Sponge",
    };
  });
  return {
    hit_id: "h0001",
    expires_at: expiresAt,
    classes: ["Rockfish", "Starfish", "Sponge"],
    subtasks,
  };
}

describe("HitSession flow", () => {
  it("accepting all proposals yields positional answers equal to the proposals", () => {
    const hit = makeHit();
    const session = new HitSession(hit, () => 0);
    for (let i = 0; i < HIT_SIZE; i++) {
      expect(session.progressLabel).toBe(`${i + 1} of ${HIT_SIZE}`);
      session.acceptProposal();
    }
    const body = session.buildSubmission("w1");
    expect(body.worker_id).toBe("w1");
    expect(body.answers).toHaveLength(HIT_SIZE);
    body.answers.forEach((answer, i) => {
      const st = hit.subtasks[i]!;
      expect(answer.ann_id).toBe(st.ann_id);
      expect(answer.class_label).toBe(st.current_class);
      expect(answer.box).toEqual(st.proposal_box);
    });
  });

  it("none of the above sends Background with a null box", () => {
    const session = new HitSession(makeHit(), () => 0);
    session.chooseNoneOfTheAbove();
    for (let i = 1; i < HIT_SIZE; i++) session.acceptProposal();
    const body = session.buildSubmission("w1");
    expect(body.answers[0]!.class_label).toBe(BACKGROUND);
    expect(body.answers[0]!.box).toBeNull();
    // Switching back to a real class restores a box to adjust.
    const again = new HitSession(makeHit(), () => 0);
    again.chooseNoneOfTheAbove();
    again.goBack();
    again.setClass("Starfish");
    expect(again.draftAt(0).box).toEqual(makeHit().subtasks[0]!.proposal_box);
  });

  it("refuses boxes without positive extent and unknown classes", () => {
    const session = new HitSession(makeHit(), () => 0);
    expect(() => session.setBox({ x_min: 50, y_min: 50, x_max: 50, y_max: 80 }))
      .toThrow(SessionError);
    expect(() => session.setBox({ x_min: 90, y_min: 50, x_max: 50, y_max: 80 }))
      .toThrow(SessionError);
    expect(() => session.setClass("Kraken")).toThrow(SessionError);
    // A drag in canvas space is ordered and mapped before validation.
    const st = session.current;
    const mapping = fitMapping(st.crop_viewport, 720, 540);
    const a = toCanvasPoint({ x: 150, y: 130 }, mapping); // drag up-left
    const b = toCanvasPoint({ x: 20, y: 10 }, mapping);
    const imageBox = session.setBoxFromCanvas(a, b, mapping);
    expect(imageBox.x_min).toBeCloseTo(20, 6);
    expect(imageBox.y_max).toBeCloseTo(130, 6);
    expect(session.draftAt(0).box).toEqual(imageBox);
  });

  it("a drag on the zoomed crop maps back to image space within 0.5 px", () => {
    const session = new HitSession(makeHit(), () => 0);
    const st = session.current;
    const mapping = fitMapping(st.crop_viewport, 720, 540);
    const want: Box = { x_min: 12.25, y_min: 43.5, x_max: 101.75, y_max: 118.25 };
    const got = session.setBoxFromCanvas(
      toCanvasPoint({ x: want.x_min, y: want.y_min }, mapping),
      toCanvasPoint({ x: want.x_max, y: want.y_max }, mapping),
      mapping);
    for (const key of ["x_min", "y_min", "x_max", "y_max"] as const) {
      expect(Math.abs(got[key] - want[key])).toBeLessThanOrEqual(0.5);
    }
  });

  it("blocks submission until every subtask is answered", () => {
    const session = new HitSession(makeHit(), () => 0);
    for (let i = 0; i < HIT_SIZE - 1; i++) session.acceptProposal();
    expect(session.complete).toBe(false);
    expect(() => session.buildSubmission("w1")).toThrow(/1 subtasks still unanswered/);
  });

  it("expiry mid-session surfaces as a task-expired state and discards answers", () => {
    let now = 0;
    const session = new HitSession(makeHit(500), () => now);
    session.acceptProposal();
    session.acceptProposal();
    now = 501; // lease ran out between interactions
    expect(session.expired()).toBe(true);
    expect(session.remainingSeconds()).toBe(0);
    expect(() => session.acceptProposal()).toThrow(TaskExpiredError);
    expect(() => session.buildSubmission("w1")).toThrow(TaskExpiredError);
  });
});

describe("ApiClient against a fake server", () => {
  function fakeFetch(handler: (url: string, init?: RequestInit) => Response) {
    const seen: { url: string; init?: RequestInit }[] = [];
    const impl = (url: string, init?: RequestInit) => {
      seen.push({ url, init });
      return Promise.resolve(handler(url, init));
    };
    return { impl, seen };
  }

  it("treats 204 as no work, not an error", async () => {
    const { impl } = fakeFetch(() => new Response(null, { status: 204 }));
    const api = new ApiClient("http://svc", impl);
    expect(await api.leaseNextHit("w1")).toBeNull();
  });

  it("round-trips a lease and posts answers to the hit's endpoint", async () => {
    const hit = makeHit();
    const { impl, seen } = fakeFetch((url) => {
      if (url.includes("/hits/next")) return Response.json(hit);
      if (url.endsWith("/hits/h0001/answers")) {
        return Response.json({ status: "approved", reason: "" });
      }
      return new Response(null, { status: 404 });
    });
    const api = new ApiClient("http://svc", impl);
    const leased = await api.leaseNextHit("w1");
    expect(leased?.hit_id).toBe("h0001");
    expect(seen[0]!.url).toBe("http://svc/api/v1/hits/next?worker_id=w1");

    const session = new HitSession(leased!, () => 0);
    for (let i = 0; i < HIT_SIZE; i++) session.acceptProposal();
    const verdict = await api.submitAnswers(hit.hit_id, session.buildSubmission("w1"));
    expect(verdict.status).toBe("approved");
    const posted = JSON.parse(String(seen[1]!.init?.body));
    expect(posted.answers).toHaveLength(HIT_SIZE);
    expect(posted.answers[3].ann_id).toBe(hit.subtasks[3]!.ann_id);
  });

  it("surfaces protocol violations as ApiError with the server detail", async () => {
    const { impl } = fakeFetch(() => Response.json(
      { detail: "expected 10 answers, got 9" }, { status: 400 }));
    const api = new ApiClient("http://svc", impl);
    const nine = { worker_id: "w1", answers: [] };
    await expect(api.submitAnswers("h0001", nine)).rejects.toThrow(ApiError);
    await expect(api.submitAnswers("h0001", nine))
      .rejects.toThrow(/expected 10 answers, got 9/);
  });
});
