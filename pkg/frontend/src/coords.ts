// Mapping between image coordinates (what the service speaks) and canvas
// coordinates (what the pointer sees). The crop viewport is fitted into the
// canvas with preserved aspect ratio and centered; the same mapping must be
// used in both directions so a box accepted unchanged round-trips exactly.

import type { Box } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export interface ViewMapping {
  viewport: Box;
  scale: number;
  offsetX: number;
  offsetY: number;
}

export class CoordsError extends Error {}

export function fitMapping(viewport: Box, canvasWidth: number, canvasHeight: number): ViewMapping {
  const vw = viewport.x_max - viewport.x_min;
  const vh = viewport.y_max - viewport.y_min;
  if (vw <= 0 || vh <= 0) {
    throw new CoordsError(`degenerate viewport ${JSON.stringify(viewport)}`);
  }
  if (canvasWidth <= 0 || canvasHeight <= 0) {
    throw new CoordsError(`canvas must have positive size, got ${canvasWidth}x${canvasHeight}`);
  }
  const scale = Math.min(canvasWidth / vw, canvasHeight / vh);
  return {
    viewport,
    scale,
    offsetX: (canvasWidth - vw * scale) / 2,
    offsetY: (canvasHeight - vh * scale) / 2,
  };
}

export function toCanvasPoint(p: Point, m: ViewMapping): Point {
  return {
    x: (p.x - m.viewport.x_min) * m.scale + m.offsetX,
    y: (p.y - m.viewport.y_min) * m.scale + m.offsetY,
  };
}

export function toImagePoint(p: Point, m: ViewMapping): Point {
  return {
    x: (p.x - m.offsetX) / m.scale + m.viewport.x_min,
    y: (p.y - m.offsetY) / m.scale + m.viewport.y_min,
  };
}

export function toCanvasBox(box: Box, m: ViewMapping): Box {
  const a = toCanvasPoint({ x: box.x_min, y: box.y_min }, m);
  const b = toCanvasPoint({ x: box.x_max, y: box.y_max }, m);
  return { x_min: a.x, y_min: a.y, x_max: b.x, y_max: b.y };
}

export function toImageBox(box: Box, m: ViewMapping): Box {
  const a = toImagePoint({ x: box.x_min, y: box.y_min }, m);
  const b = toImagePoint({ x: box.x_max, y: box.y_max }, m);
  return { x_min: a.x, y_min: a.y, x_max: b.x, y_max: b.y };
}

// Two drag corners in any order become a well-formed box. Handles can
// therefore never produce an inverted box, only a thin one.
export function orderedBox(a: Point, b: Point): Box {
  return {
    x_min: Math.min(a.x, b.x),
    y_min: Math.min(a.y, b.y),
    x_max: Math.max(a.x, b.x),
    y_max: Math.max(a.y, b.y),
  };
}

export function clampToFrame(box: Box, width: number, height: number): Box {
  const clamp = (v: number, hi: number) => Math.min(Math.max(v, 0), hi);
  return {
    x_min: clamp(box.x_min, width),
    y_min: clamp(box.y_min, height),
    x_max: clamp(box.x_max, width),
    y_max: clamp(box.y_max, height),
  };
}
