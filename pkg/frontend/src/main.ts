import { ApiClient } from "./api.js";
import { AnnotatorApp } from "./ui.js";

function mustFind<T extends Element>(selector: string): T {
  const found = document.querySelector<T>(selector);
  if (found === null) throw new Error(`missing element ${selector}`);
  return found;
}

// Worker identity persists per browser so a reload keeps the same leases.
function workerId(): string {
  const existing = localStorage.getItem("worker_id");
  if (existing !== null) return existing;
  const fresh = `w-${Math.random().toString(36).slice(2, 10)}`;
  localStorage.setItem("worker_id", fresh);
  return fresh;
}

const app = new AnnotatorApp(
  new ApiClient(""),
  {
    canvas: mustFind<HTMLCanvasElement>("#subtask-canvas"),
    classSelect: mustFind<HTMLSelectElement>("#class-select"),
    acceptButton: mustFind<HTMLButtonElement>("#accept-button"),
    noneButton: mustFind<HTMLButtonElement>("#none-button"),
    backButton: mustFind<HTMLButtonElement>("#back-button"),
    nextButton: mustFind<HTMLButtonElement>("#next-button"),
    submitButton: mustFind<HTMLButtonElement>("#submit-button"),
    progress: mustFind<HTMLElement>("#progress"),
    status: mustFind<HTMLElement>("#status"),
    examplesPanel: mustFind<HTMLElement>("#examples-panel"),
  },
  workerId(),
);

void app.start();
