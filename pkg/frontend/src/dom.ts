// Browser glue: renders ViewState into the page and forwards input events
// to the controller. All protocol logic lives in controller.ts.

import { ApiClient } from "./client.js";
import { SessionController, type ViewState } from "./controller.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function preloadImage(url: string): Promise<void> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve();
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url;
  });
}

export function render(state: ViewState, instruction: string): void {
  const status = el<HTMLParagraphElement>("status");
  const stage = el<HTMLDivElement>("stage");
  const done = el<HTMLDivElement>("done");
  const left = el<HTMLImageElement>("left-img");
  const right = el<HTMLImageElement>("right-img");
  const bar = el<HTMLDivElement>("bar-fill");
  const counter = el<HTMLSpanElement>("counter");
  const retry = el<HTMLButtonElement>("retry");

  el<HTMLHeadingElement>("instruction").textContent = state.emotion
    ? instruction.replace("{emotion}", state.emotion)
    : instruction.replace("{emotion}", "…");

  retry.hidden = state.phase !== "error";
  done.hidden = state.phase !== "completed";
  stage.hidden = state.phase === "completed";

  if (state.progress) {
    bar.style.width = `${Math.round(state.progress.fraction * 100)}%`;
    counter.textContent =
      `${state.progress.answered} / at most ${state.progress.worst_case}`;
  }

  switch (state.phase) {
    case "loading":
      status.textContent = "loading pair…";
      break;
    case "ready":
      status.textContent = "pick the stronger expression (click or ←/→)";
      break;
    case "posting":
      status.textContent = "saving…";
      break;
    case "error":
      status.textContent = `connection problem — ${state.message ?? "unknown"}`;
      break;
    case "completed": {
      status.textContent = "session complete";
      const link = el<HTMLAnchorElement>("ranking-link");
      if (state.rankingUrl) link.href = state.rankingUrl;
      break;
    }
  }

  const interactive = state.phase === "ready";
  for (const [img, url] of [[left, state.query?.leftUrl],
                            [right, state.query?.rightUrl]] as const) {
    if (url) img.src = url;
    img.classList.toggle("enabled", interactive);
  }
  el<HTMLDivElement>("choices").classList.toggle("disabled", !interactive);
}

export interface BootConfig {
  baseUrl: string;
  sessionId?: string;
  annotatorId?: string;
  emotion?: string;
  seed?: number;
  instruction?: string;
}

export async function boot(config: BootConfig): Promise<SessionController> {
  const client = new ApiClient(config.baseUrl, (url, init) => fetch(url, init));
  let sessionId = config.sessionId;
  if (!sessionId) {
    if (!config.annotatorId || !config.emotion) {
      throw new Error("need either sessionId or annotatorId + emotion");
    }
    const created = await client.createSession(
      config.annotatorId, config.emotion, config.seed ?? 0);
    sessionId = created.session_id;
  }
  const instruction = config.instruction
    ?? "Which face shows stronger {emotion}?";
  const controller = new SessionController(
    client, sessionId,
    (state) => render(state, instruction),
    preloadImage,
  );
  el<HTMLImageElement>("left-img").addEventListener("click", () => {
    void controller.choose("left");
  });
  el<HTMLImageElement>("right-img").addEventListener("click", () => {
    void controller.choose("right");
  });
  el<HTMLButtonElement>("retry").addEventListener("click", () => {
    void controller.retry();
  });
  window.addEventListener("keydown", (event) => {
    void controller.handleKey(event.key);
  });
  await controller.start();
  return controller;
}
