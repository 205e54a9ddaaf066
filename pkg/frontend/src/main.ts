// DOM wiring: two blinded players, four answer buttons (keys 1-4), block
// progress, break and completion screens. The session id is the only thing
// kept across reloads.

import { ApiClient } from "./api.js";
import { HtmlAudioPlayer } from "./player.js";
import { KEY_TO_CHOICE, SessionController } from "./session.js";
import type { Choice, UiState } from "./types.js";

const SESSION_KEY = "prefcomp_session";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function render(controller: SessionController, state: UiState): void {
  const pairCard = el("pair-card");
  const breakCard = el("break-card");
  const doneCard = el("done-card");
  const errorCard = el("error-card");
  for (const card of [pairCard, breakCard, doneCard, errorCard]) {
    card.hidden = true;
  }

  if (state.kind === "pair") {
    pairCard.hidden = false;
    el("progress-label").textContent =
      `Block ${state.progress.block} of ${state.progress.blocks} - ` +
      `pair ${state.progress.pair_index} of ${state.progress.pairs_per_block}`;
    el<HTMLButtonElement>("play-a").classList.toggle("played", state.pair.playedA);
    el<HTMLButtonElement>("play-b").classList.toggle("played", state.pair.playedB);
    const enabled = controller.submitEnabled;
    for (const choice of ["A", "B", "EQUAL", "NEITHER"]) {
      el<HTMLButtonElement>(`choose-${choice.toLowerCase()}`).disabled = !enabled;
    }
    el("gate-hint").hidden = enabled;
  } else if (state.kind === "break") {
    breakCard.hidden = false;
    el("break-label").textContent =
      `Block ${state.progress.block - 1} finished - take a short break.`;
  } else if (state.kind === "round_complete") {
    doneCard.hidden = false;
    el("done-label").textContent =
      `All pairs in this round are answered (${state.progress.labeled} total). ` +
      "You can close this page.";
  } else if (state.kind === "error") {
    errorCard.hidden = false;
    el("error-label").textContent = state.message;
  }
}

async function guard(action: () => Promise<unknown>): Promise<void> {
  try {
    await action();
  } catch (err) {
    const card = el("error-card");
    card.hidden = false;
    el("error-label").textContent = err instanceof Error ? err.message : String(err);
  }
}

async function boot(): Promise<void> {
  const api = new ApiClient();
  const controller = new SessionController(api, new HtmlAudioPlayer());
  controller.onChange((state) => render(controller, state));

  el<HTMLButtonElement>("play-a").addEventListener("click", () => guard(() => controller.play("A")));
  el<HTMLButtonElement>("play-b").addEventListener("click", () => guard(() => controller.play("B")));
  for (const choice of ["A", "B", "EQUAL", "NEITHER"] as Choice[]) {
    el<HTMLButtonElement>(`choose-${choice.toLowerCase()}`).addEventListener("click", () =>
      guard(() => controller.submit(choice)),
    );
  }
  el<HTMLButtonElement>("continue-btn").addEventListener("click", () =>
    guard(() => controller.continueAfterBreak()),
  );

  document.addEventListener("keydown", (event) => {
    const choice = KEY_TO_CHOICE[event.key];
    if (choice && controller.submitEnabled) {
      void guard(() => controller.submit(choice));
    }
  });

  const existing = sessionStorage.getItem(SESSION_KEY);
  await guard(async () => {
    if (existing) {
      await controller.resume(existing);
    } else {
      await controller.start();
    }
    if (controller.sessionId) {
      sessionStorage.setItem(SESSION_KEY, controller.sessionId);
    }
  });
}

void boot();
