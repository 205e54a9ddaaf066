// Session state machine. The server is the single source of truth: this
// controller only caches the current pair and play-gating flags, so closing
// and reopening the page lands exactly where the server says.

import { ApiClient, HttpError } from "./api.js";
import type { AudioPlayer } from "./player.js";
import type { Choice, PairView, Progress, UiState } from "./types.js";

type Listener = (state: UiState) => void;

export class SessionController {
  private api: ApiClient;
  private player: AudioPlayer;
  private listeners: Listener[] = [];
  private submitting = false;
  private breakAcknowledged = false;

  sessionId: string | null = null;
  state: UiState = { kind: "idle" };

  constructor(api: ApiClient, player: AudioPlayer) {
    this.api = api;
    this.player = player;
  }

  onChange(listener: Listener): void {
    this.listeners.push(listener);
  }

  private setState(state: UiState): void {
    this.state = state;
    for (const listener of this.listeners) listener(state);
  }

  /** Start a fresh session. */
  async start(listenerTag = "browser"): Promise<UiState> {
    const descriptor = await this.api.createSession(listenerTag);
    this.sessionId = descriptor.session_id;
    return this.advance();
  }

  /** Re-attach to an existing session after a reload; the server hands back
   * the same unlabeled pair. */
  async resume(sessionId: string): Promise<UiState> {
    this.sessionId = sessionId;
    try {
      await this.api.getProgress(sessionId);
    } catch (err) {
      if (err instanceof HttpError && err.status === 404) {
        this.sessionId = null;
        return this.start();
      }
      throw err;
    }
    return this.advance();
  }

  /** Fetch the next pair (or the same unlabeled one) and recompute the view. */
  async advance(): Promise<UiState> {
    if (this.sessionId === null) throw new Error("no session");
    const progress = await this.api.getProgress(this.sessionId);
    if (progress.break_due && !this.breakAcknowledged && progress.pending > 0) {
      this.setState({ kind: "break", progress });
      return this.state;
    }
    const pair = await this.api.getPair(this.sessionId);
    if (pair === null) {
      this.setState({ kind: "round_complete", progress });
      return this.state;
    }
    const view: PairView = {
      pairId: pair.pair_id,
      audioA: pair.audio_a,
      audioB: pair.audio_b,
      playedA: false,
      playedB: false,
      replayCountA: 0,
      replayCountB: 0,
    };
    this.setState({ kind: "pair", pair: view, progress });
    return this.state;
  }

  continueAfterBreak(): Promise<UiState> {
    this.breakAcknowledged = true;
    return this.advance();
  }

  /** Play one side to the end; counts replays and unlocks submission once
   * both sides have been heard. */
  async play(side: "A" | "B"): Promise<void> {
    if (this.state.kind !== "pair") throw new Error("no pair on screen");
    const pair = this.state.pair;
    await this.player.play(side === "A" ? pair.audioA : pair.audioB);
    if (side === "A") {
      pair.playedA = true;
      pair.replayCountA += 1;
    } else {
      pair.playedB = true;
      pair.replayCountB += 1;
    }
    this.setState({ ...this.state, pair });
  }

  get submitEnabled(): boolean {
    return (
      this.state.kind === "pair" &&
      this.state.pair.playedA &&
      this.state.pair.playedB &&
      !this.submitting
    );
  }

  /** Submit one of the four options. Gated on both sides having been played;
   * re-entrant calls are dropped; a 409 (already labeled elsewhere)
   * resynchronizes from the server instead of failing the session. */
  async submit(choice: Choice): Promise<UiState> {
    if (this.state.kind !== "pair") throw new Error("no pair on screen");
    if (!this.submitEnabled) {
      throw new Error("both sides must be played before submitting");
    }
    if (this.sessionId === null) throw new Error("no session");
    this.submitting = true;
    this.breakAcknowledged = false;
    try {
      await this.api.postFeedback(this.sessionId, this.state.pair.pairId, choice);
    } catch (err) {
      if (!(err instanceof HttpError && err.status === 409)) {
        this.submitting = false;
        throw err;
      }
      // already labeled (double submission across tabs): fall through and resync
    } finally {
      this.submitting = false;
    }
    return this.advance();
  }

  async results(): Promise<UiState> {
    if (this.sessionId === null) throw new Error("no session");
    const tally = await this.api.getResults(this.sessionId);
    this.setState({ kind: "results", tally });
    return this.state;
  }
}

export const KEY_TO_CHOICE: Record<string, Choice> = {
  "1": "A",
  "2": "B",
  "3": "EQUAL",
  "4": "NEITHER",
};
