// Wire types of the preference service. The payloads never identify which
// compression setting is behind a side; blinding lives entirely server-side.

export type Choice = "A" | "B" | "EQUAL" | "NEITHER";

export interface SessionPlan {
  pairs_per_block: number;
  blocks: number;
}

export interface SessionDescriptor {
  session_id: string;
  phase: string;
  plan: SessionPlan;
  block: number;
  labeled: number;
}

export interface PairPresentation {
  pair_id: string;
  phase: string;
  audio_a: string;
  audio_b: string;
}

export interface Progress {
  session: string;
  phase: string;
  block: number;
  blocks: number;
  pairs_per_block: number;
  pair_index: number;
  served: number;
  labeled: number;
  break_due: boolean;
  pending: number;
}

export interface ResultsTally {
  personalized: number;
  reference: number;
  equal: number;
  neither: number;
  pairs: number;
  percent: Record<string, number>;
}

export interface PairView {
  pairId: string;
  audioA: string;
  audioB: string;
  playedA: boolean;
  playedB: boolean;
  replayCountA: number;
  replayCountB: number;
}

export type UiState =
  | { kind: "idle" }
  | { kind: "pair"; pair: PairView; progress: Progress }
  | { kind: "break"; progress: Progress }
  | { kind: "round_complete"; progress: Progress }
  | { kind: "results"; tally: ResultsTally }
  | { kind: "error"; message: string };
