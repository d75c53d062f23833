/** Shared types for the review service JSON API. */

export const LABELS = [
  "leaked",
  "child",
  "no_face",
  "not_same_identity",
  "uncertain",
] as const;

export type Label = (typeof LABELS)[number];

export const LABEL_TITLES: Record<Label, string> = {
  leaked: "Leaked",
  child: "Child",
  no_face: "No face",
  not_same_identity: "Not same identity",
  uncertain: "Uncertain",
};

export interface Progress {
  labeled: number;
  total: number;
}

/** One candidate pair as served by GET /api/queue/next. */
export interface PairView {
  done: false;
  pair_id: string;
  rank: number;
  synth_index: number;
  real_index: number;
  score: number;
  synth_path: string;
  real_path: string;
  synth_url: string;
  real_url: string;
  above_threshold: boolean;
  progress: Progress;
}

export interface DoneView {
  done: true;
  progress: Progress;
}

export type NextResponse = PairView | DoneView;

export interface LabelAck {
  ok: boolean;
  record_id: string;
  duplicate: boolean;
  progress: Progress;
}

export interface ReportView {
  review: {
    tallies: Record<string, number>;
    reviewed_pairs: number;
    consensus_leaked_count: number;
    required_reviewers: number;
  };
  [key: string]: unknown;
}

/** The surface the session controller needs; HTTP and test fakes both provide it. */
export interface Api {
  nextPair(reviewerId: string): Promise<NextResponse>;
  submitLabel(pairId: string, reviewerId: string, label: Label): Promise<LabelAck>;
  report(): Promise<ReportView>;
}
