/** Review session state machine, independent of the DOM.
 *
 * The one rule that matters: a label is only treated as recorded once the
 * service acknowledges it. A failed submit keeps the same pair current so the
 * reviewer can retry, and retries are safe because the service deduplicates
 * identical (pair, reviewer, label) submissions.
 */

import type { Api, Label, NextResponse, PairView, Progress, ReportView } from "./types.js";

export type SessionState =
  | { kind: "loading" }
  | { kind: "reviewing"; pair: PairView }
  | { kind: "done"; progress: Progress }
  | { kind: "error"; message: string };

export class ReviewSession {
  private state: SessionState = { kind: "loading" };
  private submitting = false;

  constructor(
    private readonly api: Api,
    readonly reviewerId: string,
  ) {}

  get current(): SessionState {
    return this.state;
  }

  /** The pair on screen, if any. */
  get pair(): PairView | null {
    return this.state.kind === "reviewing" ? this.state.pair : null;
  }

  /** Fetch the next pair for this reviewer (also the entry point). */
  async advance(): Promise<SessionState> {
    try {
      const next: NextResponse = await this.api.nextPair(this.reviewerId);
      this.state = next.done
        ? { kind: "done", progress: next.progress }
        : { kind: "reviewing", pair: next };
    } catch (err) {
      this.state = { kind: "error", message: String(err) };
    }
    return this.state;
  }

  /**
   * Submit a label for the displayed pair and advance only after the ack.
   * On failure the pair stays current and the error is returned for the UI
   * to surface; calling submit again retries the same idempotent payload.
   * Returns null when there is nothing to label (done screen, no-op).
   */
  async submit(label: Label): Promise<SessionState | null> {
    if (this.state.kind !== "reviewing" || this.submitting) {
      return null;
    }
    const pair = this.state.pair;
    this.submitting = true;
    try {
      await this.api.submitLabel(pair.pair_id, this.reviewerId, label);
    } catch (err) {
      return { kind: "error", message: String(err) };
    } finally {
      this.submitting = false;
    }
    return this.advance();
  }

  /** Server-side tallies; the UI renders these verbatim. */
  report(): Promise<ReportView> {
    return this.api.report();
  }
}
