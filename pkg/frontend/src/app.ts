/** DOM wiring: render pairs side by side, map clicks and keys 1-5 to labels. */

import { HttpApi } from "./api.js";
import { ReviewSession } from "./session.js";
import { LABELS, LABEL_TITLES, type Label, type PairView, type Progress, type ReportView } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function reviewerIdFromLocation(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("reviewer");
  if (fromQuery) {
    window.localStorage.setItem("leakcheck-reviewer", fromQuery);
    return fromQuery;
  }
  const stored = window.localStorage.getItem("leakcheck-reviewer");
  if (stored) return stored;
  const entered = window.prompt("Reviewer id:") || `reviewer-${Date.now()}`;
  window.localStorage.setItem("leakcheck-reviewer", entered);
  return entered;
}

export class App {
  private readonly root: HTMLElement;
  private readonly session: ReviewSession;
  private lastLabel: Label | null = null;

  constructor(root: HTMLElement, session: ReviewSession) {
    this.root = root;
    this.session = session;
  }

  async start(): Promise<void> {
    document.addEventListener("keydown", (event) => {
      const index = Number.parseInt(event.key, 10) - 1;
      if (index >= 0 && index < LABELS.length) {
        void this.label(LABELS[index]);
      }
    });
    await this.session.advance();
    await this.render();
  }

  private async label(value: Label): Promise<void> {
    this.lastLabel = value;
    const outcome = await this.session.submit(value);
    if (outcome === null) return; // done screen or mid-submit: no-op
    if (outcome.kind === "error") {
      await this.render(outcome.message);
      return;
    }
    await this.render();
  }

  private async retry(): Promise<void> {
    if (this.session.pair && this.lastLabel) {
      await this.label(this.lastLabel);
    } else {
      await this.session.advance();
      await this.render();
    }
  }

  private async render(errorMessage?: string): Promise<void> {
    const state = this.session.current;
    this.root.replaceChildren();

    if (errorMessage !== undefined || state.kind === "error") {
      const banner = el("div", "banner error");
      banner.append(
        el("span", "", errorMessage ?? (state.kind === "error" ? state.message : "")),
      );
      const retryButton = el("button", "retry", "Retry");
      retryButton.addEventListener("click", () => void this.retry());
      banner.append(retryButton);
      this.root.append(banner);
      if (state.kind === "error") return; // nothing else to show
    }

    if (state.kind === "done") {
      const done = el("div", "done");
      done.append(el("h2", "", "All pairs reviewed"));
      done.append(
        el("p", "", `${state.progress.labeled} of ${state.progress.total} pairs labeled.`),
      );
      this.root.append(done);
      this.root.append(await this.talliesPanel());
      return;
    }

    if (state.kind !== "reviewing") return;
    const pair = state.pair;
    this.root.append(this.pairPanel(pair));
    this.root.append(this.buttonsPanel());
    this.root.append(this.progressPanel(pair.progress));
    this.root.append(await this.talliesPanel());
  }

  private pairPanel(pair: PairView): HTMLElement {
    const panel = el("div", "pair");
    for (const side of [
      { title: "Synthetic", url: pair.synth_url, path: pair.synth_path },
      { title: "Real (training)", url: pair.real_url, path: pair.real_path },
    ]) {
      const card = el("figure", "card");
      const img = el("img");
      img.src = side.url;
      img.alt = side.path;
      card.append(el("figcaption", "", side.title), img);
      panel.append(card);
    }
    const meta = el("div", "meta");
    meta.append(el("span", "rank", `rank ${pair.rank}`));
    meta.append(el("span", "score", `cosine ${pair.score.toFixed(4)}`));
    meta.append(
      el(
        "span",
        pair.above_threshold ? "flag above" : "flag below",
        pair.above_threshold ? "above threshold" : "below threshold",
      ),
    );
    panel.append(meta);
    return panel;
  }

  private buttonsPanel(): HTMLElement {
    const panel = el("div", "labels");
    LABELS.forEach((value, index) => {
      const button = el("button", `label ${value}`, `${index + 1}. ${LABEL_TITLES[value]}`);
      button.addEventListener("click", () => void this.label(value));
      panel.append(button);
    });
    return panel;
  }

  private progressPanel(progress: Progress): HTMLElement {
    return el("div", "progress", `${progress.labeled} / ${progress.total} labeled`);
  }

  private async talliesPanel(): Promise<HTMLElement> {
    const panel = el("div", "tallies");
    let report: ReportView;
    try {
      report = await this.session.report();
    } catch {
      return panel; // tallies are never fabricated client-side
    }
    for (const value of LABELS) {
      panel.append(
        el("span", "tally", `${LABEL_TITLES[value]}: ${report.review.tallies[value] ?? 0}`),
      );
    }
    panel.append(
      el("span", "tally leaks", `consensus leaks: ${report.review.consensus_leaked_count}`),
    );
    return panel;
  }
}

export function boot(): void {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  const session = new ReviewSession(new HttpApi(""), reviewerIdFromLocation());
  const app = new App(root, session);
  void app.start();
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  boot();
}
