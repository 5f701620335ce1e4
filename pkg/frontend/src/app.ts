/**
 * Review queue single-page app.
 *
 * Renders pending mapping reviews exactly as the service reports them (same
 * order, same fields, no client-side scoring) and issues approve / reject /
 * modify decisions back.  Decisions update the view optimistically and roll
 * back on conflict or network failure.  The pending count is kept fresh by
 * polling; there is no push channel.
 */

import { ApiClient, ApiError, type FetchLike } from "./api";
import type { ConceptRef, Decision, ReviewItem, SearchResult } from "./wire";

export type AppOptions = {
  apiBase: string;
  pageSize?: number;
  pollMs?: number;
  fetchImpl?: FetchLike;
};

type Notice = {
  kind: "error" | "conflict" | "info";
  text: string;
  retry?: () => void;
};

type Flight = {
  key: string;
  item: ReviewItem;
  index: number;
};

const REVIEWER_STORAGE_KEY = "conceptlink.reviewer";

const PAST_TENSE: Record<Decision, string> = {
  approve: "approved",
  reject: "rejected",
  modify: "modified",
};

function newActionKey(): string {
  const c = globalThis.crypto;
  if (c && typeof c.randomUUID === "function") {
    return c.randomUUID();
  }
  return `act-${Date.now().toString(36)}-${Math.random().toString(36).slice(2)}`;
}

export class ReviewApp {
  readonly client: ApiClient;

  private readonly root: HTMLElement;
  private readonly doc: Document;
  private readonly pageSize: number;
  private readonly pollMs: number;

  private items: ReviewItem[] = [];
  private total = 0;
  private page = 1;
  private selected = 0;
  private notice: Notice | null = null;
  private lastAction = "";

  // One in-flight decision per item; a second click while pending is a no-op.
  private readonly inflight = new Map<string, Flight>();
  // Keys already handed to the wire; guards a key from ever firing twice.
  private readonly issuedKeys = new Set<string>();

  private panelFor: string | null = null;
  private searchResults: SearchResult[] = [];
  private readonly chosen = new Map<number, ConceptRef>();

  private pollTimer: ReturnType<typeof setInterval> | null = null;

  private reviewerInput!: HTMLInputElement;
  private countBadge!: HTMLElement;
  private statusLine!: HTMLElement;
  private bannerSlot!: HTMLElement;
  private queueSlot!: HTMLElement;
  private pagerSlot!: HTMLElement;
  private readonly keyHandler: (ev: KeyboardEvent) => void;

  constructor(root: HTMLElement, options: AppOptions) {
    this.root = root;
    this.doc = root.ownerDocument;
    this.pageSize = options.pageSize ?? 50;
    this.pollMs = options.pollMs ?? 5000;
    this.client = new ApiClient(options.apiBase, options.fetchImpl);
    this.buildSkeleton();
    this.keyHandler = (ev) => this.onKeydown(ev);
    this.doc.addEventListener("keydown", this.keyHandler);
  }

  /** Detach timers and document-level listeners. */
  dispose(): void {
    this.stopPolling();
    this.doc.removeEventListener("keydown", this.keyHandler);
  }

  // ---------------------------------------------------------------- skeleton

  private el<K extends keyof HTMLElementTagNameMap>(
    tag: K,
    className?: string,
    text?: string,
  ): HTMLElementTagNameMap[K] {
    const node = this.doc.createElement(tag);
    if (className) node.className = className;
    if (text !== undefined) node.textContent = text;
    return node;
  }

  private buildSkeleton(): void {
    this.root.textContent = "";

    const header = this.el("header", "topbar");
    header.appendChild(this.el("h1", "", "Mapping review"));

    const reviewerWrap = this.el("label", "reviewer");
    reviewerWrap.appendChild(this.el("span", "", "Reviewer"));
    this.reviewerInput = this.el("input");
    this.reviewerInput.type = "text";
    this.reviewerInput.placeholder = "your name";
    this.reviewerInput.value = this.loadReviewer();
    this.reviewerInput.addEventListener("change", () => {
      this.storeReviewer(this.reviewerInput.value.trim());
    });
    reviewerWrap.appendChild(this.reviewerInput);
    header.appendChild(reviewerWrap);

    this.countBadge = this.el("span", "count", "0 pending");
    header.appendChild(this.countBadge);

    const refresh = this.el("button", "ghost", "Refresh");
    refresh.addEventListener("click", () => void this.load());
    header.appendChild(refresh);

    this.statusLine = this.el("div", "status");
    this.bannerSlot = this.el("div", "banner-slot");
    this.queueSlot = this.el("div", "queue");
    this.queueSlot.addEventListener("click", (ev) => this.onQueueClick(ev));
    this.pagerSlot = this.el("footer", "pager");

    const hint = this.el(
      "div",
      "hint",
      "Shortcuts: j/k select, a approve, r reject, m modify, Esc close panel",
    );

    this.root.appendChild(header);
    this.root.appendChild(this.statusLine);
    this.root.appendChild(this.bannerSlot);
    this.root.appendChild(this.queueSlot);
    this.root.appendChild(this.pagerSlot);
    this.root.appendChild(hint);
  }

  private loadReviewer(): string {
    try {
      return this.doc.defaultView?.localStorage?.getItem(REVIEWER_STORAGE_KEY) ?? "";
    } catch {
      return "";
    }
  }

  private storeReviewer(name: string): void {
    try {
      this.doc.defaultView?.localStorage?.setItem(REVIEWER_STORAGE_KEY, name);
    } catch {
      // Storage unavailable; the session still works, the name is just not kept.
    }
  }

  // ------------------------------------------------------------ data loading

  /** Fetch the current page of the pending queue and re-render. */
  async load(): Promise<void> {
    try {
      const pageData = await this.client.fetchQueue(this.page, this.pageSize);
      this.items = pageData.items;
      this.total = pageData.total;
      if (this.panelFor && !this.items.some((it) => it.review_id === this.panelFor)) {
        this.closePanel();
      }
      this.render();
    } catch (err) {
      this.showNotice({
        kind: "error",
        text: `Could not load the review queue: ${describe(err)}`,
        retry: () => void this.load(),
      });
    }
  }

  /** Compare the polled pending count against the local one; reload on drift. */
  async refresh(): Promise<void> {
    try {
      const health = await this.client.health();
      if (health.pending_reviews !== this.total) {
        await this.load();
      }
    } catch {
      // Polling stays silent on failure; the next tick tries again.
    }
  }

  startPolling(): void {
    if (this.pollTimer !== null) return;
    this.pollTimer = setInterval(() => void this.refresh(), this.pollMs);
  }

  stopPolling(): void {
    if (this.pollTimer !== null) {
      clearInterval(this.pollTimer);
      this.pollTimer = null;
    }
  }

  // -------------------------------------------------------------- decisions

  private reviewerName(): string {
    return this.reviewerInput.value.trim();
  }

  /**
   * Issue one decision for one user action.
   *
   * The item leaves the list immediately; the list position is remembered so
   * a network failure can put it back.  A conflict means someone else already
   * decided, so the item is not restored; the queue is reloaded instead.
   */
  private decide(item: ReviewItem, decision: Decision, concepts?: ConceptRef[]): void {
    const reviewer = this.reviewerName();
    if (!reviewer) {
      this.showNotice({ kind: "error", text: "Enter a reviewer name before deciding." });
      this.reviewerInput.focus();
      return;
    }
    if (this.inflight.has(item.review_id)) {
      return;
    }
    const key = newActionKey();
    if (this.issuedKeys.has(key)) {
      return;
    }
    this.issuedKeys.add(key);

    const index = this.items.indexOf(item);
    this.items = this.items.filter((it) => it !== item);
    this.total = Math.max(0, this.total - 1);
    this.inflight.set(item.review_id, { key, item, index });
    if (this.panelFor === item.review_id) {
      this.closePanel();
    }
    this.render();

    void this.client
      .submitDecision(item.review_id, { decision, reviewer, concepts }, key)
      .then(() => {
        this.inflight.delete(item.review_id);
        this.lastAction = `${PAST_TENSE[decision]} "${item.label}"`;
        this.clearNotice();
        this.render();
      })
      .catch((err) => this.onDecisionError(item, decision, concepts, err));
  }

  private onDecisionError(
    item: ReviewItem,
    decision: Decision,
    concepts: ConceptRef[] | undefined,
    err: unknown,
  ): void {
    const flight = this.inflight.get(item.review_id);
    this.inflight.delete(item.review_id);
    if (err instanceof ApiError && err.isConflict) {
      this.showNotice({
        kind: "conflict",
        text: `"${item.label}" was already decided elsewhere; the queue has been refreshed.`,
      });
      void this.load();
      return;
    }
    // Anything else: the decision did not take effect, so the card comes back.
    this.restore(item, flight ? flight.index : this.items.length);
    if (err instanceof ApiError) {
      this.showNotice({ kind: "error", text: `Decision rejected: ${err.message}` });
    } else {
      this.showNotice({
        kind: "error",
        text: `Network failure while deciding "${item.label}".`,
        retry: () => this.decide(item, decision, concepts),
      });
    }
  }

  private restore(item: ReviewItem, index: number): void {
    if (!this.items.includes(item)) {
      this.items.splice(Math.min(index, this.items.length), 0, item);
      this.total += 1;
    }
    this.render();
  }

  // ----------------------------------------------------------- modify panel

  private openPanel(item: ReviewItem): void {
    this.panelFor = item.review_id;
    this.searchResults = [];
    this.chosen.clear();
    this.render();
  }

  private closePanel(): void {
    this.panelFor = null;
    this.searchResults = [];
    this.chosen.clear();
  }

  private async runSearch(query: string): Promise<void> {
    if (!query.trim()) return;
    try {
      const response = await this.client.searchConcepts(query.trim());
      this.searchResults = response.results;
      this.clearNotice();
      this.render();
    } catch (err) {
      this.showNotice({
        kind: "error",
        text: `Concept search failed: ${describe(err)}`,
        retry: () => void this.runSearch(query),
      });
    }
  }

  private toggleChoice(result: SearchResult): void {
    if (this.chosen.has(result.omop_id)) {
      this.chosen.delete(result.omop_id);
    } else {
      this.chosen.set(result.omop_id, {
        code: result.code,
        omop_id: result.omop_id,
        role: "base",
      });
    }
    this.render();
  }

  private applyModify(item: ReviewItem): void {
    if (this.chosen.size === 0) {
      this.showNotice({ kind: "error", text: "Pick at least one concept to modify to." });
      return;
    }
    this.decide(item, "modify", [...this.chosen.values()]);
  }

  // ----------------------------------------------------------------- events

  private onQueueClick(ev: Event): void {
    const target = ev.target as HTMLElement | null;
    const card = target?.closest<HTMLElement>("[data-review-id]");
    const item = card
      ? this.items.find((it) => it.review_id === card.dataset.reviewId)
      : undefined;
    if (!item) return;
    this.selected = this.items.indexOf(item);

    const button = target?.closest<HTMLElement>("[data-action]");
    if (!button) {
      this.render();
      return;
    }
    switch (button.dataset.action) {
      case "approve":
        this.decide(item, "approve");
        break;
      case "reject":
        this.decide(item, "reject");
        break;
      case "modify":
        if (this.panelFor === item.review_id) {
          this.closePanel();
          this.render();
        } else {
          this.openPanel(item);
        }
        break;
      case "search": {
        const input = card?.querySelector<HTMLInputElement>(".search-input");
        if (input) void this.runSearch(input.value);
        break;
      }
      case "choose": {
        const omop = Number(button.dataset.omopId);
        const result = this.searchResults.find((r) => r.omop_id === omop);
        if (result) this.toggleChoice(result);
        break;
      }
      case "apply-modify":
        this.applyModify(item);
        break;
    }
  }

  private onKeydown(ev: KeyboardEvent): void {
    const target = ev.target as HTMLElement | null;
    const tag = target?.tagName ?? "";
    if (tag === "INPUT" || tag === "TEXTAREA" || tag === "SELECT") {
      if (ev.key === "Escape") {
        (target as HTMLElement).blur();
      }
      return;
    }
    const current = this.items[this.selected];
    switch (ev.key) {
      case "j":
      case "ArrowDown":
        this.selected = Math.min(this.selected + 1, this.items.length - 1);
        this.render();
        break;
      case "k":
      case "ArrowUp":
        this.selected = Math.max(this.selected - 1, 0);
        this.render();
        break;
      case "a":
        if (current) this.decide(current, "approve");
        break;
      case "r":
        if (current) this.decide(current, "reject");
        break;
      case "m":
        if (current && this.panelFor === current.review_id) {
          this.closePanel();
          this.render();
        } else if (current) {
          this.openPanel(current);
        }
        break;
      case "Escape":
        this.closePanel();
        this.render();
        break;
    }
  }

  // -------------------------------------------------------------- rendering

  private showNotice(notice: Notice): void {
    this.notice = notice;
    this.render();
  }

  private clearNotice(): void {
    this.notice = null;
  }

  private render(): void {
    this.selected = Math.max(0, Math.min(this.selected, this.items.length - 1));
    this.countBadge.textContent = `${this.total} pending`;
    this.statusLine.textContent = this.lastAction;
    this.renderBanner();
    this.renderQueue();
    this.renderPager();
  }

  private renderBanner(): void {
    this.bannerSlot.textContent = "";
    if (!this.notice) return;
    const banner = this.el("div", `banner ${this.notice.kind}`);
    banner.appendChild(this.el("span", "banner-text", this.notice.text));
    if (this.notice.retry) {
      const retry = this.el("button", "", "Retry");
      const action = this.notice.retry;
      retry.dataset.role = "retry";
      retry.addEventListener("click", () => {
        this.clearNotice();
        action();
      });
      banner.appendChild(retry);
    }
    const dismiss = this.el("button", "ghost", "Dismiss");
    dismiss.dataset.role = "dismiss";
    dismiss.addEventListener("click", () => {
      this.clearNotice();
      this.render();
    });
    banner.appendChild(dismiss);
    this.bannerSlot.appendChild(banner);
  }

  private renderQueue(): void {
    this.queueSlot.textContent = "";
    if (this.items.length === 0) {
      this.queueSlot.appendChild(this.el("p", "empty", "No pending reviews."));
      return;
    }
    // Cards appear exactly in service order (created_at, then review id).
    this.items.forEach((item, index) => {
      this.queueSlot.appendChild(this.renderCard(item, index === this.selected));
    });
  }

  private renderCard(item: ReviewItem, isSelected: boolean): HTMLElement {
    const card = this.el("article", isSelected ? "card selected" : "card");
    card.dataset.reviewId = item.review_id;

    const head = this.el("header", "card-head");
    head.appendChild(this.el("span", "label", item.label));
    head.appendChild(this.el("span", `badge judgement-${item.judgement}`, item.judgement));
    card.appendChild(head);

    card.appendChild(this.el("div", "meta", `queued ${item.created_at} · ${item.review_id}`));

    const table = this.el("table", "concepts");
    const headRow = this.el("tr");
    for (const title of ["role", "code", "omop id"]) {
      headRow.appendChild(this.el("th", "", title));
    }
    table.appendChild(headRow);
    for (const ref of item.concepts) {
      const row = this.el("tr");
      row.appendChild(this.el("td", "", ref.role));
      row.appendChild(this.el("td", "", ref.code));
      row.appendChild(this.el("td", "", String(ref.omop_id)));
      table.appendChild(row);
    }
    card.appendChild(table);

    const actions = this.el("div", "actions");
    for (const [action, text] of [
      ["approve", "Approve"],
      ["reject", "Reject"],
      ["modify", "Modify…"],
    ] as const) {
      const button = this.el("button", action === "modify" ? "ghost" : action, text);
      button.dataset.action = action;
      actions.appendChild(button);
    }
    card.appendChild(actions);

    if (this.panelFor === item.review_id) {
      card.appendChild(this.renderSearchPanel(item));
    }
    return card;
  }

  private renderSearchPanel(item: ReviewItem): HTMLElement {
    const panel = this.el("div", "search-panel");

    const row = this.el("div", "search-row");
    const input = this.el("input", "search-input");
    input.type = "text";
    input.placeholder = "search concepts";
    input.addEventListener("keydown", (ev) => {
      if (ev.key === "Enter") void this.runSearch(input.value);
    });
    row.appendChild(input);
    const go = this.el("button", "", "Search");
    go.dataset.action = "search";
    row.appendChild(go);
    panel.appendChild(row);

    if (this.searchResults.length > 0) {
      const list = this.el("table", "results");
      const headRow = this.el("tr");
      for (const title of ["", "name", "vocabulary", "code", "omop id", "score"]) {
        headRow.appendChild(this.el("th", "", title));
      }
      list.appendChild(headRow);
      // Result order and scores come straight from the service.
      for (const result of this.searchResults) {
        const row = this.el("tr", this.chosen.has(result.omop_id) ? "chosen" : "");
        const pickCell = this.el("td");
        const pick = this.el("button", "ghost", this.chosen.has(result.omop_id) ? "✓" : "use");
        pick.dataset.action = "choose";
        pick.dataset.omopId = String(result.omop_id);
        pickCell.appendChild(pick);
        row.appendChild(pickCell);
        row.appendChild(this.el("td", "", result.name));
        row.appendChild(this.el("td", "", result.vocabulary));
        row.appendChild(this.el("td", "", result.code));
        row.appendChild(this.el("td", "", String(result.omop_id)));
        row.appendChild(this.el("td", "score", String(result.fused_score)));
        list.appendChild(row);
      }
      panel.appendChild(list);

      const apply = this.el("button", "approve", "Apply modification");
      apply.dataset.action = "apply-modify";
      panel.appendChild(apply);
    }
    return panel;
  }

  private renderPager(): void {
    this.pagerSlot.textContent = "";
    const pages = Math.max(1, Math.ceil(this.total / this.pageSize));
    if (pages <= 1) return;

    const prev = this.el("button", "ghost", "← prev");
    prev.disabled = this.page <= 1;
    prev.addEventListener("click", () => {
      this.page -= 1;
      void this.load();
    });
    const next = this.el("button", "ghost", "next →");
    next.disabled = this.page >= pages;
    next.addEventListener("click", () => {
      this.page += 1;
      void this.load();
    });
    this.pagerSlot.appendChild(prev);
    this.pagerSlot.appendChild(this.el("span", "", `page ${this.page} of ${pages}`));
    this.pagerSlot.appendChild(next);
  }
}

function describe(err: unknown): string {
  if (err instanceof Error) return err.message;
  return String(err);
}
