// Visual canvas client: topic panel, side-by-side joke maps, echo assistant.
//
// The app never mutates state locally. Every action issues its endpoint call,
// waits for the job, refetches the session snapshot, and re-renders from it.
// At most one mutation is in flight per session: controls are disabled while
// an action is pending.

import { ApiClient, ApiError } from "./api.js";
import type { BlockSnapshot, MapSnapshot, SessionSnapshot } from "./types.js";

interface EchoSelection {
  mapId: string;
  blockId: string;
}

const STAGE_LABELS: Record<string, string> = {
  topic_ideation: "Topic ideation",
  inspiration_generation: "Inspiration generation",
  validation_refinement: "Validation and refinement",
  final_synthesis: "Final synthesis",
};

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

export class CanvasApp {
  session: SessionSnapshot | null = null;
  busy = false;
  error: string | null = null;
  selected: EchoSelection | null = null;
  /** Last started action; tests await this to step deterministically. */
  lastAction: Promise<void> = Promise.resolve();
  private versionView = new Map<string, number>();

  constructor(
    private root: HTMLElement,
    public api: ApiClient,
  ) {}

  async init(sessionId?: string): Promise<void> {
    if (sessionId) {
      this.session = await this.api.getSession(sessionId);
    }
    this.render();
  }

  // -- actions ---------------------------------------------------------------

  private runAction(fn: () => Promise<void>): Promise<void> {
    if (this.busy) return this.lastAction;
    this.busy = true;
    this.error = null;
    this.render();
    this.lastAction = (async () => {
      try {
        await fn();
      } catch (e) {
        this.error = e instanceof ApiError ? `${e.code}: ${e.message}` : String(e);
      } finally {
        this.busy = false;
        await this.refresh();
      }
    })();
    return this.lastAction;
  }

  private async refresh(): Promise<void> {
    if (this.session) {
      this.session = await this.api.getSession(this.session.id);
      if (
        this.selected &&
        !this.session.maps
          .find((m) => m.id === this.selected!.mapId)
          ?.pool.some((b) => b.id === this.selected!.blockId)
      ) {
        this.selected = null; // block or map vanished; close the panel gracefully
      }
    }
    this.render();
  }

  private async command(call: Promise<{ job: { job_id: string; state: string } }>): Promise<void> {
    const response = await call;
    await this.api.waitForJob(response.job as never);
  }

  createSession(topic: string, supplements: string[]): Promise<void> {
    return this.runAction(async () => {
      const created = await this.api.createSession(topic, supplements);
      this.session = created.session;
    });
  }

  generateSummary(): Promise<void> {
    return this.runAction(() => this.command(this.api.summarize(this.session!.id)));
  }

  resummarize(topic: string, supplements: string[]): Promise<void> {
    return this.runAction(() => this.command(this.api.resummarize(this.session!.id, topic, supplements)));
  }

  /** "Generate Jokes": confirm the summary, then run initial generation. */
  generateJokes(): Promise<void> {
    return this.runAction(async () => {
      await this.command(this.api.confirmSummary(this.session!.id));
      await this.command(this.api.generate(this.session!.id));
    });
  }

  addMap(mode: "ai_generated" | "manual"): Promise<void> {
    return this.runAction(() => this.command(this.api.addMap(this.session!.id, mode)));
  }

  removeMap(mapId: string): Promise<void> {
    return this.runAction(() => this.command(this.api.removeMap(this.session!.id, mapId)));
  }

  addManualBlock(mapId: string, text: string): Promise<void> {
    return this.runAction(() => this.command(this.api.addManualBlock(this.session!.id, mapId, text)));
  }

  addAiBlock(mapId: string): Promise<void> {
    return this.runAction(() => this.command(this.api.addAiBlock(this.session!.id, mapId)));
  }

  editBlock(mapId: string, blockId: string, text: string): Promise<void> {
    return this.runAction(() => this.command(this.api.editBlock(this.session!.id, mapId, blockId, text)));
  }

  deleteBlock(mapId: string, blockId: string): Promise<void> {
    return this.runAction(() => this.command(this.api.deleteBlock(this.session!.id, mapId, blockId)));
  }

  regenerate(mapId: string): Promise<void> {
    return this.runAction(async () => {
      await this.command(this.api.regenerate(this.session!.id, mapId));
      this.versionView.delete(mapId); // snap the selector to the new latest
    });
  }

  completeMap(mapId: string): Promise<void> {
    return this.runAction(() => this.command(this.api.completeMap(this.session!.id, mapId)));
  }

  finalize(mapId: string): Promise<void> {
    return this.runAction(() => this.command(this.api.finalize(this.session!.id, mapId)));
  }

  selectBlock(mapId: string, blockId: string): void {
    this.selected = { mapId, blockId };
    this.render();
  }

  closeEcho(): void {
    this.selected = null;
    this.render();
  }

  selectVersion(mapId: string, version: number): void {
    this.versionView.set(mapId, version);
    this.render();
  }

  // -- rendering ---------------------------------------------------------------

  render(): void {
    this.root.replaceChildren();
    this.root.appendChild(this.renderHeader());
    if (this.error) {
      this.root.appendChild(el("div", "toast error", this.error));
    }
    if (!this.session) {
      this.root.appendChild(this.renderNewSessionForm());
      return;
    }
    if (this.session.stage === "topic_ideation") {
      this.root.appendChild(this.renderTopicPanel());
    } else {
      this.root.appendChild(this.renderCanvas());
    }
  }

  private renderHeader(): HTMLElement {
    const header = el("header", "topbar");
    header.appendChild(el("h1", "brand", "Joke Canvas"));
    if (this.session) {
      const badge = el("span", `stage-badge stage-${this.session.stage}`);
      badge.textContent = STAGE_LABELS[this.session.stage] ?? this.session.stage;
      badge.dataset.stage = this.session.stage;
      header.appendChild(badge);
      header.appendChild(el("span", "session-id", this.session.id));
    }
    if (this.busy) {
      header.appendChild(el("span", "busy-indicator", "working..."));
    }
    return header;
  }

  private renderNewSessionForm(): HTMLElement {
    const panel = el("section", "panel topic-panel");
    panel.appendChild(el("h2", undefined, "New routine"));
    const topic = el("input", "topic-input");
    topic.placeholder = "Creation topic";
    topic.id = "topic-input";
    const supplements = el("textarea", "supplements-input");
    supplements.placeholder = "Supplementary ideas, one per line";
    supplements.id = "supplements-input";
    const start = el("button", "primary", "Create session");
    start.id = "create-session";
    start.disabled = this.busy;
    start.addEventListener("click", () => {
      const lines = supplements.value.split("\n").map((s) => s.trim()).filter(Boolean);
      void this.createSession(topic.value, lines);
    });
    panel.append(topic, supplements, start);
    return panel;
  }

  private renderTopicPanel(): HTMLElement {
    const session = this.session!;
    const panel = el("section", "panel topic-panel");
    panel.appendChild(el("h2", undefined, "Topic ideation"));

    const topic = el("input", "topic-input");
    topic.id = "topic-input";
    topic.value = session.brief.topic;
    const supplements = el("textarea", "supplements-input");
    supplements.id = "supplements-input";
    supplements.value = session.brief.supplements.join("\n");
    panel.append(topic, supplements);

    const actions = el("div", "actions");
    if (session.summary) {
      const summaryBox = el("div", "summary-box");
      summaryBox.id = "summary-box";
      summaryBox.appendChild(el("p", "summary-text", session.summary.raw_text));
      const meta = el("ul", "summary-meta");
      meta.append(
        el("li", undefined, `Theme: ${session.summary.theme}`),
        el("li", undefined, `Audience: ${session.summary.audience}`),
        el("li", undefined, `Style: ${session.summary.style}`),
      );
      summaryBox.appendChild(meta);
      panel.appendChild(summaryBox);

      const resummary = el("button", undefined, "Re-Summary");
      resummary.id = "resummary";
      resummary.disabled = this.busy;
      resummary.addEventListener("click", () => {
        const lines = supplements.value.split("\n").map((s) => s.trim()).filter(Boolean);
        void this.resummarize(topic.value, lines);
      });
      const confirm = el("button", "primary", "Generate Jokes");
      confirm.id = "generate-jokes";
      confirm.disabled = this.busy;
      confirm.addEventListener("click", () => void this.generateJokes());
      actions.append(resummary, confirm);
    } else {
      const summarize = el("button", "primary", "Generate Summary");
      summarize.id = "generate-summary";
      summarize.disabled = this.busy;
      summarize.addEventListener("click", () => void this.generateSummary());
      actions.appendChild(summarize);
    }
    panel.appendChild(actions);
    return panel;
  }

  private renderCanvas(): HTMLElement {
    const session = this.session!;
    const wrap = el("div", "canvas-wrap");

    const controls = el("div", "canvas-controls");
    const addAi = el("button", undefined, "Add a Joke Map (AI)");
    addAi.id = "add-map-ai";
    addAi.disabled = this.busy || session.stage !== "validation_refinement";
    addAi.addEventListener("click", () => void this.addMap("ai_generated"));
    const addManual = el("button", undefined, "Add a Joke Map (manual)");
    addManual.id = "add-map-manual";
    addManual.disabled = this.busy || session.stage !== "validation_refinement";
    addManual.addEventListener("click", () => void this.addMap("manual"));
    controls.append(addAi, addManual);
    wrap.appendChild(controls);

    const grid = el("div", "map-grid");
    grid.id = "map-grid";
    for (const map of session.maps) {
      grid.appendChild(this.renderMap(map));
    }
    wrap.appendChild(grid);

    if (this.selected) {
      const map = session.maps.find((m) => m.id === this.selected!.mapId);
      const block = map?.pool.find((b) => b.id === this.selected!.blockId);
      if (map && block) {
        wrap.appendChild(this.renderEchoPanel(map, block));
      }
    }
    return wrap;
  }

  private renderMap(map: MapSnapshot): HTMLElement {
    const session = this.session!;
    const refining = session.stage === "validation_refinement" && !this.busy;
    const card = el("article", "map-card");
    card.dataset.mapId = map.id;

    const head = el("div", "map-head");
    const title =
      map.prototypes.length > 0
        ? map.prototypes[map.prototypes.length - 1].title
        : map.theme?.label ?? "(empty map)";
    head.appendChild(el("h3", "map-title", title));
    const badge = el("span", `draft-badge draft-${map.draft_state}`, map.draft_state);
    badge.dataset.draftState = map.draft_state;
    head.appendChild(badge);
    if (session.final_map_id === map.id) {
      head.appendChild(el("span", "final-badge", "final"));
    }
    card.appendChild(head);
    if (map.theme) {
      card.appendChild(el("p", "map-theme", map.theme.label));
    }
    if (map.annotation) {
      card.appendChild(el("p", "map-annotation", `generation failed: ${map.annotation}`));
    }

    const pool = el("ul", "pool");
    for (const block of map.pool) {
      pool.appendChild(this.renderBlock(map, block, refining));
    }
    card.appendChild(pool);

    const poolActions = el("div", "pool-actions");
    const aiAdd = el("button", undefined, "AI Add");
    aiAdd.className = "ai-add";
    aiAdd.disabled = !refining;
    aiAdd.addEventListener("click", () => void this.addAiBlock(map.id));
    const manualAdd = el("button", undefined, "Manual Add");
    manualAdd.className = "manual-add";
    manualAdd.disabled = !refining;
    manualAdd.addEventListener("click", () => {
      const text = window.prompt("New inspiration block");
      if (text) void this.addManualBlock(map.id, text);
    });
    poolActions.append(aiAdd, manualAdd);
    card.appendChild(poolActions);

    card.appendChild(this.renderPrototype(map, refining));
    return card;
  }

  private renderBlock(map: MapSnapshot, block: BlockSnapshot, refining: boolean): HTMLElement {
    const item = el("li", `block block-${block.enrichment_state}`);
    item.dataset.blockId = block.id;
    const text = el("span", "block-text", block.text);
    text.addEventListener("click", () => this.selectBlock(map.id, block.id));
    item.appendChild(text);
    item.appendChild(el("span", "block-state", block.enrichment_state));
    if (block.origin === "manual") {
      item.appendChild(el("span", "block-origin", "manual"));
    }

    const edit = el("button", "block-edit", "Edit");
    edit.disabled = !refining;
    edit.addEventListener("click", () => {
      const updated = window.prompt("Edit block", block.text);
      if (updated !== null && updated !== block.text) {
        void this.editBlock(map.id, block.id, updated);
      }
    });
    const remove = el("button", "block-delete", "Delete");
    remove.disabled = !refining;
    remove.addEventListener("click", () => void this.deleteBlock(map.id, block.id));
    item.append(edit, remove);
    return item;
  }

  private renderPrototype(map: MapSnapshot, refining: boolean): HTMLElement {
    const session = this.session!;
    const zone = el("div", "prototype-zone");
    if (map.prototypes.length === 0) {
      zone.appendChild(el("p", "no-prototype", "No prototype yet."));
      if (map.mode === "manual") {
        const complete = el("button", "complete-map", "Complete with AI");
        complete.disabled = !refining || map.pool.length === 0;
        complete.addEventListener("click", () => void this.completeMap(map.id));
        zone.appendChild(complete);
      }
    } else {
      const shown = this.versionView.get(map.id) ?? map.current_version;
      const prototype = map.prototypes.find((p) => p.version === shown) ?? map.prototypes[map.prototypes.length - 1];

      const selector = el("select", "version-selector");
      selector.dataset.mapId = map.id;
      for (const p of map.prototypes) {
        const option = el("option", undefined, `v${p.version}`);
        option.value = String(p.version);
        if (p.version === prototype.version) option.selected = true;
        selector.appendChild(option);
      }
      selector.addEventListener("change", () => this.selectVersion(map.id, Number(selector.value)));
      zone.appendChild(selector);

      const body = el("div", "prototype-body");
      body.append(
        el("p", "prototype-setup", prototype.setup),
        el("p", "prototype-punchline", prototype.punchline),
      );
      zone.appendChild(body);
    }

    const actions = el("div", "map-actions");
    const regenerate = el("button", "regenerate", "Regenerate Joke");
    regenerate.disabled = !refining || map.pool.length === 0;
    regenerate.addEventListener("click", () => void this.regenerate(map.id));
    const finalize = el("button", "finalize", "Finalize");
    finalize.disabled = !refining || map.draft_state !== "fresh";
    finalize.addEventListener("click", () => void this.finalize(map.id));
    const remove = el("button", "remove-map", "Remove map");
    remove.disabled =
      this.busy ||
      session.final_map_id === map.id ||
      (session.stage !== "validation_refinement" && session.stage !== "final_synthesis");
    remove.addEventListener("click", () => void this.removeMap(map.id));
    actions.append(regenerate, finalize, remove);
    zone.appendChild(actions);
    return zone;
  }

  private renderEchoPanel(map: MapSnapshot, block: BlockSnapshot): HTMLElement {
    const panel = el("aside", "echo-panel");
    panel.id = "echo-panel";
    const head = el("div", "echo-head");
    head.appendChild(el("h3", undefined, "Echo Assistant"));
    const close = el("button", "echo-close", "Close");
    close.addEventListener("click", () => this.closeEcho());
    head.appendChild(close);
    panel.appendChild(head);

    panel.appendChild(el("p", "echo-block-text", block.text));
    if (block.enrichment_state === "enriched" && block.echo) {
      panel.appendChild(el("p", "echo-text", block.echo.text));
      const list = el("ul", "evidence-list");
      for (const item of block.evidence) {
        const row = el("li", "evidence-item");
        const link = el("a", "evidence-link", item.title || item.url);
        link.href = item.url;
        link.target = "_blank";
        link.rel = "noreferrer noopener";
        row.appendChild(link);
        row.appendChild(el("span", "evidence-snippet", item.snippet));
        list.appendChild(row);
      }
      panel.appendChild(list);
    } else {
      panel.appendChild(el("p", "echo-pending", "awaiting material"));
    }
    void map;
    return panel;
  }
}
