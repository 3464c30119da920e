// End-to-end: the full bundled walkthrough driven through the DOM against a
// real fixture-backed service process. After every step the rendered state
// must equal the service snapshot.

import { spawn, type ChildProcess } from "node:child_process";
import { resolve } from "node:path";
import { afterAll, beforeAll, describe, expect, it, vi } from "vitest";
import { ApiClient } from "../src/api.js";
import { CanvasApp } from "../src/app.js";
import type { SessionSnapshot } from "../src/types.js";

const PORT = 8791;
const BASE = `http://127.0.0.1:${PORT}`;
// vitest runs with cwd = frontend/; the engine repo is one level up
const REPO_ROOT = resolve(process.cwd(), "..");
const PYTHON = process.env.JOKEASY_PYTHON ?? "python3";

let server: ChildProcess;

async function waitForHealth(timeoutMs = 20_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      const response = await fetch(`${BASE}/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((resolve) => setTimeout(resolve, 150));
  }
}

beforeAll(async () => {
  server = spawn(
    PYTHON,
    [
      "-m",
      "jokeasy.cli",
      "serve",
      "--port",
      String(PORT),
      "--fixture",
      "src/jokeasy/fixtures/c2.fixture",
    ],
    { cwd: REPO_ROOT, stdio: "ignore" },
  );
  await waitForHealth();
});

afterAll(() => {
  server?.kill();
});

function makeApp(): CanvasApp {
  document.body.innerHTML = '<div id="app"></div>';
  return new CanvasApp(document.getElementById("app")!, new ApiClient(BASE, 25));
}

function click(selector: string, scope: ParentNode = document): void {
  const node = scope.querySelector<HTMLElement>(selector);
  if (!node) throw new Error(`nothing to click for ${selector}`);
  node.click();
}

function mapCard(index: number): HTMLElement {
  const cards = document.querySelectorAll<HTMLElement>(".map-card");
  if (index >= cards.length) throw new Error(`no map card ${index}`);
  return cards[index];
}

/** Rendered state must equal the latest service snapshot. */
async function assertRenderedMatchesService(app: CanvasApp): Promise<SessionSnapshot> {
  const snap = await app.api.getSession(app.session!.id);
  const cards = document.querySelectorAll<HTMLElement>(".map-card");
  expect(cards.length).toBe(snap.maps.length);
  snap.maps.forEach((m, i) => {
    expect(cards[i].dataset.mapId).toBe(m.id);
    expect(cards[i].querySelectorAll(".block").length).toBe(m.pool.length);
    const badge = cards[i].querySelector<HTMLElement>(".draft-badge")!;
    expect(badge.dataset.draftState).toBe(m.draft_state);
    const selector = cards[i].querySelector<HTMLSelectElement>(".version-selector");
    const versions = selector ? selector.options.length : 0;
    expect(versions).toBe(m.prototypes.length);
  });
  const stageBadge = document.querySelector<HTMLElement>(".stage-badge");
  expect(stageBadge?.dataset.stage).toBe(snap.stage);
  return snap;
}

describe("bundled walkthrough through the browser", () => {
  it("reaches final synthesis with versions v1-v4 on the selected map", async () => {
    const app = makeApp();
    await app.init();

    // topic ideation: enter topic + supplements, create the session
    (document.getElementById("topic-input") as HTMLInputElement).value = "Troubles of Adult Life";
    (document.getElementById("supplements-input") as HTMLTextAreaElement).value =
      "exaggerated expressions\nworkplace burnout";
    click("#create-session");
    await app.lastAction;
    expect(app.session).not.toBeNull();
    expect(document.querySelector<HTMLElement>(".stage-badge")?.dataset.stage).toBe("topic_ideation");

    // generate the summary, review it
    click("#generate-summary");
    await app.lastAction;
    expect(document.getElementById("summary-box")!.textContent).toContain("workplace burnout");

    // advance: confirm + initial generation, three maps appear
    click("#generate-jokes");
    await app.lastAction;
    let snap = await assertRenderedMatchesService(app);
    expect(snap.stage).toBe("validation_refinement");
    expect(snap.maps.length).toBe(3);

    // add a fourth AI-generated map
    click("#add-map-ai");
    await app.lastAction;
    snap = await assertRenderedMatchesService(app);
    expect(snap.maps.length).toBe(4);

    // refine map 3: drop the weak second block
    click(".block:nth-of-type(2) .block-delete", mapCard(2));
    await app.lastAction;
    snap = await assertRenderedMatchesService(app);
    expect(snap.maps[2].pool.length).toBe(3);
    expect(snap.maps[2].draft_state).toBe("stale");

    // manual block: the writer's own idea, enriched by the agent
    vi.stubGlobal("prompt", () => "the subtle dynamics between colleagues");
    click(".manual-add", mapCard(2));
    await app.lastAction;
    vi.unstubAllGlobals();
    snap = await assertRenderedMatchesService(app);
    const manual = snap.maps[2].pool[snap.maps[2].pool.length - 1];
    expect(manual.origin).toBe("manual");
    expect(manual.enrichment_state).toBe("enriched");

    // open the echo assistant on the manual block
    const blocks = mapCard(2).querySelectorAll<HTMLElement>(".block-text");
    blocks[blocks.length - 1].click();
    const panel = document.getElementById("echo-panel")!;
    expect(panel.querySelector(".echo-text")!.textContent).toContain("colleagues");
    expect(panel.querySelectorAll(".evidence-link").length).toBeGreaterThan(0);
    click(".echo-close", panel);

    // regenerate three times, reviewing each version
    for (const expected of [2, 3, 4]) {
      click(".regenerate", mapCard(2));
      await app.lastAction;
      snap = await assertRenderedMatchesService(app);
      expect(snap.maps[2].current_version).toBe(expected);
    }
    const selector = mapCard(2).querySelector<HTMLSelectElement>(".version-selector")!;
    expect([...selector.options].map((o) => o.textContent)).toEqual(["v1", "v2", "v3", "v4"]);

    // finalize the selected map
    click(".finalize", mapCard(2));
    await app.lastAction;
    snap = await assertRenderedMatchesService(app);
    expect(snap.stage).toBe("final_synthesis");
    expect(snap.final_map_id).toBe(snap.maps[2].id);
    expect(document.querySelector(".final-badge")).not.toBeNull();

    // export carries the final punchline
    const exported = await app.api.exportText(app.session!.id);
    expect(exported).toContain("Self-Rescue Under Work Pressure");
    expect(exported).toContain("## Punchline");
  });
});
