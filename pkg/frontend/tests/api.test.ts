// Unit tests for the API client against a mocked fetch.

import { afterEach, describe, expect, it, vi } from "vitest";
import { ApiClient, ApiError } from "../src/api.js";
import type { Job } from "../src/types.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}

afterEach(() => vi.unstubAllGlobals());

describe("ApiClient", () => {
  it("posts session creation with the expected body", async () => {
    const fetchMock = vi.fn().mockResolvedValue(jsonResponse({ session: { id: "s-1" } }, 201));
    vi.stubGlobal("fetch", fetchMock);
    const client = new ApiClient("http://x");
    await client.createSession("Topic", ["a", "b"]);
    expect(fetchMock).toHaveBeenCalledWith(
      "http://x/sessions",
      expect.objectContaining({ method: "POST" }),
    );
    const body = JSON.parse(fetchMock.mock.calls[0][1].body);
    expect(body).toEqual({ topic: "Topic", supplements: ["a", "b"], audience_hint: null });
  });

  it("surfaces service error codes", async () => {
    vi.stubGlobal(
      "fetch",
      vi.fn().mockResolvedValue(
        jsonResponse({ error: { code: "EmptyTopic", message: "topic is blank" } }, 400),
      ),
    );
    const client = new ApiClient("http://x");
    await expect(client.createSession("", [])).rejects.toMatchObject({
      code: "EmptyTopic",
      status: 400,
    });
  });

  it("polls a running job to completion", async () => {
    const running: Job = {
      job_id: "j1",
      kind: "generation",
      state: "running",
      session_id: "s-1",
      command_id: null,
      result: {},
      error: null,
    };
    const done = { ...running, state: "done" as const };
    const fetchMock = vi
      .fn()
      .mockResolvedValueOnce(jsonResponse({ job: running }))
      .mockResolvedValueOnce(jsonResponse({ job: done }));
    vi.stubGlobal("fetch", fetchMock);
    const client = new ApiClient("http://x", 1);
    const finished = await client.waitForJob(running);
    expect(finished.state).toBe("done");
    expect(fetchMock).toHaveBeenCalledTimes(2);
  });

  it("throws the job error code when a job fails", async () => {
    const failed: Job = {
      job_id: "j2",
      kind: "generation",
      state: "failed",
      session_id: "s-1",
      command_id: null,
      result: {},
      error: { code: "StructuredOutputFailed", message: "no valid output" },
    };
    const client = new ApiClient("http://x", 1);
    await expect(client.waitForJob(failed)).rejects.toMatchObject({
      code: "StructuredOutputFailed",
    });
  });

  it("keeps superseded as a terminal, non-error state", async () => {
    const superseded: Job = {
      job_id: "j3",
      kind: "enrichment",
      state: "superseded",
      session_id: "s-1",
      command_id: "cmd-9",
      result: { block_id: "blk-1" },
      error: null,
    };
    const client = new ApiClient("http://x", 1);
    const result = await client.waitForJob(superseded);
    expect(result.state).toBe("superseded");
  });

  it("ApiError is a real Error", () => {
    const e = new ApiError("X", "boom", 500);
    expect(e).toBeInstanceOf(Error);
    expect(e.code).toBe("X");
  });
});
