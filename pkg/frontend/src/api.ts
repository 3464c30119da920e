// Typed client for the co-writing service. Every mutation returns {job, session};
// callers poll the job to completion before re-reading the snapshot.

import type { CommandResponse, EchoView, Job, SessionSnapshot } from "./types.js";

export class ApiError extends Error {
  constructor(
    public code: string,
    message: string,
    public status: number,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    public base: string,
    public pollMs = 500,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await fetch(`${this.base}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    if (!response.ok) {
      let code = `HTTP${response.status}`;
      let message = text;
      try {
        const parsed = JSON.parse(text);
        if (parsed.error) {
          code = parsed.error.code;
          message = parsed.error.message;
        }
      } catch {
        // non-JSON error body; keep raw text
      }
      throw new ApiError(code, message, response.status);
    }
    return (text ? JSON.parse(text) : {}) as T;
  }

  createSession(topic: string, supplements: string[], audienceHint?: string): Promise<{ session: SessionSnapshot }> {
    return this.request("POST", "/sessions", {
      topic,
      supplements,
      audience_hint: audienceHint ?? null,
    });
  }

  async getSession(id: string): Promise<SessionSnapshot> {
    const body = await this.request<{ session: SessionSnapshot }>("GET", `/sessions/${id}`);
    return body.session;
  }

  getJob(jobId: string): Promise<{ job: Job }> {
    return this.request("GET", `/jobs/${jobId}`);
  }

  summarize(id: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/summary`);
  }

  resummarize(id: string, topic: string, supplements: string[]): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/summary/regenerate`, { topic, supplements });
  }

  confirmSummary(id: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/summary/confirm`);
  }

  generate(id: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/generate`);
  }

  addMap(id: string, mode: "ai_generated" | "manual"): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/maps`, { mode });
  }

  removeMap(id: string, mapId: string): Promise<CommandResponse> {
    return this.request("DELETE", `/sessions/${id}/maps/${mapId}`);
  }

  addManualBlock(id: string, mapId: string, text: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/maps/${mapId}/blocks`, { text });
  }

  addAiBlock(id: string, mapId: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/maps/${mapId}/blocks/ai`);
  }

  editBlock(id: string, mapId: string, blockId: string, text: string): Promise<CommandResponse> {
    return this.request("PATCH", `/sessions/${id}/maps/${mapId}/blocks/${blockId}`, { text });
  }

  deleteBlock(id: string, mapId: string, blockId: string): Promise<CommandResponse> {
    return this.request("DELETE", `/sessions/${id}/maps/${mapId}/blocks/${blockId}`);
  }

  echoView(id: string, mapId: string, blockId: string): Promise<EchoView> {
    return this.request("GET", `/sessions/${id}/maps/${mapId}/blocks/${blockId}/echo`);
  }

  regenerate(id: string, mapId: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/maps/${mapId}/regenerate`);
  }

  completeMap(id: string, mapId: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/maps/${mapId}/complete`);
  }

  finalize(id: string, mapId: string): Promise<CommandResponse> {
    return this.request("POST", `/sessions/${id}/finalize`, { map_id: mapId });
  }

  async exportText(id: string): Promise<string> {
    const response = await fetch(`${this.base}/sessions/${id}/export`);
    if (!response.ok) {
      throw new ApiError(`HTTP${response.status}`, await response.text(), response.status);
    }
    return response.text();
  }

  /** Poll a job until it leaves the running state; throws on failure. */
  async waitForJob(job: Job, timeoutMs = 60_000): Promise<Job> {
    const deadline = Date.now() + timeoutMs;
    let current = job;
    while (current.state === "running") {
      if (Date.now() > deadline) {
        throw new ApiError("JobTimeout", `job ${job.job_id} still running`, 0);
      }
      await new Promise((resolve) => setTimeout(resolve, this.pollMs));
      current = (await this.getJob(current.job_id)).job;
    }
    if (current.state === "failed" && current.error) {
      throw new ApiError(current.error.code, current.error.message, 0);
    }
    return current;
  }
}
