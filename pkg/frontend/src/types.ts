// Wire types mirroring the service's session serialization.

export type Stage =
  | "topic_ideation"
  | "inspiration_generation"
  | "validation_refinement"
  | "final_synthesis";

export interface EvidenceItem {
  url: string;
  title: string;
  snippet: string;
  retrieved_at: string;
}

export interface EchoSummary {
  block_id: string;
  text: string;
  source_generation: number;
}

export interface BlockSnapshot {
  id: string;
  text: string;
  origin: "ai" | "manual";
  evidence: EvidenceItem[];
  echo: EchoSummary | null;
  enrichment_state: "pending" | "enriched" | "stale";
  generation: number;
  annotation: string | null;
}

export interface PrototypeSnapshot {
  version: number;
  title: string;
  setup: string;
  punchline: string;
  informed_by: string[];
  created_at: string;
}

export interface ThemeSnapshot {
  id: string;
  label: string;
  rationale: string;
}

export interface MapSnapshot {
  id: string;
  mode: "ai_generated" | "manual";
  theme: ThemeSnapshot | null;
  pool: BlockSnapshot[];
  prototypes: PrototypeSnapshot[];
  current_version: number;
  draft_state: "fresh" | "stale" | "empty";
  annotation: string | null;
}

export interface SessionSnapshot {
  id: string;
  brief: {
    topic: string;
    supplements: string[];
    audience_hint: string | null;
    content_language: string | null;
  };
  stage: Stage;
  summary: {
    theme: string;
    audience: string;
    style: string;
    techniques: string[];
    raw_text: string;
    confirmed: boolean;
  } | null;
  maps: MapSnapshot[];
  final_map_id: string | null;
}

export interface Job {
  job_id: string;
  kind: "enrichment" | "generation" | "regeneration";
  state: "running" | "done" | "failed" | "superseded";
  session_id: string;
  command_id: string | null;
  result: Record<string, string>;
  error: { code: string; message: string } | null;
}

export interface CommandResponse {
  job: Job;
  session: SessionSnapshot;
}

export interface EchoView {
  map_id: string;
  block_id: string;
  text: string;
  echo: string | null;
  enrichment_state: string;
  evidence: EvidenceItem[];
}
