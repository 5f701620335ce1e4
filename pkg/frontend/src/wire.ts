/**
 * Wire types for the mapping service's /v1 API.
 *
 * These mirror the service's JSON payloads field for field; the UI renders
 * them as received and never derives or reorders server-computed values.
 */

export type ConceptRef = {
  code: string;
  omop_id: number;
  role: string;
};

export type ReviewItem = {
  review_id: string;
  label: string;
  concepts: ConceptRef[];
  judgement: string;
  review_status: string;
  reviewer: string | null;
  created_at: string;
  decided_at: string | null;
};

export type PendingPage = {
  items: ReviewItem[];
  page: number;
  page_size: number;
  total: number;
};

export type Decision = "approve" | "reject" | "modify";

export type DecisionRequest = {
  decision: Decision;
  reviewer: string;
  concepts?: ConceptRef[];
};

export type SearchResult = {
  omop_id: number;
  code: string;
  name: string;
  vocabulary: string;
  semantic_type: string;
  matched_surface: string;
  fused_score: number;
  dense_score?: number;
  sparse_score?: number;
};

export type SearchResponse = {
  query: string;
  k: number;
  results: SearchResult[];
};

export type Health = {
  status: string;
  concepts: number;
  surface_forms: number;
  pending_reviews: number;
};

export type JobEntry = {
  name?: string;
  label: string;
  data_type?: string;
  scale?: string;
  unit?: string;
  formula?: string;
  visit?: string;
  categories?: string[];
};

export type JobOptions = {
  k?: number;
  tau?: number;
  n?: number;
  t?: number;
  tau_rel?: number;
  m_examples?: number;
  parallelism?: number;
  trace?: boolean;
};

export type SubmittedJob = {
  job_id: string;
  state: string;
};

export type ComponentOutcome = {
  status: string;
  omop_id?: number;
  code?: string;
  vocabulary?: string;
  confidence?: number;
};

export type MapRecord = {
  name: string;
  label: string;
  decomposition: Record<string, unknown>;
  component_results: Record<string, ComponentOutcome>;
};

export type JobStatus = {
  job_id: string;
  state: string;
  submitted_at: string;
  progress: { completed: number; total: number };
  error?: string;
  results?: MapRecord[];
};

export type ErrorEnvelope = {
  error: { code: string; message: string };
};
