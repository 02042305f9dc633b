// Shapes of the review service JSON payloads. Every field rendered in the
// UI comes straight from these; the client never invents content.

export interface QAPairPayload {
  qa_id: string;
  question: string;
  answer: string;
  scope: string;
  modality: string;
  hops: number;
  gt_keypoints: string[];
  // [doc_id, source_id, "text" | "chart"]
  gt_sources: [string, string, string][];
  review_state: string;
  rejection_reason: string | null;
}

export interface ChunkPayload {
  chunk_id: string;
  doc_id: string;
  text: string;
}

export interface ChartPayload {
  chart_id: string;
  doc_id: string;
  caption: string;
  values_text: string;
  image_url: string;
}

// One review card: the candidate pair plus the source materials its
// ground-truth keypoints came from.
export interface CardPayload {
  pair: QAPairPayload;
  chunks: ChunkPayload[];
  charts: ChartPayload[];
}

export interface AssignmentsResponse {
  reviewer: string;
  assignments: CardPayload[];
}

export interface StatsResponse {
  progress: { open: number; submitted: number; total: number };
  kappa: number | null;
  rated_items: number;
  reject_reasons: Record<string, number>;
  dataset: { total: number; pending: number; accepted: number; rejected: number };
}

export type Verdict = 'accept' | 'reject';

// Must stay in sync with the server's accepted vocabulary; the 1/2/3
// shortcut keys index into this list.
export const REJECTION_REASONS = ['ocr_error', 'redundant', 'other'] as const;
export type RejectionReason = (typeof REJECTION_REASONS)[number];

export interface DecisionBody {
  qa_id: string;
  reviewer_id: string;
  verdict: Verdict;
  reason?: RejectionReason;
  note?: string;
}

export interface SubmitAck {
  status: string;
  qa_id: string;
  reviewer_id: string;
  timestamp: number;
}
