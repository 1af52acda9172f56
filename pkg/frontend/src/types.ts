export interface RankedItem {
  frame_id: number;
  score: number;
  rank: number;
}

export interface Status {
  phase: string; // idle | initial-detection | training | ready | fine-tuning | error
  progress: number;
  round: number;
  job_id: number;
  iteration?: number;
  epoch?: number;
  error?: string;
}

export interface FramePayload {
  frame_id: number;
  mode: "image" | "vector";
  pgm_base64?: string;
  values?: number[];
}

export interface SaliencyPayload {
  frame_id: number;
  pgm_base64: string;
  grid: number[][];
}

export interface HistoryRound {
  round: number;
  auc?: number;
  top_changed?: number;
}

export interface History {
  metric: "auc" | "ranking-change";
  rounds: HistoryRound[];
}

export type Tag = "anomaly" | "normal";
