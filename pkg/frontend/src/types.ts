// Wire types mirroring the service's published JSON schema (GET /schema).

export type Speaker = 'seeker' | 'recommender';

export interface TurnIn {
  speaker: Speaker;
  text: string;
}

export interface ChatRequest {
  history: TurnIn[];
  top_k: number;
  decode?: 'greedy' | 'beam';
}

export interface Recommendation {
  entity_id: string;
  name: string;
  year: number | null;
  score: number;
}

export interface ModelInfo {
  checkpoint: string;
  profile: string;
}

export interface ChatResponse {
  raw_response: string;
  filled_response: string;
  recommendations: Recommendation[];
  model_info: ModelInfo;
}

export interface HealthStatus {
  model_loaded: boolean;
  checkpoint: string | null;
  uptime_seconds: number;
}

// One rendered transcript entry. Assistant turns keep both response forms so
// the raw/filled toggle is a pure view switch.
export interface Message {
  speaker: Speaker;
  text: string;
  raw?: string;
  timestamp: number;
}
