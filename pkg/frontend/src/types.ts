/** Wire types for the /v1 chat service, mirrored field-for-field.
 *
 * Every value the UI displays comes from one of these payloads verbatim;
 * nothing here is derived or recomputed client-side.
 */

export interface HealthPayload {
  status: string;
  vocab_size: number;
  rtl_mode: boolean;
  users: number;
  sessions: number;
}

export interface SessionCreated {
  session_id: string;
  user_id: string;
}

export interface RetrievedAttribute {
  id: string;
  text: string;
  score: number;
}

export interface GroundingInfo {
  level: string; // "hard" | "soft" | "none"
  similarity: number;
  matched_id: string | null;
}

export interface Diagnostics {
  f1: number;
  p_cover: number;
  grounding: GroundingInfo;
}

export interface TurnPayload {
  session_id: string;
  response: string;
  rtl: string | null;
  retrieved: RetrievedAttribute[];
  diagnostics: Diagnostics;
}

export interface LogRecord {
  record: string;
  session_id: string;
  user_text: string;
  force_rtl: string | null;
  result: TurnPayload;
}

export interface SessionLog {
  session_id: string;
  user_id: string;
  turns: LogRecord[];
}

export interface PersonaAttribute {
  id: string;
  text: string;
}

export interface PersonaList {
  user_id: string;
  personas: PersonaAttribute[];
}

/** One rendered row of the transcript: a user turn and the agent's reply. */
export interface ChatExchange {
  userText: string;
  forceRtl: string | null;
  result: TurnPayload;
}

/** Force-RTL toggle positions. "off" lets the model decide; the labels are
 * passed to the API exactly as written here. */
export type ForceMode = "off" | "PRTL" | "CRTL";

export interface AppState {
  userId: string;
  sessionId: string | null;
  gender: string;
  ageBand: string;
  exchanges: ChatExchange[];
  personas: PersonaAttribute[];
  forceMode: ForceMode;
  /** Persona id highlighted from a clicked personalized turn. */
  highlightId: string | null;
  /** True while a message is in flight; the send control is disabled. */
  pending: boolean;
  /** Last backend error, shown inline; null when the last call succeeded. */
  error: string | null;
}

export function initialState(): AppState {
  return {
    userId: "",
    sessionId: null,
    gender: "",
    ageBand: "",
    exchanges: [],
    personas: [],
    forceMode: "off",
    highlightId: null,
    pending: false,
    error: null,
  };
}
