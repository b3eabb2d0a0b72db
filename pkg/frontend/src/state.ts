/** Pure state transitions. The DOM layer calls these and re-renders; tests
 * drive them directly with recorded payloads.
 */

import type {
  AppState,
  ChatExchange,
  ForceMode,
  PersonaAttribute,
  TurnPayload,
} from "./types.js";

export function withSession(
  state: AppState,
  sessionId: string,
  userId: string,
  gender: string,
  ageBand: string,
): AppState {
  return {
    ...state,
    sessionId,
    userId,
    gender,
    ageBand,
    exchanges: [],
    highlightId: null,
    error: null,
  };
}

/** A completed message round: append the exchange exactly as the API told it. */
export function withTurn(
  state: AppState,
  userText: string,
  forceRtl: string | null,
  result: TurnPayload,
): AppState {
  const exchange: ChatExchange = { userText, forceRtl, result };
  return { ...state, exchanges: [...state.exchanges, exchange], pending: false, error: null };
}

/** A failed message round: surface the error, leave the transcript untouched. */
export function withError(state: AppState, message: string): AppState {
  return { ...state, pending: false, error: message };
}

export function withPersonas(state: AppState, personas: PersonaAttribute[]): AppState {
  // a highlight pointing at a removed attribute is stale; clear it
  const stillThere = personas.some((p) => p.id === state.highlightId);
  return {
    ...state,
    personas,
    highlightId: stillThere ? state.highlightId : null,
    error: null,
  };
}

export function withForceMode(state: AppState, mode: ForceMode): AppState {
  return { ...state, forceMode: mode };
}

/** Clicking a personalized turn highlights its matched persona attribute. */
export function withHighlightFromTurn(state: AppState, exchangeIndex: number): AppState {
  const exchange = state.exchanges[exchangeIndex];
  if (!exchange) return state;
  const matched = exchange.result.diagnostics.grounding.matched_id;
  return { ...state, highlightId: matched };
}

/** Retrieved attribute ids of the latest turn, for persona-pane markers. */
export function latestRetrievedIds(state: AppState): Set<string> {
  const last = state.exchanges[state.exchanges.length - 1];
  if (!last) return new Set();
  return new Set(last.result.retrieved.map((r) => r.id));
}

/** Scores keyed by attribute id for the latest turn's retrieval. */
export function latestRetrievedScores(state: AppState): Map<string, number> {
  const last = state.exchanges[state.exchanges.length - 1];
  const scores = new Map<string, number>();
  if (last) for (const r of last.result.retrieved) scores.set(r.id, r.score);
  return scores;
}
