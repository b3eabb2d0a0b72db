/** DOM bootstrap: the only module that touches document/fetch. It keeps one
 * AppState, re-renders the whole shell after every completed action, and
 * delegates events from the root node so listeners survive re-renders.
 */

import { ApiError, Client, fetchTransport } from "./api.js";
import { renderApp } from "./render.js";
import {
  initialState,
  type AppState,
  type ForceMode,
} from "./types.js";
import {
  withError,
  withForceMode,
  withHighlightFromTurn,
  withPersonas,
  withSession,
  withTurn,
} from "./state.js";

const client = new Client(fetchTransport());
let state: AppState = initialState();
/** Last message attempt, kept so the error banner's retry can re-send it. */
let lastAttempt: { text: string; force: ForceMode } | null = null;

function root(): HTMLElement {
  const el = document.getElementById("root");
  if (!el) throw new Error("missing #root element");
  return el;
}

function redraw(): void {
  root().innerHTML = renderApp(state);
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.detail;
  return err instanceof Error ? err.message : String(err);
}

async function refreshPersonas(): Promise<void> {
  if (!state.userId) return;
  try {
    const list = await client.listPersonas(state.userId);
    state = withPersonas(state, list.personas);
  } catch (err) {
    // a brand-new user has no pool yet; an empty list is the truthful view
    if (err instanceof ApiError && err.status === 404) {
      state = withPersonas(state, []);
    } else {
      state = withError(state, describe(err));
    }
  }
}

async function startSession(userId: string, gender: string, ageBand: string): Promise<void> {
  try {
    const created = await client.createSession(userId, gender || undefined, ageBand || undefined);
    state = withSession(state, created.session_id, created.user_id, gender, ageBand);
    await refreshPersonas();
  } catch (err) {
    state = withError(state, describe(err));
  }
  redraw();
}

async function sendMessage(text: string, force: ForceMode): Promise<void> {
  if (!state.sessionId || state.pending) return;
  lastAttempt = { text, force };
  state = { ...state, pending: true, error: null };
  redraw();
  try {
    const result = await client.sendMessage(state.sessionId, text, force);
    state = withTurn(state, text, force === "off" ? null : force, result);
    lastAttempt = null;
    await refreshPersonas(); // retrieval markers come from the new turn
  } catch (err) {
    state = withError(state, describe(err));
  }
  redraw();
}

async function addPersona(text: string): Promise<void> {
  if (!state.userId) {
    state = withError(state, "start a session first");
    redraw();
    return;
  }
  try {
    await client.addPersona(state.userId, text);
    await refreshPersonas();
  } catch (err) {
    state = withError(state, describe(err));
  }
  redraw();
}

async function deletePersona(attrId: string): Promise<void> {
  try {
    await client.deletePersona(state.userId, attrId);
    await refreshPersonas();
  } catch (err) {
    state = withError(state, describe(err));
  }
  redraw();
}

function inputValue(id: string): string {
  const el = document.getElementById(id) as HTMLInputElement | null;
  return el ? el.value.trim() : "";
}

function wire(): void {
  const host = root();

  host.addEventListener("submit", (ev) => {
    const form = ev.target as HTMLElement;
    ev.preventDefault();
    if (form.id === "session-form") {
      const user = inputValue("user-id");
      if (user) void startSession(user, inputValue("gender"), inputValue("age-band"));
    } else if (form.id === "chat-form") {
      const text = inputValue("message");
      if (text) void sendMessage(text, state.forceMode);
    } else if (form.id === "persona-form") {
      const text = inputValue("persona-text");
      if (text) void addPersona(text);
    }
  });

  host.addEventListener("change", (ev) => {
    const el = ev.target as HTMLInputElement;
    if (el.name === "force") state = withForceMode(state, el.value as ForceMode);
  });

  host.addEventListener("click", (ev) => {
    const el = ev.target as HTMLElement;
    if (el.id === "retry" && lastAttempt) {
      void sendMessage(lastAttempt.text, lastAttempt.force);
      return;
    }
    const del = el.closest("button.delete") as HTMLElement | null;
    if (del && del.dataset.id) {
      void deletePersona(del.dataset.id);
      return;
    }
    const turn = el.closest(".turn.agent") as HTMLElement | null;
    if (turn && turn.dataset.index !== undefined) {
      state = withHighlightFromTurn(state, Number(turn.dataset.index));
      redraw();
    }
  });

  redraw();
}

wire();
