/** Thin typed client for the /v1 API.
 *
 * All transport goes through one injectable `Transport` function so tests can
 * replay recorded fixtures without a network or a DOM.
 */

import type {
  HealthPayload,
  PersonaAttribute,
  PersonaList,
  SessionCreated,
  SessionLog,
  TurnPayload,
} from "./types.js";

export interface Transport {
  (method: string, path: string, body?: unknown): Promise<unknown>;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
  }
}

/** Browser transport; the only place the real fetch API is touched. */
export function fetchTransport(base = ""): Transport {
  return async (method, path, body) => {
    const res = await fetch(base + path, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json().catch(() => ({}));
    if (!res.ok) {
      const detail =
        payload && typeof payload === "object" && "detail" in payload
          ? String((payload as { detail: unknown }).detail)
          : res.statusText;
      throw new ApiError(res.status, detail);
    }
    return payload;
  };
}

/** Body for POST /v1/sessions. Demographics ride along only when given. */
export function sessionBody(userId: string, gender?: string, ageBand?: string) {
  const body: { user_id: string; gender?: string; age_band?: string } = {
    user_id: userId,
  };
  if (gender) body.gender = gender;
  if (ageBand) body.age_band = ageBand;
  return body;
}

/** Body for POST /v1/sessions/{id}/messages.
 *
 * `forceMode` "off" omits force_rtl entirely so the model decides; either
 * label is passed through verbatim for the backend to honor.
 */
export function messageBody(text: string, forceMode: string) {
  const body: { text: string; force_rtl?: string } = { text };
  if (forceMode !== "off") body.force_rtl = forceMode;
  return body;
}

export class Client {
  constructor(private readonly transport: Transport) {}

  health(): Promise<HealthPayload> {
    return this.transport("GET", "/v1/healthz") as Promise<HealthPayload>;
  }

  createSession(userId: string, gender?: string, ageBand?: string): Promise<SessionCreated> {
    return this.transport(
      "POST",
      "/v1/sessions",
      sessionBody(userId, gender, ageBand),
    ) as Promise<SessionCreated>;
  }

  sendMessage(sessionId: string, text: string, forceMode: string): Promise<TurnPayload> {
    return this.transport(
      "POST",
      `/v1/sessions/${encodeURIComponent(sessionId)}/messages`,
      messageBody(text, forceMode),
    ) as Promise<TurnPayload>;
  }

  sessionLog(sessionId: string): Promise<SessionLog> {
    return this.transport(
      "GET",
      `/v1/sessions/${encodeURIComponent(sessionId)}/log`,
    ) as Promise<SessionLog>;
  }

  listPersonas(userId: string): Promise<PersonaList> {
    return this.transport(
      "GET",
      `/v1/users/${encodeURIComponent(userId)}/personas`,
    ) as Promise<PersonaList>;
  }

  addPersona(userId: string, text: string): Promise<PersonaAttribute> {
    return this.transport("POST", `/v1/users/${encodeURIComponent(userId)}/personas`, {
      text,
    }) as Promise<PersonaAttribute>;
  }

  deletePersona(userId: string, attrId: string): Promise<{ deleted: string }> {
    return this.transport(
      "DELETE",
      `/v1/users/${encodeURIComponent(userId)}/personas/${encodeURIComponent(attrId)}`,
    ) as Promise<{ deleted: string }>;
  }
}
