/** HTML renderers for the three panes. Pure string-in/string-out so fixture
 * tests can assert on output without a browser.
 *
 * Invariant: every number and label shown comes verbatim from an API payload
 * field — values are interpolated with String(...) and never rounded,
 * rescaled, or re-derived. Visual casing (e.g. badge text "hard" displayed as
 * HARD) is done in CSS so the DOM text stays byte-identical to the payload.
 */

import type { AppState, ChatExchange } from "./types.js";
import { latestRetrievedIds, latestRetrievedScores } from "./state.js";

export function escapeHtml(raw: string): string {
  return raw
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

function rtlBadge(rtl: string | null): string {
  if (rtl === null) return `<span class="badge rtl-none" title="checkpoint has no response-type slot">no label</span>`;
  const cls = rtl === "PRTL" ? "rtl-prtl" : "rtl-crtl";
  return `<span class="badge ${cls}">${escapeHtml(rtl)}</span>`;
}

function groundingBadge(level: string): string {
  return `<span class="badge level level-${escapeHtml(level)}">${escapeHtml(level)}</span>`;
}

function exchangeHtml(exchange: ChatExchange, index: number): string {
  const { result } = exchange;
  const diag = result.diagnostics;
  const forced =
    exchange.forceRtl === null
      ? ""
      : `<span class="badge forced" title="label was forced for this turn">forced ${escapeHtml(exchange.forceRtl)}</span>`;
  return `
<div class="exchange" data-index="${index}">
  <div class="turn user"><span class="speaker">user</span><span class="text">${escapeHtml(exchange.userText)}</span></div>
  <div class="turn agent" data-index="${index}">
    <span class="speaker">agent</span>
    <span class="text">${escapeHtml(result.response)}</span>
    <span class="badges">${rtlBadge(result.rtl)}${groundingBadge(diag.grounding.level)}${forced}</span>
  </div>
</div>`;
}

export function renderChatPane(state: AppState): string {
  const transcript = state.exchanges.map(exchangeHtml).join("\n");
  const banner =
    state.error === null
      ? ""
      : `<div class="error-banner">backend error: ${escapeHtml(state.error)} <button id="retry" type="button">retry</button></div>`;
  const disabled = state.pending || state.sessionId === null ? "disabled" : "";
  const checked = (mode: string) => (state.forceMode === mode ? "checked" : "");
  return `
<section class="pane chat" aria-label="conversation">
  <h2>conversation</h2>
  <div class="transcript" id="transcript">${transcript || '<div class="empty">no turns yet</div>'}</div>
  ${banner}
  <form id="chat-form">
    <fieldset class="force" title="force the response-type label of the next message">
      <label><input type="radio" name="force" value="off" ${checked("off")}> model decides</label>
      <label><input type="radio" name="force" value="PRTL" ${checked("PRTL")}> force PRTL</label>
      <label><input type="radio" name="force" value="CRTL" ${checked("CRTL")}> force CRTL</label>
    </fieldset>
    <div class="send-row">
      <input id="message" type="text" placeholder="say something" autocomplete="off" ${disabled}>
      <button id="send" type="submit" ${disabled}>${state.pending ? "…" : "send"}</button>
    </div>
  </form>
</section>`;
}

export function renderTurnInfoPane(state: AppState): string {
  const who =
    state.sessionId === null
      ? '<div class="empty">no session</div>'
      : `<dl class="who">
  <dt>user</dt><dd>${escapeHtml(state.userId)}</dd>
  <dt>session</dt><dd>${escapeHtml(state.sessionId)}</dd>
  <dt>gender</dt><dd>${escapeHtml(state.gender || "unknown")}</dd>
  <dt>age band</dt><dd>${escapeHtml(state.ageBand || "unknown")}</dd>
</dl>`;
  const rows = state.exchanges
    .map((e, i) => {
      const d = e.result.diagnostics;
      return `<tr data-index="${i}">
  <td>${i + 1}</td>
  <td>${e.result.rtl === null ? "—" : escapeHtml(e.result.rtl)}</td>
  <td class="level level-${escapeHtml(d.grounding.level)}">${escapeHtml(d.grounding.level)}</td>
  <td class="num" title="${String(d.f1)}">${String(d.f1)}</td>
  <td class="num" title="${String(d.p_cover)}">${String(d.p_cover)}</td>
  <td class="num" title="${String(d.grounding.similarity)}">${String(d.grounding.similarity)}</td>
  <td>${d.grounding.matched_id === null ? "—" : escapeHtml(d.grounding.matched_id)}</td>
</tr>`;
    })
    .join("\n");
  const table =
    state.exchanges.length === 0
      ? '<div class="empty">no turns yet</div>'
      : `<div class="table-scroll"><table class="diag">
<thead><tr><th>#</th><th>rtl</th><th>grounding</th><th>f1</th><th>p_cover</th><th>similarity</th><th>matched</th></tr></thead>
<tbody>${rows}</tbody>
</table></div>`;
  return `
<section class="pane info" aria-label="turn diagnostics">
  <h2>turn diagnostics</h2>
  ${who}
  ${table}
</section>`;
}

export function renderPersonaPane(state: AppState): string {
  const retrieved = latestRetrievedIds(state);
  const scores = latestRetrievedScores(state);
  const items = state.personas
    .map((p) => {
      const classes = ["persona"];
      if (retrieved.has(p.id)) classes.push("retrieved");
      if (state.highlightId === p.id) classes.push("highlight");
      const score = scores.get(p.id);
      const marker =
        score === undefined
          ? ""
          : `<span class="badge score" title="retrieval score ${String(score)}">retrieved ${String(score)}</span>`;
      return `<li class="${classes.join(" ")}" data-id="${escapeHtml(p.id)}">
  <span class="pid">${escapeHtml(p.id)}</span>
  <span class="ptext">${escapeHtml(p.text)}</span>
  ${marker}
  <button class="delete" data-id="${escapeHtml(p.id)}" type="button" title="delete attribute">×</button>
</li>`;
    })
    .join("\n");
  return `
<section class="pane personas" aria-label="persona pool">
  <h2>persona pool</h2>
  <ul class="persona-list">${items || '<li class="empty">pool is empty</li>'}</ul>
  <form id="persona-form">
    <input id="persona-text" type="text" placeholder="new attribute, e.g. my hobby is chess" autocomplete="off">
    <button id="persona-add" type="submit">add</button>
  </form>
</section>`;
}

export function renderSessionForm(state: AppState): string {
  return `
<form id="session-form" class="session-form">
  <input id="user-id" type="text" placeholder="user id" value="${escapeHtml(state.userId)}" autocomplete="off">
  <input id="gender" type="text" placeholder="gender (optional)" value="${escapeHtml(state.gender)}" autocomplete="off">
  <input id="age-band" type="text" placeholder="age band (optional)" value="${escapeHtml(state.ageBand)}" autocomplete="off">
  <button id="start" type="submit">start session</button>
</form>`;
}

export function renderApp(state: AppState): string {
  return `
<header>
  <h1>wwh sanity console</h1>
  ${renderSessionForm(state)}
</header>
<main class="panes">
  ${renderChatPane(state)}
  ${renderTurnInfoPane(state)}
  ${renderPersonaPane(state)}
</main>`;
}
