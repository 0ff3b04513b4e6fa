// Pure HTML renderers: model in, markup string out. Keeping these free of
// DOM access makes every view testable against raw payloads.

import { DashboardModel } from "./model.js";

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function formatAge(seconds: number): string {
  if (!Number.isFinite(seconds) || seconds < 0) {
    return "-";
  }
  if (seconds < 60) {
    return `${Math.floor(seconds)}s`;
  }
  if (seconds < 3600) {
    return `${Math.floor(seconds / 60)}m ${Math.floor(seconds % 60)}s`;
  }
  return `${Math.floor(seconds / 3600)}h ${Math.floor((seconds % 3600) / 60)}m`;
}

export function formatBytes(count: number): string {
  if (!Number.isFinite(count) || count < 0) {
    return "-";
  }
  if (count < 1024) {
    return `${Math.round(count)} B`;
  }
  if (count < 1024 * 1024) {
    return `${(count / 1024).toFixed(1)} KiB`;
  }
  return `${(count / (1024 * 1024)).toFixed(2)} MiB`;
}

export function renderStatus(model: DashboardModel): string {
  const m = model.latest;
  const stale = model.stale
    ? `<div class="banner stale">stale: last poll failed` +
      (model.lastError ? ` (${escapeHtml(model.lastError)})` : "") +
      `; showing last good data</div>`
    : "";
  if (!m) {
    return `${stale}<div class="counters">waiting for first poll…</div>`;
  }
  return (
    stale +
    `<div class="counters">` +
    counter("live sessions", String(m.liveSessions)) +
    counter("live suspensions", String(m.liveSuspensions)) +
    counter("suspension bytes", formatBytes(m.suspensionBytesEstimate)) +
    counter("deliveries", String(m.deliveriesTotal)) +
    counter("gone embeds", String(m.goneEmbedTotal)) +
    `</div>`
  );
}

function counter(label: string, value: string): string {
  return `<span class="counter"><b>${escapeHtml(value)}</b> ${escapeHtml(label)}</span>`;
}

export function renderTable(model: DashboardModel): string {
  if (model.sessions.length === 0) {
    return `<p class="empty">no live sessions</p>`;
  }
  const rows = model.sessions
    .map((row) => {
      const busy = model.pending.has(row.id);
      const controls = busy
        ? `<em>working…</em>`
        : `<button data-action="expire" data-id="${escapeHtml(row.id)}">expire</button> ` +
          `<button data-action="reset" data-id="${escapeHtml(row.id)}">reset</button>`;
      return (
        `<tr data-row="${escapeHtml(row.id)}">` +
        `<td><code>${escapeHtml(row.participant)}</code></td>` +
        `<td class="path">${escapeHtml(row.path)}</td>` +
        `<td>${formatAge(row.ageSeconds)}</td>` +
        `<td>${controls}</td></tr>`
      );
    })
    .join("");
  return (
    `<table><thead><tr><th>participant</th><th>position</th>` +
    `<th>age</th><th>actions</th></tr></thead><tbody>${rows}</tbody></table>`
  );
}
