// Page wiring: token prompt at load, a 2s poll loop (one request in
// flight at a time, actions queued behind it), and row controls that hit
// the two admin mutation routes after a confirm dialog.

import { AdminClient, AuthError } from "./api.js";
import { DashboardModel } from "./model.js";
import { renderChart } from "./chart.js";
import { renderStatus, renderTable } from "./render.js";

const POLL_INTERVAL_MS = 2000;

type Action = { kind: "expire" | "reset"; id: string };

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing #${id}`);
  }
  return node;
}

function baseUrl(): string {
  // Served at /admin/ui on the study server itself, or standalone with
  // ?server=http://host:port when developing against a remote one.
  const override = new URLSearchParams(window.location.search).get("server");
  return override ?? window.location.origin;
}

function askToken(previous = ""): string {
  // held in memory only, never persisted
  return window.prompt("Admin API token:", previous) ?? "";
}

function main(): void {
  const model = new DashboardModel();
  let token = askToken();
  let client = new AdminClient(baseUrl(), token);
  const queue: Action[] = [];
  let busy = false;

  function redraw(): void {
    el("status").innerHTML = renderStatus(model);
    el("chart").innerHTML = renderChart(model.history);
    el("sessions").innerHTML = renderTable(model);
  }

  async function runAction(action: Action): Promise<void> {
    model.markPending(action.id);
    redraw();
    try {
      if (action.kind === "expire") {
        await client.expireSession(action.id);
      } else {
        await client.resetSession(action.id);
      }
    } catch (error) {
      model.pollFailed(error); // surfaced inline via the stale banner
    } finally {
      model.clearPending(action.id);
      redraw();
    }
  }

  async function tick(): Promise<void> {
    if (busy) {
      return; // one in flight; the interval will come around again
    }
    busy = true;
    try {
      while (queue.length > 0) {
        await runAction(queue.shift()!);
      }
      const payload = await client.fetchMetrics();
      model.applyPoll(payload, Date.now());
    } catch (error) {
      if (error instanceof AuthError) {
        token = askToken(token);
        client = new AdminClient(baseUrl(), token);
      }
      model.pollFailed(error);
    } finally {
      busy = false;
      redraw();
    }
  }

  el("sessions").addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    const kind = target.dataset?.action as Action["kind"] | undefined;
    const id = target.dataset?.id;
    if (!kind || !id) {
      return;
    }
    if (!window.confirm(`${kind} session ${id}?`)) {
      return;
    }
    queue.push({ kind, id });
    void tick();
  });

  redraw();
  void tick();
  window.setInterval(() => void tick(), POLL_INTERVAL_MS);
}

main();
