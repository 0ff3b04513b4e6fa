// Dashboard state: a bounded metrics history ring, the latest session
// table, and per-row pending flags. Failed polls mark the view stale but
// keep the last good data on screen.

import { MetricsPayload, SessionRow } from "./types.js";

export const HISTORY_CAPACITY = 300;

export interface Sample {
  at: number; // epoch millis
  liveSuspensions: number;
  suspensionBytesEstimate: number;
}

export class DashboardModel {
  history: Sample[] = [];
  sessions: SessionRow[] = [];
  latest: MetricsPayload | null = null;
  stale = false;
  lastError = "";
  pending = new Set<string>();

  applyPoll(payload: MetricsPayload, at: number): void {
    this.latest = payload;
    this.sessions = payload.sessions;
    this.history.push({
      at,
      liveSuspensions: payload.liveSuspensions,
      suspensionBytesEstimate: payload.suspensionBytesEstimate,
    });
    if (this.history.length > HISTORY_CAPACITY) {
      this.history.splice(0, this.history.length - HISTORY_CAPACITY);
    }
    this.stale = false;
    this.lastError = "";
    // rows that disappeared can no longer be pending
    const known = new Set(payload.sessions.map((row) => row.id));
    for (const id of [...this.pending]) {
      if (!known.has(id)) {
        this.pending.delete(id);
      }
    }
  }

  pollFailed(error: unknown): void {
    this.stale = true;
    this.lastError = error instanceof Error ? error.message : String(error);
  }

  markPending(id: string): void {
    this.pending.add(id);
  }

  clearPending(id: string): void {
    this.pending.delete(id);
  }
}
