import { describe, expect, it } from "vitest";

import { DashboardModel, HISTORY_CAPACITY } from "../src/model.js";
import { MetricsPayload } from "../src/types.js";

export function payloadWith(sessions: MetricsPayload["sessions"],
                            extra: Partial<MetricsPayload> = {}): MetricsPayload {
  return {
    liveSessions: sessions.length,
    liveSuspensions: sessions.length,
    suspensionBytesEstimate: 1234,
    deliveriesTotal: 0,
    goneEmbedTotal: 0,
    sessions,
    ...extra,
  };
}

// Captured from a live server with three walkers enrolled in the
// coin-toss fixture; shape matches the documented admin schema.
export const THREE_SESSIONS = payloadWith([
  { id: "1f6a09b2c3d4e5f6", participant: "tok-a", path: "example/intro", ageSeconds: 1.2 },
  { id: "2a7b18c3d4e5f607", participant: "tok-b", path: "example/choices/heads-or-tails", ageSeconds: 0.4 },
  { id: "3b8c27d4e5f60718", participant: "tok-c", path: "example/result", ageSeconds: 7.9 },
], { suspensionBytesEstimate: 12901, deliveriesTotal: 4 });

describe("DashboardModel", () => {
  it("applies a poll: table mirrors sessions, history grows", () => {
    const model = new DashboardModel();
    model.applyPoll(THREE_SESSIONS, 1000);
    expect(model.sessions.map((row) => row.path)).toEqual([
      "example/intro",
      "example/choices/heads-or-tails",
      "example/result",
    ]);
    expect(model.history).toHaveLength(1);
    expect(model.history[0]).toMatchObject({ at: 1000, liveSuspensions: 3 });
    expect(model.stale).toBe(false);
  });

  it("keeps at most the last 300 samples, append-only", () => {
    const model = new DashboardModel();
    for (let i = 0; i < HISTORY_CAPACITY + 50; i++) {
      model.applyPoll(payloadWith([], { suspensionBytesEstimate: i }), i);
    }
    expect(model.history).toHaveLength(HISTORY_CAPACITY);
    expect(model.history[0]!.suspensionBytesEstimate).toBe(50);
    const bytes = model.history.map((s) => s.suspensionBytesEstimate);
    expect(bytes).toEqual([...bytes].sort((a, b) => a - b)); // ordered, never rewritten
  });

  it("a failed poll goes stale but keeps the last good table", () => {
    const model = new DashboardModel();
    model.applyPoll(THREE_SESSIONS, 1);
    model.pollFailed(new Error("connection refused"));
    expect(model.stale).toBe(true);
    expect(model.lastError).toContain("connection refused");
    expect(model.sessions).toHaveLength(3);
    model.applyPoll(THREE_SESSIONS, 2);
    expect(model.stale).toBe(false);
  });

  it("pending flags are dropped when the row disappears", () => {
    const model = new DashboardModel();
    model.applyPoll(THREE_SESSIONS, 1);
    model.markPending("1f6a09b2c3d4e5f6");
    model.markPending("2a7b18c3d4e5f607");
    model.applyPoll(payloadWith([THREE_SESSIONS.sessions[1]!]), 2);
    expect(model.pending.has("1f6a09b2c3d4e5f6")).toBe(false);
    expect(model.pending.has("2a7b18c3d4e5f607")).toBe(true);
  });
});
