// Admin API schema, verbatim from the server.

export interface SessionRow {
  id: string;
  participant: string;
  path: string; // slash-joined position, e.g. example/choices/heads-or-tails
  ageSeconds: number;
}

export interface MetricsPayload {
  liveSessions: number;
  liveSuspensions: number;
  suspensionBytesEstimate: number;
  deliveriesTotal: number;
  goneEmbedTotal: number;
  sessions: SessionRow[];
}

export function isSessionRow(value: unknown): value is SessionRow {
  const row = value as SessionRow;
  return (
    typeof row === "object" && row !== null &&
    typeof row.id === "string" &&
    typeof row.participant === "string" &&
    typeof row.path === "string" &&
    typeof row.ageSeconds === "number" && Number.isFinite(row.ageSeconds)
  );
}

export function isMetricsPayload(value: unknown): value is MetricsPayload {
  const m = value as MetricsPayload;
  return (
    typeof m === "object" && m !== null &&
    typeof m.liveSessions === "number" &&
    typeof m.liveSuspensions === "number" &&
    typeof m.suspensionBytesEstimate === "number" &&
    typeof m.deliveriesTotal === "number" &&
    typeof m.goneEmbedTotal === "number" &&
    Array.isArray(m.sessions) && m.sessions.every(isSessionRow)
  );
}
