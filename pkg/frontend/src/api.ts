// Admin API client. The dashboard mutates server state through exactly two
// routes: session expire and session reset. Everything else is a read.

import { MetricsPayload, isMetricsPayload } from "./types.js";

export class AuthError extends Error {
  constructor() {
    super("admin token missing or rejected");
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class AdminClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private headers(): Record<string, string> {
    return { authorization: `Bearer ${this.token}` };
  }

  private async call(method: string, path: string): Promise<Response> {
    const response = await this.fetchFn(`${this.baseUrl}${path}`, {
      method,
      headers: this.headers(),
    });
    if (response.status === 401) {
      throw new AuthError();
    }
    if (!response.ok) {
      throw new Error(`${method} ${path} -> ${response.status}`);
    }
    return response;
  }

  async fetchMetrics(): Promise<MetricsPayload> {
    const response = await this.call("GET", "/admin/api/metrics");
    const body: unknown = await response.json();
    if (!isMetricsPayload(body)) {
      throw new Error("metrics payload does not match the admin schema");
    }
    return body;
  }

  async expireSession(id: string): Promise<void> {
    await this.call("POST", `/admin/api/sessions/${encodeURIComponent(id)}/expire`);
  }

  async resetSession(id: string): Promise<void> {
    await this.call("POST", `/admin/api/sessions/${encodeURIComponent(id)}/reset`);
  }
}
