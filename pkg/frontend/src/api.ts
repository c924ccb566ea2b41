/** Thin typed client for the annotation service HTTP API. */

import {
  AnalyticsSummary,
  AnnotationRevision,
  AnnotatorAccount,
  DocumentSummary,
  RegionPayload,
  SessionInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number
  ) {
    super(message);
  }
}

export type FetchLike = typeof fetch;

export class ApiClient {
  private sessionId: string | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = fetch
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await response.json();
    if (!response.ok) {
      throw new ApiError(payload.error ?? response.statusText, response.status);
    }
    return payload as T;
  }

  register(name: string): Promise<AnnotatorAccount> {
    return this.request("POST", "/annotators", { name });
  }

  async startSession(annotatorId: string, token: string): Promise<SessionInfo> {
    const session = await this.request<SessionInfo>("POST", "/sessions", {
      annotator_id: annotatorId,
      token,
    });
    this.sessionId = session.session_id;
    return session;
  }

  async endSession(): Promise<void> {
    if (this.sessionId !== null) {
      await this.request("DELETE", `/sessions/${this.sessionId}`);
      this.sessionId = null;
    }
  }

  listDocuments(): Promise<DocumentSummary[]> {
    return this.request("GET", "/documents");
  }

  imageUrl(docId: string): string {
    return `${this.baseUrl}/documents/${docId}/image`;
  }

  getAnnotation(docId: string): Promise<AnnotationRevision> {
    return this.request("GET", `/documents/${docId}/annotation`);
  }

  getHistory(docId: string): Promise<AnnotationRevision[]> {
    return this.request("GET", `/documents/${docId}/history`);
  }

  /**
   * Submit the full region list as the next revision. The revision number in
   * the response is server-assigned; the client never invents one.
   */
  saveAnnotation(
    docId: string,
    regions: RegionPayload[],
    mode: "fresh" | "correction"
  ): Promise<AnnotationRevision> {
    if (this.sessionId === null) {
      throw new ApiError("no open session", 409);
    }
    return this.request("PUT", `/documents/${docId}/annotation`, {
      session_id: this.sessionId,
      regions,
      mode,
    });
  }

  analyticsSummary(): Promise<AnalyticsSummary> {
    return this.request("GET", "/analytics/summary");
  }

  analyticsSessions(): Promise<SessionInfo[]> {
    return this.request("GET", "/analytics/sessions");
  }
}
