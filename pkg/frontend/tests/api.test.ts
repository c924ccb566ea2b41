import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

interface RecordedCall {
  url: string;
  method: string;
  body: unknown;
}

/** Minimal fetch stand-in backed by a route table. */
function makeFetch(
  routes: Record<string, (body: unknown) => { status?: number; payload: unknown }>,
  calls: RecordedCall[]
) {
  return async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const method = init?.method ?? "GET";
    const body = init?.body === undefined ? undefined : JSON.parse(String(init.body));
    calls.push({ url, method, body });
    const key = `${method} ${new URL(url).pathname}`;
    const route = routes[key];
    if (route === undefined) {
      return new Response(JSON.stringify({ error: `no route ${key}` }), { status: 404 });
    }
    const { status = 200, payload } = route(body);
    return new Response(JSON.stringify(payload), { status });
  };
}

const BASE = "http://service.test";

describe("ApiClient", () => {
  it("registers, opens a session and sends the token", async () => {
    const calls: RecordedCall[] = [];
    const client = new ApiClient(
      BASE,
      makeFetch(
        {
          "POST /annotators": () => ({
            payload: {
              annotator_id: "a1",
              name: "mira",
              token: "tok-1",
              registered_at: "2026-08-23T00:00:00Z",
            },
          }),
          "POST /sessions": (body) => {
            expect(body).toEqual({ annotator_id: "a1", token: "tok-1" });
            return {
              payload: {
                session_id: "s1",
                annotator_id: "a1",
                started_at: "2026-08-23T00:00:01Z",
                ended_at: null,
                docs_touched: [],
                regions_created: 0,
              },
            };
          },
        },
        calls
      )
    );
    const account = await client.register("mira");
    const session = await client.startSession(account.annotator_id, account.token);
    expect(session.session_id).toBe("s1");
    expect(calls.map((c) => c.method)).toEqual(["POST", "POST"]);
  });

  it("refuses to save without an open session", () => {
    const client = new ApiClient(BASE, makeFetch({}, []));
    expect(() => client.saveAnnotation("doc-1", [], "fresh")).toThrow(ApiError);
  });

  it("uses the server-assigned revision number verbatim", async () => {
    const calls: RecordedCall[] = [];
    const client = new ApiClient(
      BASE,
      makeFetch(
        {
          "POST /sessions": () => ({
            payload: {
              session_id: "s9",
              annotator_id: "a1",
              started_at: "now",
              ended_at: null,
              docs_touched: [],
              regions_created: 0,
            },
          }),
          "PUT /documents/doc-1/annotation": (body) => {
            const b = body as { session_id: string; mode: string; regions: unknown[] };
            expect(b.session_id).toBe("s9");
            expect(b.mode).toBe("correction");
            // the client payload never carries a chosen revision for the doc
            return {
              payload: {
                doc_id: "doc-1",
                annotator_id: "a1",
                revision: 7,
                parent: 6,
                mode: "correction",
                regions: b.regions,
                created_at: "now",
              },
            };
          },
        },
        calls
      )
    );
    await client.startSession("a1", "tok");
    const revision = await client.saveAnnotation("doc-1", [], "correction");
    expect(revision.revision).toBe(7);
    expect(revision.parent).toBe(6);
  });

  it("raises ApiError with the server message and status", async () => {
    const client = new ApiClient(
      BASE,
      makeFetch(
        {
          "POST /sessions": () => ({
            status: 403,
            payload: { error: "invalid token" },
          }),
        },
        []
      )
    );
    await expect(client.startSession("a1", "bad")).rejects.toMatchObject({
      message: "invalid token",
      status: 403,
    });
  });

  it("builds document image URLs from the base URL", () => {
    const client = new ApiClient(BASE, makeFetch({}, []));
    expect(client.imageUrl("doc-3")).toBe(`${BASE}/documents/doc-3/image`);
  });
});
