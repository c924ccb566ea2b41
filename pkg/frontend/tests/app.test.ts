import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotatorApp, buildPalette } from "../src/main.js";
import { RegionPayload, REGION_CLASSES } from "../src/types.js";

const BASE = "http://service.test";

const PRIOR_REGIONS: RegionPayload[] = [
  {
    region_class: "CLS",
    shape_kind: "rectangle",
    vertices: [10, 20, 110, 20, 110, 45, 10, 45],
    annotator_id: "a1",
    revision: 2,
  },
  {
    region_class: "PB",
    shape_kind: "polygon",
    vertices: [0, 0, 400, 0, 400, 300, 0, 300],
    annotator_id: "a1",
    revision: 2,
  },
];

function makeClient(onPut?: (body: unknown) => void): ApiClient {
  const fetchImpl = async (
    input: RequestInfo | URL,
    init?: RequestInit
  ): Promise<Response> => {
    const path = new URL(String(input)).pathname;
    const method = init?.method ?? "GET";
    if (method === "POST" && path === "/sessions") {
      return new Response(
        JSON.stringify({
          session_id: "s1",
          annotator_id: "a1",
          started_at: "now",
          ended_at: null,
          docs_touched: [],
          regions_created: 0,
        })
      );
    }
    if (method === "GET" && path === "/documents/doc-1/annotation") {
      return new Response(
        JSON.stringify({ doc_id: "doc-1", revision: 2, regions: PRIOR_REGIONS })
      );
    }
    if (method === "PUT" && path === "/documents/doc-1/annotation") {
      const body = JSON.parse(String(init?.body));
      onPut?.(body);
      return new Response(
        JSON.stringify({
          doc_id: "doc-1",
          annotator_id: "a1",
          revision: 3,
          parent: 2,
          mode: body.mode,
          regions: body.regions,
          created_at: "now",
        })
      );
    }
    return new Response(JSON.stringify({ error: `no route ${method} ${path}` }), {
      status: 404,
    });
  };
  return new ApiClient(BASE, fetchImpl);
}

function makeApp(client: ApiClient): AnnotatorApp {
  const canvas = document.createElement("canvas");
  canvas.width = 800;
  canvas.height = 600;
  return new AnnotatorApp(client, canvas);
}

describe("AnnotatorApp", () => {
  it("starts corrections from the prior revision's regions", async () => {
    const app = makeApp(makeClient());
    await app.openDocument("doc-1", "correction");
    expect(app.state.regions.map((r) => r.regionClass)).toEqual(["CLS", "PB"]);
    expect(app.state.regions[0].points[0]).toEqual({ x: 10, y: 20 });
  });

  it("starts fresh annotations from an empty canvas", async () => {
    const app = makeApp(makeClient());
    await app.openDocument("doc-1", "fresh");
    expect(app.state.regions).toHaveLength(0);
  });

  it("saves through the service and reports the assigned revision", async () => {
    let putBody: { mode?: string; regions?: unknown[] } = {};
    const client = makeClient((body) => {
      putBody = body as typeof putBody;
    });
    await client.startSession("a1", "tok");
    const app = makeApp(client);
    await app.openDocument("doc-1", "correction");

    const revision = await app.save("correction");
    expect(revision).toBe(3);
    expect(putBody.mode).toBe("correction");
    expect(putBody.regions).toHaveLength(2);
    expect(app.statusMessage).toBe("saved revision 3");
  });

  it("translates rectangle drags from screen to image coordinates", async () => {
    const app = makeApp(makeClient());
    await app.openDocument("doc-1", "fresh");
    app.tool = "rectangle";
    app.activeClass = "LM";
    app.viewport.scale = 2;
    app.viewport.panBy(100, 50);

    app.pointerDown({ x: 120, y: 70 }); // image (10, 10)
    app.pointerUp({ x: 180, y: 130 }); // image (40, 40)

    expect(app.state.regions).toHaveLength(1);
    expect(app.state.regions[0].points).toEqual([
      { x: 10, y: 10 },
      { x: 40, y: 10 },
      { x: 40, y: 40 },
      { x: 10, y: 40 },
    ]);
  });

  it("surfaces drawing errors in the status message instead of throwing", async () => {
    const app = makeApp(makeClient());
    await app.openDocument("doc-1", "fresh");
    app.pointerDown({ x: 5, y: 5 });
    app.pointerDown({ x: 9, y: 9 });
    app.closePolygon();
    expect(app.state.regions).toHaveLength(0);
    expect(app.statusMessage).toMatch(/at least 3 vertices/);
  });

  it("collects freehand samples into a simplified region", async () => {
    const app = makeApp(makeClient());
    await app.openDocument("doc-1", "fresh");
    app.tool = "freehand";
    app.activeClass = "H";

    app.pointerDown({ x: 100, y: 100 });
    for (let i = 1; i < 150; i++) {
      const t = (2 * Math.PI * i) / 150;
      app.pointerMove({ x: 100 + 40 * Math.cos(t), y: 100 + 40 * Math.sin(t) });
    }
    app.pointerUp({ x: 100, y: 100 });

    expect(app.state.regions).toHaveLength(1);
    const n = app.state.regions[0].points.length;
    expect(n).toBeGreaterThanOrEqual(8);
    expect(n).toBeLessThanOrEqual(64);
  });
});

describe("buildPalette", () => {
  it("creates one button per class and reports the chosen abbreviation", () => {
    const chosen: string[] = [];
    const palette = buildPalette(document, (abbr) => chosen.push(abbr));
    const buttons = Array.from(palette.querySelectorAll("button"));
    expect(buttons.map((b) => b.textContent)).toEqual(
      REGION_CLASSES.map((c) => c.abbreviation)
    );
    buttons[8].click();
    expect(chosen).toEqual(["BL"]);
  });
});
