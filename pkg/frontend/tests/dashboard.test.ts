import { describe, expect, it } from "vitest";

import { renderDashboard, renderRegionCountTable, renderSessionList } from "../src/dashboard.js";
import { AnalyticsSummary, REGION_CLASSES } from "../src/types.js";

const SUMMARY: AnalyticsSummary = {
  region_counts: {
    Combined: { CLS: 12, PB: 3, H: 1 },
    "penn-in-hand": { CLS: 7, PB: 2 },
    jain: { CLS: 5, PB: 1, H: 1 },
  },
  annotators: {
    a1: { documents: 2, regions: 14, revisions: 3 },
    a2: { documents: 1, regions: 2, revisions: 1 },
  },
  open_sessions: [
    {
      session_id: "s1",
      annotator_id: "a1",
      started_at: "2026-08-23T10:00:00Z",
      ended_at: null,
      docs_touched: ["doc-1"],
      regions_created: 5,
    },
  ],
  progress: {
    jain: { annotated: 1, total: 4 },
    "penn-in-hand": { annotated: 2, total: 2 },
  },
};

describe("renderRegionCountTable", () => {
  it("shows one column per class and one row per collection, Combined last", () => {
    const table = renderRegionCountTable(document, SUMMARY);
    const rows = Array.from(table.querySelectorAll("tr"));
    expect(rows).toHaveLength(4); // header + 3 collections

    const headers = Array.from(rows[0].querySelectorAll("th")).map((h) => h.textContent);
    expect(headers).toEqual(["Collection", ...REGION_CLASSES.map((c) => c.abbreviation)]);

    const firstCells = rows.slice(1).map((r) => r.querySelector("td")?.textContent);
    expect(firstCells).toEqual(["jain", "penn-in-hand", "Combined"]);
  });

  it("reports the exact counts from the payload, zero-filling absent classes", () => {
    const table = renderRegionCountTable(document, SUMMARY);
    const combined = Array.from(table.querySelectorAll("tr")).find(
      (r) => r.querySelector("td")?.textContent === "Combined"
    );
    const cells = Array.from(combined!.querySelectorAll("td")).slice(1);
    const byClass = Object.fromEntries(
      REGION_CLASSES.map((c, i) => [c.abbreviation, Number(cells[i].textContent)])
    );
    expect(byClass.CLS).toBe(12);
    expect(byClass.PB).toBe(3);
    expect(byClass.H).toBe(1);
    expect(byClass.BL).toBe(0);
  });
});

describe("renderSessionList", () => {
  it("lists open sessions", () => {
    const list = renderSessionList(document, SUMMARY);
    const items = Array.from(list.querySelectorAll("li")).map((li) => li.textContent);
    expect(items).toEqual(["a1 since 2026-08-23T10:00:00Z"]);
  });

  it("shows an empty state when nobody is annotating", () => {
    const list = renderSessionList(document, { ...SUMMARY, open_sessions: [] });
    expect(list.textContent).toContain("no live sessions");
  });
});

describe("renderDashboard", () => {
  it("mirrors the analytics payload in full", () => {
    const root = renderDashboard(document, SUMMARY);
    const headings = Array.from(root.querySelectorAll("h2")).map((h) => h.textContent);
    expect(headings).toEqual(["Region counts", "Annotators", "Live sessions", "Progress"]);

    const annotatorRows = Array.from(root.querySelectorAll("table.annotators tr")).slice(1);
    const annotators = annotatorRows.map((r) =>
      Array.from(r.querySelectorAll("td")).map((td) => td.textContent)
    );
    expect(annotators).toEqual([
      ["a1", "2", "14", "3"],
      ["a2", "1", "2", "1"],
    ]);

    const progress = Array.from(root.querySelectorAll(".progress-row")).map(
      (row) => row.textContent
    );
    expect(progress).toEqual(["jain1/4", "penn-in-hand2/2"]);
  });
});
