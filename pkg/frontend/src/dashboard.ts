/** Analytics dashboard: renders the service summary payload as DOM tables. */

import { AnalyticsSummary } from "./types.js";
import { REGION_CLASSES } from "./types.js";

function el(doc: Document, tag: string, text?: string, className?: string): HTMLElement {
  const node = doc.createElement(tag);
  if (text !== undefined) {
    node.textContent = text;
  }
  if (className !== undefined) {
    node.className = className;
  }
  return node;
}

/** Per-collection region counts, one column per class abbreviation. */
export function renderRegionCountTable(doc: Document, summary: AnalyticsSummary): HTMLTableElement {
  const table = doc.createElement("table");
  table.className = "region-counts";
  const header = el(doc, "tr");
  header.appendChild(el(doc, "th", "Collection"));
  for (const cls of REGION_CLASSES) {
    header.appendChild(el(doc, "th", cls.abbreviation));
  }
  table.appendChild(header);

  const collections = Object.keys(summary.region_counts).sort((a, b) =>
    a === "Combined" ? 1 : b === "Combined" ? -1 : a.localeCompare(b)
  );
  for (const collection of collections) {
    const row = el(doc, "tr");
    row.appendChild(el(doc, "td", collection));
    for (const cls of REGION_CLASSES) {
      const count = summary.region_counts[collection][cls.abbreviation] ?? 0;
      row.appendChild(el(doc, "td", String(count)));
    }
    table.appendChild(row);
  }
  return table;
}

/** Per-annotator throughput: documents touched, regions, revisions. */
export function renderAnnotatorTable(doc: Document, summary: AnalyticsSummary): HTMLTableElement {
  const table = doc.createElement("table");
  table.className = "annotators";
  const header = el(doc, "tr");
  for (const title of ["Annotator", "Documents", "Regions", "Revisions"]) {
    header.appendChild(el(doc, "th", title));
  }
  table.appendChild(header);
  for (const [annotatorId, entry] of Object.entries(summary.annotators)) {
    const row = el(doc, "tr");
    row.appendChild(el(doc, "td", annotatorId));
    row.appendChild(el(doc, "td", String(entry.documents)));
    row.appendChild(el(doc, "td", String(entry.regions)));
    row.appendChild(el(doc, "td", String(entry.revisions)));
    table.appendChild(row);
  }
  return table;
}

/** Live session list (open sessions only). */
export function renderSessionList(doc: Document, summary: AnalyticsSummary): HTMLElement {
  const list = el(doc, "ul", undefined, "open-sessions");
  for (const session of summary.open_sessions) {
    list.appendChild(
      el(doc, "li", `${session.annotator_id} since ${session.started_at}`)
    );
  }
  if (summary.open_sessions.length === 0) {
    list.appendChild(el(doc, "li", "no live sessions", "empty"));
  }
  return list;
}

/** Per-collection progress bars (annotated / total documents). */
export function renderProgress(doc: Document, summary: AnalyticsSummary): HTMLElement {
  const container = el(doc, "div", undefined, "progress");
  for (const [collection, entry] of Object.entries(summary.progress)) {
    const row = el(doc, "div", undefined, "progress-row");
    row.appendChild(el(doc, "span", collection));
    row.appendChild(el(doc, "span", `${entry.annotated}/${entry.total}`, "count"));
    container.appendChild(row);
  }
  return container;
}

/** Assemble the full dashboard into a container element. */
export function renderDashboard(doc: Document, summary: AnalyticsSummary): HTMLElement {
  const root = el(doc, "div", undefined, "dashboard");
  root.appendChild(el(doc, "h2", "Region counts"));
  root.appendChild(renderRegionCountTable(doc, summary));
  root.appendChild(el(doc, "h2", "Annotators"));
  root.appendChild(renderAnnotatorTable(doc, summary));
  root.appendChild(el(doc, "h2", "Live sessions"));
  root.appendChild(renderSessionList(doc, summary));
  root.appendChild(el(doc, "h2", "Progress"));
  root.appendChild(renderProgress(doc, summary));
  return root;
}
