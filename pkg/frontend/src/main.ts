/** Application wiring: canvas, tool handling, palette, save/correct flow. */

import { ApiClient } from "./api.js";
import {
  AnnotationState,
  CanvasRegion,
  Tool,
  Viewport,
  regionFromFreehand,
  regionFromPolygon,
  regionFromRectangle,
} from "./annotator.js";
import { renderDashboard } from "./dashboard.js";
import { Point } from "./geometry.js";
import { REGION_CLASSES } from "./types.js";

const DASHBOARD_REFRESH_MS = 5000;

export class AnnotatorApp {
  readonly state = new AnnotationState();
  readonly viewport = new Viewport();
  tool: Tool = "polygon";
  activeClass: string = REGION_CLASSES[1].abbreviation; // text lines by default
  currentDocId: string | null = null;
  statusMessage = "";

  private image: HTMLImageElement | null = null;
  private pendingClicks: Point[] = [];
  private freehandSamples: Point[] = [];
  private dragStart: Point | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly canvas: HTMLCanvasElement
  ) {}

  // -- document lifecycle

  async openDocument(docId: string, mode: "fresh" | "correction"): Promise<void> {
    this.currentDocId = docId;
    this.pendingClicks = [];
    const annotation = await this.api.getAnnotation(docId);
    if (mode === "correction") {
      // correction starts from the prior revision's regions
      this.state.loadPayloads(annotation.regions);
    } else {
      this.state.regions = [];
    }
    this.image = new Image();
    this.image.src = this.api.imageUrl(docId);
    this.image.onload = () => this.render();
    this.render();
  }

  async save(mode: "fresh" | "correction"): Promise<number> {
    if (this.currentDocId === null) {
      throw new Error("no document open");
    }
    const revision = await this.api.saveAnnotation(
      this.currentDocId,
      this.state.toPayloads(),
      mode
    );
    this.statusMessage = `saved revision ${revision.revision}`;
    return revision.revision;
  }

  // -- pointer handling (screen coordinates in, image coordinates stored)

  pointerDown(screen: Point): void {
    const p = this.viewport.toImage(screen);
    if (this.tool === "rectangle") {
      this.dragStart = p;
    } else if (this.tool === "freehand") {
      this.freehandSamples = [p];
    } else {
      this.pendingClicks.push(p);
    }
    this.render();
  }

  pointerMove(screen: Point): void {
    if (this.tool === "freehand" && this.freehandSamples.length > 0) {
      this.freehandSamples.push(this.viewport.toImage(screen));
      this.render();
    }
  }

  pointerUp(screen: Point): void {
    try {
      if (this.tool === "rectangle" && this.dragStart !== null) {
        const region = regionFromRectangle(
          this.activeClass,
          this.dragStart,
          this.viewport.toImage(screen)
        );
        this.state.add(region);
        this.dragStart = null;
      } else if (this.tool === "freehand" && this.freehandSamples.length > 0) {
        this.state.add(regionFromFreehand(this.activeClass, this.freehandSamples));
        this.freehandSamples = [];
      }
      this.statusMessage = "";
    } catch (err) {
      this.statusMessage = err instanceof Error ? err.message : String(err);
    }
    this.render();
  }

  /** Close the in-progress polygon (double-click or Enter). */
  closePolygon(): void {
    try {
      this.state.add(regionFromPolygon(this.activeClass, this.pendingClicks));
      this.pendingClicks = [];
      this.statusMessage = "";
    } catch (err) {
      this.statusMessage = err instanceof Error ? err.message : String(err);
    }
    this.render();
  }

  // -- rendering

  render(): void {
    let ctx: CanvasRenderingContext2D | null;
    try {
      ctx = this.canvas.getContext("2d");
    } catch {
      ctx = null; // no 2D context in headless test environments
    }
    if (ctx === null) {
      return;
    }
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (this.image !== null && this.image.complete) {
      const origin = this.viewport.toScreen({ x: 0, y: 0 });
      ctx.drawImage(
        this.image,
        origin.x,
        origin.y,
        this.image.naturalWidth * this.viewport.scale,
        this.image.naturalHeight * this.viewport.scale
      );
    }
    for (const region of this.state.regions) {
      this.drawRegion(ctx, region);
    }
    if (this.pendingClicks.length > 0) {
      this.drawPath(ctx, this.pendingClicks, "#888888", true);
    }
    if (this.freehandSamples.length > 1) {
      this.drawPath(ctx, this.freehandSamples, "#888888", false);
    }
  }

  private drawRegion(ctx: CanvasRenderingContext2D, region: CanvasRegion): void {
    const info = REGION_CLASSES.find((c) => c.abbreviation === region.regionClass);
    const color = info?.color ?? "#000000";
    ctx.lineWidth = region.selected ? 3 : 1.5;
    this.drawPath(ctx, region.points, color, true);
  }

  private drawPath(
    ctx: CanvasRenderingContext2D,
    points: Point[],
    color: string,
    close: boolean
  ): void {
    ctx.strokeStyle = color;
    ctx.beginPath();
    points.forEach((p, i) => {
      const s = this.viewport.toScreen(p);
      if (i === 0) {
        ctx.moveTo(s.x, s.y);
      } else {
        ctx.lineTo(s.x, s.y);
      }
    });
    if (close) {
      ctx.closePath();
    }
    ctx.stroke();
  }
}

/** Build the class palette buttons; exactly one per region class. */
export function buildPalette(
  doc: Document,
  onSelect: (abbreviation: string) => void
): HTMLElement {
  const palette = doc.createElement("div");
  palette.className = "palette";
  for (const cls of REGION_CLASSES) {
    const button = doc.createElement("button");
    button.textContent = cls.abbreviation;
    button.title = cls.fullName;
    button.style.borderColor = cls.color;
    button.addEventListener("click", () => onSelect(cls.abbreviation));
    palette.appendChild(button);
  }
  return palette;
}

/** Mount the dashboard into a container and keep it refreshed. */
export function mountDashboard(
  doc: Document,
  container: HTMLElement,
  api: ApiClient,
  refreshMs: number = DASHBOARD_REFRESH_MS
): () => void {
  let timer: ReturnType<typeof setInterval> | null = null;
  const refresh = async () => {
    const summary = await api.analyticsSummary();
    container.replaceChildren(renderDashboard(doc, summary));
  };
  void refresh();
  timer = setInterval(() => void refresh(), refreshMs);
  return () => {
    if (timer !== null) {
      clearInterval(timer);
    }
  };
}
