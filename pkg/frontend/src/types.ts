/** Shared types mirroring the annotation service's JSON payloads. */

export interface ClassInfo {
  abbreviation: string;
  fullName: string;
  /** Stroke/fill color used on the canvas and in the palette. */
  color: string;
}

/** The nine region classes, keyed by their abbreviations. */
export const REGION_CLASSES: ClassInfo[] = [
  { abbreviation: "H", fullName: "Hole", color: "#8d6e63" },
  { abbreviation: "CLS", fullName: "Character Line Segment", color: "#1e88e5" },
  { abbreviation: "PD", fullName: "Physical Degradation", color: "#6d4c41" },
  { abbreviation: "PB", fullName: "Page Boundary", color: "#43a047" },
  { abbreviation: "CC", fullName: "Character Component", color: "#00acc1" },
  { abbreviation: "LM", fullName: "Library Marker", color: "#fdd835" },
  { abbreviation: "D", fullName: "Decorator", color: "#ab47bc" },
  { abbreviation: "P", fullName: "Picture", color: "#ef6c00" },
  { abbreviation: "BL", fullName: "Boundary Line", color: "#e53935" },
];

export type ShapeKind = "rectangle" | "polygon" | "freehand";

/** Region payload in the service's wire format (flat vertex array). */
export interface RegionPayload {
  region_class: string;
  shape_kind: ShapeKind;
  vertices: number[]; // [x1, y1, x2, y2, ...]
  annotator_id: string | null;
  revision: number;
  score?: number;
}

export interface AnnotationRevision {
  doc_id: string;
  annotator_id?: string;
  revision: number;
  parent?: number | null;
  mode?: string;
  regions: RegionPayload[];
  created_at?: string;
}

export interface DocumentSummary {
  doc_id: string;
  image_path: string;
  width: number;
  height: number;
  collection: string;
  current_revision: number;
}

export interface AnnotatorAccount {
  annotator_id: string;
  name: string;
  token: string;
  registered_at: string;
}

export interface SessionInfo {
  session_id: string;
  annotator_id: string;
  started_at: string;
  ended_at: string | null;
  docs_touched: string[];
  regions_created: number;
}

export interface AnalyticsSummary {
  region_counts: Record<string, Record<string, number>>;
  annotators: Record<
    string,
    { documents: number; regions: number; revisions: number }
  >;
  open_sessions: SessionInfo[];
  progress: Record<string, { annotated: number; total: number }>;
}
