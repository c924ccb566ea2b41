"""Web-service backend for the browser annotator.

State lives in an append-only JSONL event log (one file), replayed on
startup. Revision assignment is serialized per store under a lock, so
concurrent submissions get distinct consecutive revisions and the latest
one becomes current. Images are served read-only from the corpus directory.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse, Response

from .corpus import (
    CorpusError,
    DocumentAnnotation,
    RegionInstance,
    compute_region_statistics,
    parse_annotation_file,
    region_from_json,
    write_annotation_file,
    _region_to_json,
)


class ServiceError(Exception):
    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class AnnotatorAccount:
    annotator_id: str
    name: str
    token: str
    registered_at: str


@dataclass
class AnnotationRevision:
    doc_id: str
    annotator_id: str
    revision: int
    parent: Optional[int]
    mode: str  # fresh | correction
    regions: List[RegionInstance]
    created_at: str

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "annotator_id": self.annotator_id,
            "revision": self.revision,
            "parent": self.parent,
            "mode": self.mode,
            "regions": [_region_to_json(r) for r in self.regions],
            "created_at": self.created_at,
        }


@dataclass
class SessionRecord:
    session_id: str
    annotator_id: str
    started_at: str
    ended_at: Optional[str] = None
    docs_touched: set = field(default_factory=set)
    regions_created: int = 0

    def to_json(self) -> dict:
        return {
            "session_id": self.session_id,
            "annotator_id": self.annotator_id,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "docs_touched": sorted(self.docs_touched),
            "regions_created": self.regions_created,
        }


class AnnotationStore:
    """Documents, annotators, sessions and the append-only revision log."""

    def __init__(self, store_path: Optional[Path] = None):
        self._lock = threading.Lock()
        self._store_path = Path(store_path) if store_path else None
        self.documents: Dict[str, DocumentAnnotation] = {}
        self.annotators: Dict[str, AnnotatorAccount] = {}
        self.sessions: Dict[str, SessionRecord] = {}
        self.revisions: Dict[str, List[AnnotationRevision]] = {}
        if self._store_path and self._store_path.exists():
            self._replay_log()

    # -- persistence

    def _append_event(self, event: dict) -> None:
        if self._store_path is None:
            return
        with open(self._store_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, sort_keys=True) + "\n")

    def _replay_log(self) -> None:
        for line in self._store_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                self._apply_event(json.loads(line), replay=True)

    def _apply_event(self, event: dict, replay: bool = False) -> None:
        kind = event["type"]
        if kind == "annotator":
            account = AnnotatorAccount(
                event["annotator_id"], event["name"], event["token"], event["registered_at"]
            )
            self.annotators[account.annotator_id] = account
        elif kind == "session_start":
            record = SessionRecord(
                event["session_id"], event["annotator_id"], event["started_at"]
            )
            self.sessions[record.session_id] = record
        elif kind == "session_end":
            session = self.sessions.get(event["session_id"])
            if session is not None:
                session.ended_at = event["ended_at"]
        elif kind == "revision":
            regions = [region_from_json(r) for r in event["regions"]]
            revision = AnnotationRevision(
                doc_id=event["doc_id"],
                annotator_id=event["annotator_id"],
                revision=event["revision"],
                parent=event["parent"],
                mode=event["mode"],
                regions=regions,
                created_at=event["created_at"],
            )
            self.revisions.setdefault(revision.doc_id, []).append(revision)
            session = self.sessions.get(event.get("session_id", ""))
            if session is not None:
                session.docs_touched.add(revision.doc_id)
                session.regions_created += len(regions)
        else:
            raise ServiceError(f"unknown event type {kind!r}", status=500)

    # -- documents

    def register_documents(self, docs: List[DocumentAnnotation], seed_revisions: bool = True) -> None:
        """Register corpus documents; optionally seed revision 1 from their regions."""
        with self._lock:
            for doc in docs:
                self.documents[doc.doc_id] = doc
                if seed_revisions and doc.regions and doc.doc_id not in self.revisions:
                    event = {
                        "type": "revision",
                        "doc_id": doc.doc_id,
                        "annotator_id": "import",
                        "session_id": None,
                        "revision": 1,
                        "parent": None,
                        "mode": "fresh",
                        "regions": [_region_to_json(r) for r in doc.regions],
                        "created_at": _now(),
                    }
                    self._apply_event(event)
                    self._append_event(event)

    # -- annotators and sessions

    def register_annotator(self, name: str) -> AnnotatorAccount:
        if not name:
            raise ServiceError("annotator name must be nonempty")
        with self._lock:
            event = {
                "type": "annotator",
                "annotator_id": uuid.uuid4().hex,
                "name": name,
                "token": uuid.uuid4().hex,
                "registered_at": _now(),
            }
            self._apply_event(event)
            self._append_event(event)
            return self.annotators[event["annotator_id"]]

    def start_session(self, annotator_id: str, token: str) -> SessionRecord:
        with self._lock:
            account = self.annotators.get(annotator_id)
            if account is None:
                raise ServiceError("unknown annotator", status=404)
            if account.token != token:
                raise ServiceError("bad token", status=403)
            event = {
                "type": "session_start",
                "session_id": uuid.uuid4().hex,
                "annotator_id": annotator_id,
                "started_at": _now(),
            }
            self._apply_event(event)
            self._append_event(event)
            return self.sessions[event["session_id"]]

    def end_session(self, session_id: str) -> SessionRecord:
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None:
                raise ServiceError("unknown session", status=404)
            if session.ended_at is None:
                event = {"type": "session_end", "session_id": session_id, "ended_at": _now()}
                self._apply_event(event)
                self._append_event(event)
            return session

    # -- annotations

    def submit_annotation(
        self, session_id: str, doc_id: str, region_payloads: List[dict], mode: str
    ) -> AnnotationRevision:
        if mode not in ("fresh", "correction"):
            raise ServiceError(f"unknown mode {mode!r}")
        with self._lock:
            session = self.sessions.get(session_id)
            if session is None or session.ended_at is not None:
                raise ServiceError("session is not open", status=409)
            doc = self.documents.get(doc_id)
            if doc is None:
                raise ServiceError(f"unknown document {doc_id!r}", status=404)

            regions = []
            for i, payload in enumerate(region_payloads):
                try:
                    regions.append(region_from_json(payload, context=f"region {i}"))
                except CorpusError as exc:
                    raise ServiceError(f"invalid region at index {i}: {exc}") from exc
            # run document-level validation (bounds clamping) on the submission
            validated = DocumentAnnotation(
                doc_id=doc.doc_id,
                image_path=doc.image_path,
                width=doc.width,
                height=doc.height,
                collection=doc.collection,
                script=doc.script,
                regions=regions,
            ).regions

            history = self.revisions.get(doc_id, [])
            if mode == "correction" and not history:
                raise ServiceError(
                    f"correction mode needs a prior revision for {doc_id!r}", status=409
                )
            number = history[-1].revision + 1 if history else 1
            parent = history[-1].revision if (mode == "correction" and history) else None
            event = {
                "type": "revision",
                "doc_id": doc_id,
                "annotator_id": session.annotator_id,
                "session_id": session_id,
                "revision": number,
                "parent": parent,
                "mode": mode,
                "regions": [_region_to_json(r) for r in validated],
                "created_at": _now(),
            }
            self._apply_event(event)
            self._append_event(event)
            return self.revisions[doc_id][-1]

    def get_current_annotation(self, doc_id: str) -> Optional[AnnotationRevision]:
        with self._lock:
            if doc_id not in self.documents:
                raise ServiceError(f"unknown document {doc_id!r}", status=404)
            history = self.revisions.get(doc_id, [])
            return history[-1] if history else None

    def get_revision_history(self, doc_id: str) -> List[AnnotationRevision]:
        with self._lock:
            if doc_id not in self.documents:
                raise ServiceError(f"unknown document {doc_id!r}", status=404)
            return list(self.revisions.get(doc_id, []))

    # -- analytics and export

    def export_corpus(self) -> List[DocumentAnnotation]:
        """Current revisions as corpus documents, sorted by doc_id."""
        with self._lock:
            out = []
            for doc_id in sorted(self.documents):
                doc = self.documents[doc_id]
                history = self.revisions.get(doc_id, [])
                regions = list(history[-1].regions) if history else []
                out.append(
                    DocumentAnnotation(
                        doc_id=doc.doc_id,
                        image_path=doc.image_path,
                        width=doc.width,
                        height=doc.height,
                        collection=doc.collection,
                        script=doc.script,
                        regions=regions,
                    )
                )
            return out

    def analytics_summary(self) -> dict:
        docs = self.export_corpus()
        stats = compute_region_statistics(docs)
        with self._lock:
            per_annotator: Dict[str, dict] = {}
            for history in self.revisions.values():
                for revision in history:
                    entry = per_annotator.setdefault(
                        revision.annotator_id, {"documents": set(), "regions": 0, "revisions": 0}
                    )
                    entry["documents"].add(revision.doc_id)
                    entry["regions"] += len(revision.regions)
                    entry["revisions"] += 1
            progress: Dict[str, dict] = {}
            for doc in self.documents.values():
                entry = progress.setdefault(doc.collection, {"annotated": 0, "total": 0})
                entry["total"] += 1
                if self.revisions.get(doc.doc_id):
                    entry["annotated"] += 1
            open_sessions = [
                s.to_json() for s in self.sessions.values() if s.ended_at is None
            ]
        return {
            "region_counts": {
                coll: {cls.abbreviation: count for cls, count in row.items()}
                for coll, row in stats.items()
            },
            "annotators": {
                aid: {
                    "documents": len(entry["documents"]),
                    "regions": entry["regions"],
                    "revisions": entry["revisions"],
                }
                for aid, entry in sorted(per_annotator.items())
            },
            "open_sessions": sorted(open_sessions, key=lambda s: s["session_id"]),
            "progress": progress,
        }


def create_app(store: AnnotationStore, image_dir: Optional[Path] = None) -> FastAPI:
    app = FastAPI(title="manuscript annotation service")

    @app.exception_handler(ServiceError)
    async def _service_error(request, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": str(exc)})

    @app.post("/annotators")
    def register(payload: dict = Body(...)):
        account = store.register_annotator(payload.get("name", ""))
        return account.__dict__

    @app.post("/sessions")
    def open_session(payload: dict = Body(...)):
        session = store.start_session(payload.get("annotator_id", ""), payload.get("token", ""))
        return session.to_json()

    @app.delete("/sessions/{session_id}")
    def close_session(session_id: str):
        return store.end_session(session_id).to_json()

    @app.get("/documents")
    def list_documents():
        return [
            {
                "doc_id": d.doc_id,
                "image_path": d.image_path,
                "width": d.width,
                "height": d.height,
                "collection": d.collection,
                "current_revision": (
                    store.revisions[d.doc_id][-1].revision if store.revisions.get(d.doc_id) else 0
                ),
            }
            for d in sorted(store.documents.values(), key=lambda d: d.doc_id)
        ]

    @app.get("/documents/{doc_id}/image")
    def get_image(doc_id: str):
        doc = store.documents.get(doc_id)
        if doc is None:
            raise ServiceError(f"unknown document {doc_id!r}", status=404)
        path = Path(doc.image_path)
        if not path.is_absolute() and image_dir is not None:
            path = image_dir / path
        if not path.exists():
            raise ServiceError(f"image for {doc_id!r} not found", status=404)
        return FileResponse(path)

    @app.get("/documents/{doc_id}/annotation")
    def get_annotation(doc_id: str):
        current = store.get_current_annotation(doc_id)
        return current.to_json() if current else {"doc_id": doc_id, "revision": 0, "regions": []}

    @app.get("/documents/{doc_id}/history")
    def get_history(doc_id: str):
        return [r.to_json() for r in store.get_revision_history(doc_id)]

    @app.put("/documents/{doc_id}/annotation")
    def put_annotation(doc_id: str, payload: dict = Body(...)):
        revision = store.submit_annotation(
            session_id=payload.get("session_id", ""),
            doc_id=doc_id,
            region_payloads=payload.get("regions", []),
            mode=payload.get("mode", "fresh"),
        )
        return revision.to_json()

    @app.get("/analytics/summary")
    def analytics():
        return store.analytics_summary()

    @app.get("/analytics/sessions")
    def analytics_sessions():
        return [s.to_json() for s in sorted(store.sessions.values(), key=lambda s: s.started_at)]

    @app.get("/export")
    def export():
        import tempfile

        docs = store.export_corpus()
        with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as tmp:
            pass
        write_annotation_file(docs, tmp.name)
        content = Path(tmp.name).read_text(encoding="utf-8")
        Path(tmp.name).unlink()
        return Response(content=content, media_type="application/json")

    return app


def load_corpus_dir(store: AnnotationStore, corpus_dir: Path) -> None:
    """Import corpus_dir/annotations.json into the store if present."""
    annotations = corpus_dir / "annotations.json"
    if annotations.exists():
        store.register_documents(parse_annotation_file(annotations))
