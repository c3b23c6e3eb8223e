"""HTTP session service: owns the pipeline state machine and pushes
rendering updates over a server-sent-event channel.

State phases: empty -> volume_loaded -> trained -> interactive. Mutating
requests serialize on a per-session lock and either complete fully or
leave the session untouched; every logged event carries a monotonically
increasing revision, and subscribers can replay the log from any point.
"""

from __future__ import annotations

import base64
import json
import queue
import threading
import uuid
from dataclasses import dataclass, field as dc_field
from typing import Any

from fastapi import Body, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse

from . import volume as volmod
from .backend import BACKEND_NAME
from .errors import (
    OverlappingSelectionError,
    PipelineError,
    SizeMismatchError,
    UnknownGroupError,
    UnknownNodeError,
)
from .features import DEFAULT_CHANNEL_WEIGHTS, build_feature_field, default_stride, sample_features
from .groups import GroupRegistry, build_color_volume
from .lattice import TrainingParams, build_lattice
from .render import Camera, RenderSettings, default_camera, png_bytes, raycast
from .som import assign_voxels, compute_umatrix, quantization_error, topographic_error, train

HEARTBEAT_SECONDS = 2.0

PHASES = ("empty", "volume_loaded", "trained", "interactive")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _error_response(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


@dataclass
class Session:
    id: str
    phase: str = "empty"
    volume: Any = None
    field: Any = None
    lattice: Any = None
    umatrix: Any = None
    assignment: Any = None
    registry: GroupRegistry = dc_field(default_factory=GroupRegistry)
    color_volume: Any = None
    camera: Camera | None = None
    settings: RenderSettings = dc_field(default_factory=lambda: RenderSettings(width=256, height=256))
    train_meta: dict = dc_field(default_factory=dict)
    revision: int = 0
    events: list[dict] = dc_field(default_factory=list)
    lock: threading.Lock = dc_field(default_factory=threading.Lock)
    subscribers: list[queue.SimpleQueue] = dc_field(default_factory=list)

    def publish(self, event_type: str, payload: dict) -> dict:
        """Append an event to the log and fan it out; call under lock."""
        self.revision += 1
        event = {"revision": self.revision, "event_type": event_type, "payload": payload}
        self.events.append(event)
        for q in self.subscribers:
            q.put(event)
        return event

    def group_payloads(self) -> list[dict]:
        return [
            {
                "id": g.id,
                "node_ids": [int(n) for n in g.node_ids],
                "variance": g.variance,
                "opacity": g.opacity,
                "hue": g.hue,
                "voxel_count": g.voxel_count,
            }
            for g in self.registry.groups
        ]

    def lattice_payload(self) -> dict:
        return {
            "level": self.lattice.level,
            "node_count": self.lattice.n_nodes,
            "seed": self.lattice.seed,
            "positions": self.lattice.positions.tolist(),
            "adjacency": [n.tolist() for n in self.lattice.adjacency],
            "umatrix": {
                "values": self.umatrix.values.tolist(),
                "normalized": self.umatrix.normalized.tolist(),
            },
            **self.train_meta,
        }

    def render_frame(self, camera: Camera | None = None, settings: RenderSettings | None = None) -> bytes:
        cv = self.color_volume
        if cv is None:
            cv = build_color_volume(self.registry.groups, self.volume, self.field)
        img = raycast(cv, self.volume, camera or self.camera, settings or self.settings)
        return png_bytes(img)


def _require_phase(session: Session, minimum: str) -> None:
    if PHASES.index(session.phase) < PHASES.index(minimum):
        raise ApiError(409, "WrongPhase", f"requires phase >= {minimum}, currently {session.phase}")


def _load_volume_from_payload(payload: dict):
    if "phantom" in payload:
        spec = dict(payload["phantom"])
        kind = spec.pop("kind", None)
        if not kind:
            raise ApiError(400, "MalformedMeta", "phantom needs a 'kind'")
        dims = tuple(int(v) for v in spec.pop("dims", (16, 16, 16)))
        try:
            if kind == "demo-ct":
                return volmod.make_demo_ct(dims)
            return volmod.make_phantom(kind, dims=dims, **spec)
        except (ValueError, TypeError) as exc:
            raise ApiError(400, "MalformedMeta", str(exc)) from exc
    if "raw_path" in payload:
        try:
            return volmod.load_raw_file(payload["raw_path"], payload.get("meta_path"))
        except SizeMismatchError as exc:
            raise ApiError(422, "SizeMismatch", str(exc)) from exc
        except PipelineError as exc:
            raise ApiError(400, "MalformedMeta", str(exc)) from exc
        except ValueError as exc:
            raise ApiError(400, "MalformedMeta", str(exc)) from exc
    raise ApiError(400, "MalformedMeta", "volume payload needs 'raw_path' or 'phantom'")


def create_app() -> FastAPI:
    app = FastAPI(title="somdvr session service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    sessions: dict[str, Session] = {}

    @app.exception_handler(ApiError)
    async def _api_error(request, exc: ApiError):
        return _error_response(exc.status, exc.code, exc.message)

    def _session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise ApiError(404, "UnknownSession", f"no session {session_id}")
        return session

    @app.get("/health")
    def health():
        return {"status": "ok", "backend": BACKEND_NAME}

    @app.post("/session", status_code=201)
    def create_session():
        session = Session(id=uuid.uuid4().hex[:12])
        sessions[session.id] = session
        return {"id": session.id, "phase": session.phase, "revision": session.revision}

    @app.get("/session/{session_id}")
    def get_session(session_id: str):
        session = _session(session_id)
        return {
            "id": session.id,
            "phase": session.phase,
            "revision": session.revision,
            "groups": session.group_payloads(),
            "dims": list(session.volume.dims) if session.volume else None,
            "camera": session.camera.to_dict() if session.camera else None,
            "settings": session.settings.to_dict(),
        }

    @app.post("/session/{session_id}/volume")
    def load_volume(session_id: str, payload: dict = Body(...)):
        session = _session(session_id)
        with session.lock:
            if session.phase != "empty":
                raise ApiError(409, "Conflict", "volume already loaded; reset first")
            vol = _load_volume_from_payload(payload)
            weights = payload.get("feature_weights", DEFAULT_CHANNEL_WEIGHTS)
            try:
                fld = build_feature_field(vol, tuple(float(w) for w in weights))
                if "render_settings" in payload:
                    session.settings = RenderSettings.from_dict(payload["render_settings"])
            except (ValueError, TypeError) as exc:
                raise ApiError(400, "MalformedMeta", str(exc)) from exc
            session.volume = vol
            session.field = fld
            session.camera = default_camera(vol)
            session.phase = "volume_loaded"
            stats = {
                "channels": [
                    {"name": name, "min": lo, "max": hi}
                    for name, (lo, hi) in zip(
                        ("px", "py", "pz", "intensity", "grad_mag", "second_deriv"),
                        fld.norm_bounds,
                    )
                ],
                "weights": [float(w) for w in fld.weights],
            }
            response = {
                "dims": list(vol.dims),
                "spacing": list(vol.meta.spacing),
                "n_voxels": vol.meta.n_voxels,
                "feature_stats": stats,
            }
            session.publish("volume_loaded", {"dims": list(vol.dims)})
            return response

    @app.post("/session/{session_id}/train")
    def train_session(session_id: str, payload: dict = Body(default={})):
        session = _session(session_id)
        with session.lock:
            _require_phase(session, "volume_loaded")
            try:
                level = int(payload.get("level", 3))
                stride = payload.get("stride")
                if stride is None:
                    stride = default_stride(session.volume.meta.n_voxels)
                params = TrainingParams(
                    epochs=int(payload.get("epochs", 20)),
                    eta0=float(payload.get("eta0", 0.5)),
                    eta_min=float(payload.get("eta_min", 0.01)),
                    sigma0=float(payload.get("sigma0", 0.7853981633974483)),
                    sigma_min=float(payload.get("sigma_min", 0.02)),
                    seed=int(payload.get("seed", 0)),
                    stride=int(stride),
                )
                lattice = build_lattice(level, seed=params.seed)
            except (ValueError, TypeError) as exc:
                raise ApiError(400, "InvalidParams", str(exc)) from exc
            _, samples = sample_features(session.field, params.stride, params.seed)
            train(lattice, samples, params, channel_weights=session.field.weights)
            umatrix = compute_umatrix(lattice, channel_weights=session.field.weights)
            assignment = assign_voxels(lattice, session.field)
            qe = quantization_error(lattice, samples, channel_weights=session.field.weights)
            te = topographic_error(lattice, samples, channel_weights=session.field.weights)
            session.lattice = lattice
            session.umatrix = umatrix
            session.assignment = assignment
            session.registry = GroupRegistry()
            session.color_volume = None
            session.train_meta = {
                "params": params.to_dict(),
                "sample_count": int(samples.shape[0]),
                "quantization_error": qe,
                "topographic_error": te,
            }
            session.phase = "trained"
            session.publish(
                "trained",
                {"node_count": lattice.n_nodes, "quantization_error": qe, "topographic_error": te},
            )
            return session.lattice_payload()

    @app.get("/session/{session_id}/lattice")
    def get_lattice(session_id: str):
        session = _session(session_id)
        _require_phase(session, "trained")
        return {**session.lattice_payload(), "groups": session.group_payloads()}

    @app.post("/session/{session_id}/groups", status_code=201)
    def define_group_endpoint(session_id: str, payload: dict = Body(...)):
        session = _session(session_id)
        with session.lock:
            _require_phase(session, "trained")
            node_ids = payload.get("node_ids")
            if not isinstance(node_ids, list) or not node_ids:
                raise ApiError(400, "InvalidParams", "node_ids must be a non-empty list")
            trial = session.registry.clone()
            try:
                trial.define(node_ids, session.assignment, session.volume)
            except OverlappingSelectionError as exc:
                raise ApiError(409, "OverlappingSelection", str(exc)) from exc
            except UnknownNodeError as exc:
                raise ApiError(404, "UnknownNode", str(exc)) from exc
            except ValueError as exc:
                raise ApiError(400, "InvalidParams", str(exc)) from exc
            color_volume = build_color_volume(trial.groups, session.volume, session.field)
            frame = png_bytes(
                raycast(color_volume, session.volume, session.camera, session.settings)
            )
            session.registry = trial
            session.color_volume = color_volume
            session.phase = "interactive"
            groups = session.group_payloads()
            event = session.publish(
                "frame",
                {"png": base64.b64encode(frame).decode("ascii"), "groups": groups},
            )
            return {"groups": groups, "revision": event["revision"]}

    @app.delete("/session/{session_id}/groups/{group_id}")
    def delete_group_endpoint(session_id: str, group_id: int):
        session = _session(session_id)
        with session.lock:
            _require_phase(session, "trained")
            trial = session.registry.clone()
            try:
                trial.delete(group_id)
            except UnknownGroupError as exc:
                raise ApiError(404, "UnknownGroup", str(exc)) from exc
            color_volume = build_color_volume(trial.groups, session.volume, session.field)
            frame = png_bytes(
                raycast(color_volume, session.volume, session.camera, session.settings)
            )
            session.registry = trial
            session.color_volume = color_volume
            groups = session.group_payloads()
            event = session.publish(
                "frame",
                {"png": base64.b64encode(frame).decode("ascii"), "groups": groups},
            )
            return {"groups": groups, "revision": event["revision"]}

    @app.post("/session/{session_id}/render")
    def render_endpoint(session_id: str, payload: dict = Body(default={})):
        session = _session(session_id)
        with session.lock:
            _require_phase(session, "trained")
            try:
                camera = Camera.from_dict(payload["camera"]) if "camera" in payload else None
                settings = (
                    RenderSettings.from_dict(payload["settings"]) if "settings" in payload else None
                )
                png = session.render_frame(camera, settings)
            except (KeyError, ValueError, TypeError, PipelineError) as exc:
                raise ApiError(400, "InvalidParams", str(exc)) from exc
        return Response(content=png, media_type="image/png")

    @app.post("/session/{session_id}/reset")
    def reset_session(session_id: str):
        session = _session(session_id)
        with session.lock:
            session.volume = None
            session.field = None
            session.lattice = None
            session.umatrix = None
            session.assignment = None
            session.registry = GroupRegistry()
            session.color_volume = None
            session.camera = None
            session.train_meta = {}
            session.phase = "empty"
            session.publish("reset", {})
            return {"id": session.id, "phase": session.phase, "revision": session.revision}

    @app.get("/session/{session_id}/events")
    def events_endpoint(session_id: str, since: int = 0, until: int | None = None):
        """SSE stream of logged events with revision > since; heartbeats
        fill idle gaps. With `until`, the stream ends once the event at
        that revision has been delivered (bounded replay)."""
        session = _session(session_id)

        def stream():
            q: queue.SimpleQueue = queue.SimpleQueue()
            with session.lock:
                backlog = [e for e in session.events if e["revision"] > since]
                session.subscribers.append(q)
            try:
                for event in backlog:
                    yield _sse_format(event)
                    if until is not None and event["revision"] >= until:
                        return
                if until is not None and since >= until:
                    return
                while True:
                    try:
                        event = q.get(timeout=HEARTBEAT_SECONDS)
                    except queue.Empty:
                        beat = {
                            "revision": session.revision,
                            "event_type": "heartbeat",
                            "payload": {},
                        }
                        yield _sse_format(beat)
                        continue
                    yield _sse_format(event)
                    if until is not None and event["revision"] >= until:
                        return
            finally:
                with session.lock:
                    if q in session.subscribers:
                        session.subscribers.remove(q)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app


def _sse_format(event: dict) -> str:
    return f"id: {event['revision']}\ndata: {json.dumps(event)}\n\n"


app = create_app()
