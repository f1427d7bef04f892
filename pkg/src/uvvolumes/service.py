"""HTTP + WebSocket service around the render runtime.

HTTP gives synchronous single-frame access and state mutation; the
WebSocket (subprotocol ``uvvol.v1``) streams frames and coalesces rapid
edits (latest wins).  One render runs at a time per model; sessions hold
independent EditStates.  Wire schemas are documented in docs/protocol.md.
"""

from __future__ import annotations

import asyncio
import io
import json
import threading
from dataclasses import replace

import numpy as np
from fastapi import FastAPI, Request, Response, WebSocket, WebSocketDisconnect

from . import runtime as rt
from .model import N_PARTS, Model
from .scene import N_JOINTS, POSE_BOUND, SHAPE_BOUNDS, orbit_camera, pose_body

WS_PROTOCOL = "uvvol.v1"


def _encode_png(rgb):
    from PIL import Image

    arr = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _decode_png(data):
    from PIL import Image

    img = Image.open(io.BytesIO(data))
    img.load()
    return np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0


def _json_error(status, message):
    return Response(
        content=json.dumps({"error": message}), status_code=status,
        media_type="application/json",
    )


def _parse_vector(payload, key, length):
    """(vector, error response): checks presence, type, and length -> 400."""
    if not isinstance(payload, dict) or key not in payload:
        return None, _json_error(400, f"body must be a JSON object with {key!r}")
    raw = payload[key]
    if not isinstance(raw, list) or len(raw) != length:
        return None, _json_error(400, f"{key!r} must be a list of length {length}")
    try:
        return np.asarray(raw, dtype=np.float64), None
    except (TypeError, ValueError):
        return None, _json_error(400, f"{key!r} must contain numbers")


def default_state(model: Model, width, height) -> rt.EditState:
    from .scene import BodyConfig

    config = BodyConfig()
    camera = orbit_camera(pose_body(config), 0.0, width, height)
    return rt.EditState(
        pose=config.pose, shape=config.shape, camera=camera,
        background=model.config.background,
    )


class _Session:
    _next_id = 0

    def __init__(self, state: rt.EditState):
        _Session._next_id += 1
        self.id = _Session._next_id
        self.state = state
        self.send_uv = False
        self.send_timing = False
        self.precomputed = True
        self.last_frame_id = 0
        self.dirty = asyncio.Event()
        self.dirty.set()        # first frame on connect
        self.pending_texture_part = None


def create_app(model: Model, frame_width=96, frame_height=96) -> FastAPI:
    app = FastAPI(title="uvvolumes edit service")
    engine = rt.RenderEngine(model)
    render_lock = threading.Lock()   # one render in flight per model
    shared = {"state": default_state(model, frame_width, frame_height)}

    def render(state, with_uv=False, with_timing=False, precomputed=True):
        with render_lock:
            if not precomputed:
                engine.invalidate()
            return engine.render_frame(state, with_uv=with_uv, with_timing=with_timing)

    # -- HTTP -------------------------------------------------------------

    @app.get("/healthz")
    def healthz():
        return Response(content="ok", media_type="text/plain")

    @app.get("/state")
    def get_state():
        s = shared["state"]
        return {
            "pose": s.pose.tolist(),
            "shape": s.shape.tolist(),
            "sh_mode": s.sh_mode,
            "overridden_parts": sorted(s.texture_override),
            "digest": s.digest(),
            "frame_size": [s.camera.width, s.camera.height],
            "joints": N_JOINTS,
            "parts": N_PARTS,
            "pose_bound": POSE_BOUND,
            "shape_bounds": list(SHAPE_BOUNDS),
        }

    @app.post("/pose")
    async def post_pose(request: Request):
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return _json_error(400, "malformed JSON")
        pose, err = _parse_vector(payload, "pose", N_JOINTS)
        if err:
            return err
        try:
            shared["state"] = rt.repose(shared["state"], pose)
        except ValueError as exc:
            return _json_error(422, str(exc))
        return {"digest": shared["state"].digest()}

    @app.post("/shape")
    async def post_shape(request: Request):
        try:
            payload = await request.json()
        except json.JSONDecodeError:
            return _json_error(400, "malformed JSON")
        shape, err = _parse_vector(payload, "shape", N_PARTS)
        if err:
            return err
        try:
            shared["state"] = rt.reshape_body(shared["state"], shape)
        except ValueError as exc:
            return _json_error(422, str(exc))
        return {"digest": shared["state"].digest()}

    @app.post("/texture/{part}")
    async def post_texture(part: int, request: Request):
        if not 1 <= part <= N_PARTS:
            return _json_error(404, f"unknown part id {part} (expected 1..{N_PARTS})")
        data = await request.body()
        try:
            img = _decode_png(data)
        except Exception:
            return _json_error(400, "texture upload must be a decodable PNG")
        shared["state"] = rt.retexture(shared["state"], {part: img})
        return {"digest": shared["state"].digest()}

    @app.get("/frame")
    def get_frame(uv: int = 0, raw: int = 0, timing: int = 0):
        packet = render(shared["state"], with_uv=bool(uv), with_timing=bool(timing))
        headers = {"X-Frame-Id": str(packet.frame_id)}
        if timing and packet.timing:
            headers["X-Timing"] = json.dumps(packet.timing.to_dict())
        if raw:
            h, w = packet.rgb.shape[:2]
            headers["X-Frame-Shape"] = f"{h}x{w}x3"
            body = packet.rgb.astype("<f4").tobytes()
            return Response(content=body, media_type="application/octet-stream",
                            headers=headers)
        return Response(content=_encode_png(packet.rgb), media_type="image/png",
                        headers=headers)

    # -- WebSocket ---------------------------------------------------------

    def _apply_message(session, msg, binary=None):
        """One wire message -> new session state; returns an error string or None."""
        kind = msg.get("type")
        payload = msg.get("payload", {})
        if kind == "pose":
            pose = np.asarray(payload.get("pose", []), dtype=np.float64)
            if pose.shape != (N_JOINTS,):
                return f"pose must have length {N_JOINTS}"
            session.state = rt.repose(session.state, pose)
        elif kind == "shape":
            shape = np.asarray(payload.get("shape", []), dtype=np.float64)
            if shape.shape != (N_PARTS,):
                return f"shape must have length {N_PARTS}"
            session.state = rt.reshape_body(session.state, shape)
        elif kind == "camera":
            body = pose_body(session.state.body_config())
            cam = orbit_camera(
                body,
                float(payload.get("azimuth", 0.0)),
                int(payload.get("width", session.state.camera.width)),
                int(payload.get("height", session.state.camera.height)),
                elevation_deg=float(payload.get("elevation_deg", 8.0)),
                distance=payload.get("distance"),
            )
            session.state = replace(session.state, camera=cam)
        elif kind == "texture_meta":
            part = int(payload.get("part", 0))
            if not 1 <= part <= N_PARTS:
                return f"unknown part id {part} (expected 1..{N_PARTS})"
            session.pending_texture_part = part
            return None     # binary follow-up carries the pixels; no render yet
        elif kind == "mode":
            if "sh" in payload:
                session.state = replace(session.state, sh_mode=bool(payload["sh"]))
            if "uv" in payload:
                session.send_uv = bool(payload["uv"])
            if "timing" in payload:
                session.send_timing = bool(payload["timing"])
            if "precomputed" in payload:
                session.precomputed = bool(payload["precomputed"])
        else:
            return f"unknown message type {kind!r}"
        session.dirty.set()
        return None

    async def _sender(ws, session):
        loop = asyncio.get_running_loop()
        while True:
            await session.dirty.wait()
            session.dirty.clear()           # coalesce: render the latest state
            state = session.state
            packet = await loop.run_in_executor(
                None, lambda: render(state, session.send_uv, session.send_timing,
                                     session.precomputed)
            )
            session.last_frame_id += 1
            meta = {"type": "frame", "id": session.last_frame_id,
                    "digest": state.digest()}
            if session.send_timing and packet.timing:
                meta["timing"] = packet.timing.to_dict()
            if session.send_uv and packet.uv_image is not None:
                meta["uv"] = True
            await ws.send_text(json.dumps(meta))
            await ws.send_bytes(_encode_png(packet.rgb))
            if session.send_uv and packet.uv_image is not None:
                await ws.send_bytes(_encode_png(rt.uv_false_color(packet.uv_image)))

    @app.websocket("/ws")
    async def ws_stream(ws: WebSocket):
        await ws.accept(subprotocol=WS_PROTOCOL)
        session = _Session(replace(shared["state"]))
        sender = asyncio.create_task(_sender(ws, session))
        try:
            while True:
                message = await ws.receive()
                if message.get("type") == "websocket.disconnect":
                    break
                if message.get("bytes") is not None:
                    if session.pending_texture_part is None:
                        await ws.send_text(json.dumps(
                            {"type": "error", "message": "binary without texture_meta"}
                        ))
                        continue
                    try:
                        img = _decode_png(message["bytes"])
                    except Exception:
                        await ws.send_text(json.dumps(
                            {"type": "error", "message": "bad PNG payload"}
                        ))
                        session.pending_texture_part = None
                        continue
                    session.state = rt.retexture(
                        session.state, {session.pending_texture_part: img}
                    )
                    session.pending_texture_part = None
                    session.dirty.set()
                    continue
                try:
                    msg = json.loads(message.get("text") or "")
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        {"type": "error", "message": "malformed JSON"}
                    ))
                    continue
                try:
                    err = _apply_message(session, msg)
                except ValueError as exc:
                    err = str(exc)
                if err:
                    await ws.send_text(json.dumps({"type": "error", "message": err}))
        except WebSocketDisconnect:
            pass
        finally:
            sender.cancel()

    # -- static viewer bundle (optional) ------------------------------------

    import os

    dist = os.path.join(os.path.dirname(__file__), "..", "..", "frontend", "dist")
    dist = os.path.abspath(dist)
    if os.path.isdir(dist):
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=dist, html=True), name="viewer")

    return app
