"""HTTP render service.

Endpoints: GET /scene/meta, POST /render (PNG bytes), POST /env (upload a
Radiance .hdr, returns its id), GET /envs. All renders are read-only
against the loaded scene snapshot and run in a worker thread, so
concurrent requests are safe; environment uploads swap the lighting table
atomically under a lock.

Error contract: 400 malformed body, 404 unknown environment id, 422
invalid pose.
"""

from __future__ import annotations

import json
import socket
import threading
from pathlib import Path

import torch
from fastapi import FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from starlette.concurrency import run_in_threadpool

from .envlight import EnvironmentMap
from .imageio import load_hdr
from .rasterizer import RENDER_MODES
from .scene import scene_bounding_sphere
from .viewing import (
    MaterialOverrides,
    SceneBundle,
    load_bundle,
    pose_to_camera,
    render_png_bytes,
)


def _parse_overrides(doc: object) -> MaterialOverrides:
    if doc is None:
        return MaterialOverrides()
    if not isinstance(doc, dict):
        raise HTTPException(400, "overrides must be an object")
    allowed = {"delta_roughness", "delta_metallic", "albedo_tint"}
    unknown = set(doc) - allowed
    if unknown:
        raise HTTPException(400, f"unknown override fields: {sorted(unknown)}")
    try:
        dr = float(doc.get("delta_roughness", 0.0))
        dm = float(doc.get("delta_metallic", 0.0))
        tint = doc.get("albedo_tint", (1.0, 1.0, 1.0))
        tint = tuple(float(x) for x in tint)
    except (TypeError, ValueError) as exc:
        raise HTTPException(400, f"malformed overrides: {exc}") from exc
    if len(tint) != 3:
        raise HTTPException(400, "albedo_tint must be a 3-vector")
    values = (dr, dm, *tint)
    if not all(abs(v) < 1e6 and v == v for v in values):
        raise HTTPException(400, "override values must be finite")
    return MaterialOverrides(delta_roughness=dr, delta_metallic=dm, albedo_tint=tint)


def create_app(bundle: SceneBundle, static_dir: str | Path | None = None) -> FastAPI:
    """Build the FastAPI app around an immutable scene bundle."""
    app = FastAPI(title="gir render service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    env_lock = threading.Lock()
    env_counter = {"next": 1}
    center, radius = scene_bounding_sphere(bundle.scene)

    @app.get("/scene/meta")
    def scene_meta() -> dict:
        default_env = bundle.envs["default"][0]
        return {
            "num_gaussians": len(bundle.scene),
            "bounds": {
                "center": [float(x) for x in center],
                "radius": float(radius),
            },
            "env_resolution": [
                int(default_env.data.shape[0]),
                int(default_env.data.shape[1]),
            ],
            "modes": list(RENDER_MODES),
            "envs": sorted(bundle.envs),
        }

    @app.post("/render")
    async def render_endpoint(request: Request) -> Response:
        raw = await request.body()
        try:
            body = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise HTTPException(400, f"malformed JSON body: {exc}") from exc
        if not isinstance(body, dict):
            raise HTTPException(400, "request body must be a JSON object")
        mode = body.get("mode", "shaded")
        if mode not in RENDER_MODES:
            raise HTTPException(400, f"unknown render mode {mode!r}")
        env_id = body.get("env", "default")
        if env_id not in bundle.envs:
            raise HTTPException(404, f"unknown environment id {env_id!r}")
        overrides = _parse_overrides(body.get("overrides"))
        if "pose" not in body:
            raise HTTPException(422, "missing pose")
        try:
            camera = pose_to_camera(body["pose"])
        except (ValueError, TypeError) as exc:
            raise HTTPException(422, f"invalid pose: {exc}") from exc
        png = await run_in_threadpool(
            render_png_bytes, bundle, camera, mode, env_id, overrides
        )
        return Response(content=png, media_type="image/png")

    @app.post("/env")
    async def upload_env(request: Request) -> dict:
        raw = await request.body()
        try:
            data = torch.from_numpy(load_hdr(raw))
            env = EnvironmentMap(data=data)
        except ValueError as exc:
            raise HTTPException(400, f"invalid environment map: {exc}") from exc
        mip = await run_in_threadpool(bundle.build_mip, env)
        with env_lock:
            env_id = f"env-{env_counter['next']}"
            env_counter["next"] += 1
            bundle.envs[env_id] = (env, mip)
        return {
            "id": env_id,
            "width": int(env.data.shape[1]),
            "height": int(env.data.shape[0]),
        }

    @app.get("/envs")
    def list_envs() -> dict:
        out = []
        for env_id in sorted(bundle.envs):
            env = bundle.envs[env_id][0]
            out.append(
                {
                    "id": env_id,
                    "width": int(env.data.shape[1]),
                    "height": int(env.data.shape[0]),
                }
            )
        return {"envs": out}

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="viewer")
    return app


def serve(
    checkpoint_dir: str | Path,
    host: str = "127.0.0.1",
    port: int = 8000,
    static_dir: str | Path | None = None,
) -> None:
    """Load the checkpoint and run the service; port 0 picks an ephemeral one."""
    import uvicorn

    bundle = load_bundle(checkpoint_dir)
    app = create_app(bundle, static_dir=static_dir)
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    sock.bind((host, port))
    bound_port = sock.getsockname()[1]
    print(f"serving on http://{host}:{bound_port}", flush=True)
    config = uvicorn.Config(app, log_level="warning")
    uvicorn.Server(config).run(sockets=[sock])
