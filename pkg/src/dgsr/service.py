"""HTTP inference service exposing steerable one-step SR under /v1.

Endpoints:
    POST /v1/infer     image (base64 JSON or multipart) + optional overrides
                       -> SR image (base64 PNG) plus the inference report
    POST /v1/estimate  image -> estimated degradation vector, no SR
    GET  /v1/health    bundle metadata and request counter

The loaded bundle is immutable; per-request state is isolated, so requests
may run concurrently.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from fastapi import APIRouter, FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from PIL import Image

from . import images
from .bundle import ModelBundle
from .data_synth import DegradationVector
from .errors import InputError
from .inference import InferenceRequest, super_resolve

DEFAULT_MAX_PIXELS = 1024 * 1024


class _HTTPError(Exception):
    def __init__(self, status: int, detail: str):
        self.status = status
        self.detail = detail


def _decode_image(data: bytes, max_pixels: int) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.width * im.height > max_pixels:
                raise _HTTPError(
                    413, f"image has {im.width * im.height} pixels, limit is {max_pixels}"
                )
            arr = np.asarray(im.convert("RGB"))
    except _HTTPError:
        raise
    except Exception as exc:
        raise _HTTPError(400, f"could not decode image: {exc}") from exc
    return images.dequantize(arr)


async def _parse_payload(request: Request, max_pixels: int) -> tuple[np.ndarray, dict]:
    """Accept either JSON {image_b64, ...fields} or multipart {image, ...fields}."""
    content_type = request.headers.get("content-type", "")
    if content_type.startswith("multipart/form-data"):
        form = await request.form()
        upload = form.get("image")
        if upload is None:
            raise _HTTPError(400, "multipart form needs an 'image' file field")
        data = await upload.read()
        fields = {k: v for k, v in form.items() if k != "image"}
    else:
        try:
            body = await request.json()
        except Exception as exc:
            raise _HTTPError(400, f"malformed JSON body: {exc}") from exc
        if not isinstance(body, dict) or "image_b64" not in body:
            raise _HTTPError(400, "JSON body needs an 'image_b64' field")
        try:
            data = base64.b64decode(body["image_b64"], validate=True)
        except Exception as exc:
            raise _HTTPError(400, f"invalid base64 image: {exc}") from exc
        fields = {k: v for k, v in body.items() if k != "image_b64"}
    return _decode_image(data, max_pixels), fields


def _parse_float(fields: dict, key: str) -> float | None:
    if key not in fields or fields[key] is None or fields[key] == "":
        return None
    try:
        return float(fields[key])
    except (TypeError, ValueError) as exc:
        raise _HTTPError(400, f"field {key!r} must be a number") from exc


def _encode_png(img: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(images.quantize(img), mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def create_app(
    bundle: ModelBundle | None, max_pixels: int = DEFAULT_MAX_PIXELS
) -> FastAPI:
    app = FastAPI(title="dgsr inference service")
    app.state.bundle = bundle
    app.state.requests = 0
    router = APIRouter(prefix="/v1")

    def _require_bundle() -> ModelBundle:
        if app.state.bundle is None:
            raise _HTTPError(503, "no model bundle loaded")
        return app.state.bundle

    @app.exception_handler(_HTTPError)
    async def _http_error(_req, exc: _HTTPError):
        return JSONResponse(status_code=exc.status, content={"detail": exc.detail})

    @router.get("/health")
    async def health():
        b = _require_bundle()
        return {
            "status": "ok",
            "bundle": b.meta,
            "scale": b.scale,
            "requests": app.state.requests,
        }

    @router.post("/estimate")
    async def estimate(request: Request):
        b = _require_bundle()
        app.state.requests += 1
        lr, _ = await _parse_payload(request, max_pixels)
        from . import data_synth
        from .degest import estimate as estimate_d

        lr_up = data_synth.upscale_lr(lr, b.scale)
        d = estimate_d(b.estimator, lr_up)
        return {"d_n": d.d_n, "d_b": d.d_b}

    @router.post("/infer")
    async def infer(request: Request):
        b = _require_bundle()
        app.state.requests += 1
        lr, fields = await _parse_payload(request, max_pixels)

        lambda_cfg = _parse_float(fields, "lambda_cfg")
        d_n = _parse_float(fields, "d_n")
        d_b = _parse_float(fields, "d_b")
        noise = _parse_float(fields, "noise_sigma_start")
        seed = fields.get("seed")
        if seed is not None and seed != "":
            try:
                seed = int(seed)
            except (TypeError, ValueError) as exc:
                raise _HTTPError(400, "field 'seed' must be an integer") from exc
        else:
            seed = None

        d_override = None
        d_estimated = None
        if d_n is not None and d_b is not None:
            d_override = DegradationVector(d_n=d_n, d_b=d_b)
        elif d_n is not None or d_b is not None:
            # partial override: estimate, then replace the provided component
            from . import data_synth
            from .degest import estimate as estimate_d

            est = estimate_d(b.estimator, data_synth.upscale_lr(lr, b.scale))
            d_estimated = est
            d_override = DegradationVector(
                d_n=d_n if d_n is not None else est.d_n,
                d_b=d_b if d_b is not None else est.d_b,
            )

        req = InferenceRequest(
            lr=lr,
            lambda_cfg=lambda_cfg if lambda_cfg is not None else 1.1,
            d_override=d_override,
            noise_sigma_start=noise if noise is not None else 0.0,
            seed=seed,
        )
        try:
            sr, report = super_resolve(b, req)
        except InputError as exc:
            raise _HTTPError(400, str(exc)) from exc
        if d_estimated is not None:
            report["d_estimated"] = [d_estimated.d_n, d_estimated.d_b]
            report["estimator_calls"] = 1
        return {"image_b64": _encode_png(sr), "report": report}

    app.include_router(router)

    ui_dist = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if ui_dist.is_dir():
        app.mount("/", StaticFiles(directory=ui_dist, html=True), name="ui")
    return app


def serve(bundle: ModelBundle, port: int = 8000, host: str = "127.0.0.1") -> None:
    import uvicorn

    uvicorn.run(create_app(bundle), host=host, port=port, log_level="warning")
