"""Stateless HTTP chat service over a loaded model snapshot.

The full dialogue history travels in each request; the server holds no session
state. The (bundle, checkpoint digest) pair lives in a single attribute, so a
hot swap is one assignment and concurrent readers see either the old or the
new snapshot, never a mix.
"""

from __future__ import annotations

import time
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, field_validator

from .bundle import ModelBundle
from .corpus import Utterance


class TurnIn(BaseModel):
    speaker: Literal["seeker", "recommender"]
    text: str

    @field_validator("text")
    @classmethod
    def text_not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("utterance text must be non-empty")
        return v


class ChatRequest(BaseModel):
    history: list[TurnIn] = Field(min_length=1)
    top_k: int = Field(default=5, ge=1, le=50)
    decode: Literal["greedy", "beam"] = "greedy"


class RecommendationOut(BaseModel):
    entity_id: str
    name: str
    year: int | None
    score: float


class ModelInfo(BaseModel):
    checkpoint: str
    profile: str


class ChatResponse(BaseModel):
    raw_response: str
    filled_response: str
    recommendations: list[RecommendationOut]
    model_info: ModelInfo


class HealthOut(BaseModel):
    model_loaded: bool
    checkpoint: str | None
    uptime_seconds: float


def create_app(
    bundle: ModelBundle | None = None,
    checkpoint_digest: str = "",
    allow_cors: bool = False,
) -> FastAPI:
    app = FastAPI(title="convrec chat service")
    app.state.snapshot = (bundle, checkpoint_digest)
    app.state.started = time.monotonic()

    if allow_cors:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
        )

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": list(e.get("loc", ())), "msg": str(e.get("msg", "")), "type": e.get("type", "")}
            for e in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.post("/api/chat", response_model=ChatResponse)
    def chat(req: ChatRequest):
        snapshot, digest = app.state.snapshot
        if snapshot is None:
            return JSONResponse(status_code=503, content={"detail": "no model loaded"})
        context = [Utterance(speaker=t.speaker, text=t.text) for t in req.history]
        result = snapshot.respond(context, top_k=req.top_k, strategy=req.decode)
        return ChatResponse(
            raw_response=result["raw_response"],
            filled_response=result["filled_response"],
            recommendations=[RecommendationOut(**r) for r in result["recommendations"]],
            model_info=ModelInfo(checkpoint=digest, profile=snapshot.config.profile),
        )

    @app.get("/api/health", response_model=HealthOut)
    def health() -> HealthOut:
        bundle_now, digest = app.state.snapshot
        return HealthOut(
            model_loaded=bundle_now is not None,
            checkpoint=digest or None,
            uptime_seconds=time.monotonic() - app.state.started,
        )

    @app.get("/schema")
    def schema() -> dict:
        return {
            "chat_request": ChatRequest.model_json_schema(),
            "chat_response": ChatResponse.model_json_schema(),
            "health": HealthOut.model_json_schema(),
        }

    return app


def swap_bundle(app: FastAPI, bundle: ModelBundle, checkpoint_digest: str) -> None:
    """Atomic snapshot replacement."""
    app.state.snapshot = (bundle, checkpoint_digest)
