"""Versioned HTTP/JSON surface over a ChatEngine, plus the bundled sanity UI.

All API routes live under /v1. Engine failures map onto status codes:
unknown session/user/attribute -> 404, malformed requests -> 400, and a
generation failure -> 500 (the engine guarantees the session was left
consistent). When a compiled UI bundle ships with the package it is served
at /ui.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI
from fastapi.responses import JSONResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..corpus import Demographics
from .engine import (
    BadRequest,
    ChatEngine,
    GenerationFailed,
    ServiceError,
    UnknownAttribute,
    UnknownSession,
    UnknownUser,
)

STATIC_DIR = Path(__file__).parent / "static"

_STATUS = {
    UnknownSession: 404,
    UnknownUser: 404,
    UnknownAttribute: 404,
    BadRequest: 400,
    GenerationFailed: 500,
}


class CreateSessionBody(BaseModel):
    user_id: str
    gender: str | None = None
    age_band: str | None = None


class MessageBody(BaseModel):
    text: str
    force_rtl: str | None = None


class PersonaBody(BaseModel):
    text: str
    id: str | None = None


def build_app(engine: ChatEngine) -> FastAPI:
    """The FastAPI app for one engine instance."""
    app = FastAPI(title="wwh-dialogue service", docs_url=None, redoc_url=None)

    @app.exception_handler(ServiceError)
    async def _service_error(request, exc: ServiceError):
        status = 500
        for klass, code in _STATUS.items():
            if isinstance(exc, klass):
                status = code
                break
        return JSONResponse(status_code=status, content={"detail": str(exc)})

    @app.get("/v1/healthz")
    def healthz():
        return engine.health()

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody):
        demo = None
        if body.gender is not None or body.age_band is not None:
            demo = Demographics(
                gender=body.gender or "unknown", age_band=body.age_band or "unknown"
            )
        session_id = engine.create_session(body.user_id, demographics=demo)
        return {"session_id": session_id, "user_id": body.user_id}

    @app.post("/v1/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        result = engine.post_message(session_id, body.text, force_rtl=body.force_rtl)
        return result.as_obj()

    @app.get("/v1/sessions/{session_id}/log")
    def session_log(session_id: str):
        log = engine.session_log(session_id)
        return {
            "session_id": session_id,
            "user_id": engine.session_user(session_id),
            "turns": log,
        }

    @app.get("/v1/users/{user_id}/personas")
    def list_personas(user_id: str):
        attrs = engine.list_personas(user_id)
        return {"user_id": user_id, "personas": [{"id": a.id, "text": a.text} for a in attrs]}

    @app.post("/v1/users/{user_id}/personas")
    def add_persona(user_id: str, body: PersonaBody):
        attr = engine.add_persona(user_id, body.text, attr_id=body.id)
        return {"id": attr.id, "text": attr.text}

    @app.delete("/v1/users/{user_id}/personas/{attr_id}")
    def delete_persona(user_id: str, attr_id: str):
        removed = engine.delete_persona(user_id, attr_id)
        return {"deleted": removed.id}

    if (STATIC_DIR / "index.html").is_file():
        app.mount("/ui", StaticFiles(directory=STATIC_DIR, html=True), name="ui")

        @app.get("/")
        def root():
            return RedirectResponse(url="/ui/")

    return app
