from __future__ import annotations

import hashlib

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, NonNegativeInt, field_validator


class ChatRequest(BaseModel):
    """One chat-completion call: a system and a user message."""

    model_config = ConfigDict(frozen=True)

    model: str = Field(..., min_length=1)
    system: str = ""
    user: str = Field(..., min_length=1)
    temperature: NonNegativeFloat = 0.0

    @field_validator("user")
    @classmethod
    def _not_blank(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("user message must not be blank")
        return value

    @property
    def fingerprint(self) -> str:
        """Stable identity of the request, used to validate checkpoint records."""
        payload = "\x00".join([self.model, self.system, self.user, repr(self.temperature)])
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    content: str
    model: str
    latency_ms: NonNegativeInt = 0
    from_checkpoint: bool = False
