"""Validated run configuration and the run manifest."""

from __future__ import annotations

import hashlib
from typing import Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, PositiveInt, field_validator, model_validator

PANEL_SIZE = 3
GATEWAY_ROLES = ("claimgen", "screener", "converter", "extractor", "filter", "verifier")

DEFAULT_PANEL = {
    "gpt-4o-mini": {"model": "gpt-4o-mini"},
    "llama-3.3-70b": {"model": "meta-llama/Llama-3.3-70B-Instruct"},
    "o3-mini": {"model": "o3-mini"},
}


class RoleSettings(BaseModel):
    """Chat backend settings for one role."""

    model_config = ConfigDict(extra="forbid")

    model: str = "gpt-4o-mini"
    base_url: Optional[str] = None
    api_key_env: str = "OPENAI_API_KEY"
    temperature: NonNegativeFloat = 0.0
    timeout: float = Field(60.0, gt=0)
    max_attempts: PositiveInt = 5
    base_delay: NonNegativeFloat = 0.25
    parallelism: PositiveInt = 4


class BootstrapSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iterations: PositiveInt = 2000
    level: float = Field(0.95, gt=0, lt=1)
    seed: int = 0


class NcbiSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    eutils_url: str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils"
    idconv_url: str = "https://www.ncbi.nlm.nih.gov/pmc/utils"
    api_key_env: str = "NCBI_API_KEY"
    timeout: float = Field(30.0, gt=0)
    max_attempts: PositiveInt = 5
    base_delay: NonNegativeFloat = 0.25


class BiocSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    citation_type: str = "citation"
    pmid_key: str = "pmid"


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    articles: Optional[str] = None
    embeddings: Optional[str] = None
    embed_backend: Literal["fallback", "remote"] = "fallback"
    embed_dim: PositiveInt = 256
    embed_model: str = "text-embedding-3-small"
    workdir: str = "work"
    k: int = 10
    seed: int = 0
    sample_size: Optional[PositiveInt] = None
    gateway: RoleSettings = Field(default_factory=RoleSettings)
    roles: Dict[str, RoleSettings] = Field(default_factory=dict)
    panel: Dict[str, RoleSettings] = Field(
        default_factory=lambda: {name: RoleSettings(**values) for name, values in DEFAULT_PANEL.items()}
    )
    bootstrap: BootstrapSettings = Field(default_factory=BootstrapSettings)
    ncbi: NcbiSettings = Field(default_factory=NcbiSettings)
    bioc: BiocSettings = Field(default_factory=BiocSettings)

    @field_validator("k")
    @classmethod
    def _k_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("retrieval depth must be at least 1")
        return value

    @field_validator("panel")
    @classmethod
    def _panel_size(cls, value: Dict[str, RoleSettings]) -> Dict[str, RoleSettings]:
        if len(value) != PANEL_SIZE:
            raise ValueError(f"panel needs exactly {PANEL_SIZE} members, got {len(value)}")
        return value

    @field_validator("roles")
    @classmethod
    def _known_roles(cls, value: Dict[str, RoleSettings]) -> Dict[str, RoleSettings]:
        unknown = sorted(set(value) - set(GATEWAY_ROLES))
        if unknown:
            raise ValueError(f"unknown roles: {', '.join(unknown)}")
        return value

    @model_validator(mode="after")
    def _fill_roles(self) -> "PipelineConfig":
        for role in GATEWAY_ROLES:
            self.roles.setdefault(role, self.gateway)
        return self

    def role(self, name: str) -> RoleSettings:
        if name.startswith("panel."):
            return self.panel[name[len("panel."):]]
        return self.roles[name]

    def config_hash(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


class StageStats(BaseModel):
    """Counts for one stage, in the units the stage consumes."""

    inputs: int = 0
    outputs: int = 0
    dropped: int = 0
    errors: int = 0
    seconds: float = 0.0
    skipped: bool = False

    @model_validator(mode="after")
    def _conserved(self) -> "StageStats":
        if self.outputs + self.dropped + self.errors != self.inputs:
            raise ValueError(
                f"outputs + dropped + errors ({self.outputs}+{self.dropped}+{self.errors}) "
                f"must equal inputs ({self.inputs})"
            )
        return self


class RunManifest(BaseModel):
    config_hash: str
    seed: int
    stages: Dict[str, StageStats] = Field(default_factory=dict)
