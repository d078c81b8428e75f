"""Thin NCBI clients: free-text citation matching and DOI to PMID conversion."""

from __future__ import annotations

import logging
import os
from typing import Any, Dict, Optional

import backoff
import httpx

from medfact.core.config import NCBI_EMAIL, NCBI_TOOL
from medfact.core.errors import ServiceError
from medfact.schemas.config import NcbiSettings

logger = logging.getLogger(__name__)


class _RetryableStatus(Exception):
    def __init__(self, response: httpx.Response):
        super().__init__(f"HTTP {response.status_code}")
        self.response = response


class _NcbiClient:
    def __init__(
        self,
        base_url: str,
        *,
        settings: Optional[NcbiSettings] = None,
        http_client: Optional[httpx.Client] = None,
    ):
        self.settings = settings or NcbiSettings()
        self.base_url = base_url.rstrip("/")
        self.http = http_client or httpx.Client(timeout=self.settings.timeout)
        self.api_key = os.getenv(self.settings.api_key_env)

    def _params(self, params: Dict[str, Any]) -> Dict[str, Any]:
        params = dict(params)
        params.setdefault("tool", NCBI_TOOL)
        if NCBI_EMAIL:
            params.setdefault("email", NCBI_EMAIL)
        if self.api_key:
            params.setdefault("api_key", self.api_key)
        return params

    def _get(self, path: str, params: Dict[str, Any]) -> Any:
        @backoff.on_exception(
            backoff.expo,
            (httpx.TransportError, _RetryableStatus),
            max_tries=self.settings.max_attempts,
            factor=self.settings.base_delay,
            jitter=backoff.full_jitter,
            logger=None,
        )
        def fetch() -> httpx.Response:
            response = self.http.get(f"{self.base_url}/{path}", params=self._params(params))
            if response.status_code == 429 or response.status_code >= 500:
                raise _RetryableStatus(response)
            return response

        try:
            response = fetch()
        except (httpx.TransportError, _RetryableStatus) as exc:
            raise ServiceError(f"{path}: {exc}") from exc
        if response.status_code >= 400:
            raise ServiceError(f"{path}: HTTP {response.status_code}")
        try:
            return response.json()
        except ValueError as exc:
            raise ServiceError(f"{path}: response is not JSON") from exc


class CitationMatcherClient(_NcbiClient):
    """Resolves a free-text citation to PubMed candidates, best match first."""

    def __init__(self, base_url: Optional[str] = None, **kwargs: Any):
        settings = kwargs.get("settings") or NcbiSettings()
        super().__init__(base_url or settings.eutils_url, **kwargs)

    def match(self, citation: str, max_candidates: int = 5) -> list[int]:
        payload = self._get(
            "esearch.fcgi",
            {
                "db": "pubmed",
                "term": citation,
                "retmode": "json",
                "sort": "relevance",
                "retmax": max_candidates,
            },
        )
        try:
            ids = payload["esearchresult"]["idlist"]
        except (KeyError, TypeError) as exc:
            raise ServiceError("esearch response has no idlist") from exc
        return [int(i) for i in ids if str(i).isdigit() and int(i) > 0]


class IdConverterClient(_NcbiClient):
    """DOI to PMID through the NCBI ID converter."""

    def __init__(self, base_url: Optional[str] = None, **kwargs: Any):
        settings = kwargs.get("settings") or NcbiSettings()
        super().__init__(base_url or settings.idconv_url, **kwargs)

    def to_pmid(self, doi: str) -> Optional[int]:
        payload = self._get("idconv/v1.0/", {"ids": doi, "format": "json"})
        records = payload.get("records") if isinstance(payload, dict) else None
        if not records:
            return None
        pmid = str(records[0].get("pmid", "")).strip()
        return int(pmid) if pmid.isdigit() and int(pmid) > 0 else None
