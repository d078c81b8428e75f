"""Chat-completion gateway: one client contract over a remote backend or a scripted mock."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, Optional, Protocol, Sequence, Union

import backoff
import httpx
import openai
from langchain_core.prompts import ChatPromptTemplate
from tqdm import tqdm

from medfact.core.errors import (
    AuthError,
    ConfigError,
    EmptyResponse,
    GatewayError,
    IoError,
    RateLimitError,
    TransportError,
)
from medfact.schemas.config import PipelineConfig, RoleSettings
from medfact.schemas.domain import LikertScore, VerificationReport
from medfact.schemas.gateway import ChatRequest, ChatResponse
from medfact.services.verification import render_verification_output

logger = logging.getLogger(__name__)

BatchResult = Union[ChatResponse, GatewayError]


class ChatBackend(Protocol):
    def send(self, req: ChatRequest) -> str:
        """Return the first-choice message content or raise a GatewayError."""


class OpenAIChatBackend:
    """Chat-completions endpoint reached through the openai SDK.

    SDK retries are disabled; the gateway owns the retry policy.
    """

    def __init__(
        self,
        *,
        api_key: Optional[str] = None,
        api_key_env: str = "OPENAI_API_KEY",
        base_url: Optional[str] = None,
        timeout: float = 60.0,
        http_client: Optional[httpx.Client] = None,
    ):
        api_key = api_key or os.getenv(api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {api_key_env} is not set")
        self.client = openai.OpenAI(
            api_key=api_key,
            base_url=base_url,
            timeout=timeout,
            max_retries=0,
            http_client=http_client,
        )

    def send(self, req: ChatRequest) -> str:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        try:
            completion = self.client.chat.completions.create(
                model=req.model,
                messages=messages,
                temperature=req.temperature,
            )
        except (openai.AuthenticationError, openai.PermissionDeniedError) as exc:
            raise AuthError(f"credentials rejected ({exc.status_code})") from exc
        except openai.RateLimitError as exc:
            raise RateLimitError("rate limited (429)") from exc
        except openai.APIStatusError as exc:
            retryable = exc.status_code >= 500
            raise TransportError(
                f"HTTP {exc.status_code} from backend", retryable=retryable, status=exc.status_code
            ) from exc
        except openai.APIConnectionError as exc:
            raise TransportError(f"connection failed: {exc}") from exc

        if not completion.choices:
            raise EmptyResponse("response has no choices")
        content = completion.choices[0].message.content
        if content is None or not content.strip():
            raise EmptyResponse("response has no message content")
        return content


_TITLE_LINE = re.compile(r"^Title: (.*)$", re.MULTILINE)
_SCRIPTED_ERRORS = {
    "auth": lambda: AuthError("scripted auth failure"),
    "rate_limit": lambda: RateLimitError("scripted rate limit"),
    "transport": lambda: TransportError("scripted transport failure"),
    "server": lambda: TransportError("scripted server error", status=503),
    "empty": lambda: EmptyResponse("scripted empty response"),
}


def mock_key(system: str, user: str) -> str:
    return hashlib.sha256(f"{system}\x00{user}".encode("utf-8")).hexdigest()


class MockChatBackend:
    """Deterministic backend driven by a script.

    Script keys:
      responses: {sha256(system NUL user): content}
      rules: ordered list of {model?, system_contains?, contains?, times?} matchers with one of
             respond (text, "{title}" replaced by the article title), score (+ rationale) or error
      default: a rule body used when nothing else matches
    """

    def __init__(self, script: Dict[str, Any]):
        self.script = script
        self.responses: Dict[str, str] = dict(script.get("responses", {}))
        self.rules: list[Dict[str, Any]] = list(script.get("rules", []))
        self._fired: Dict[int, int] = {}
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "MockChatBackend":
        try:
            script = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read mock script {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise IoError(f"mock script {path} is not valid JSON: {exc.msg}") from exc
        return cls(script)

    def _matches(self, index: int, rule: Dict[str, Any], req: ChatRequest) -> bool:
        if "model" in rule and rule["model"] != req.model:
            return False
        if rule.get("system_contains", "") not in req.system:
            return False
        if rule.get("contains", "") not in req.user:
            return False
        if "times" in rule:
            # a limited rule fires its first `times` matches only
            fired = self._fired.get(index, 0)
            if fired >= int(rule["times"]):
                return False
            self._fired[index] = fired + 1
        return True

    def _render(self, body: Any, req: ChatRequest) -> str:
        if isinstance(body, str):
            body = {"respond": body}
        if "error" in body:
            factory = _SCRIPTED_ERRORS.get(body["error"])
            if factory is None:
                raise ValueError(f"unknown scripted error {body['error']!r}")
            raise factory()
        if "score" in body:
            report = VerificationReport(
                rationale=body.get("rationale", "Scripted rationale."),
                score=LikertScore(int(body["score"])),
            )
            return render_verification_output(report)
        content = str(body.get("respond", ""))
        if "{title}" in content:
            match = _TITLE_LINE.search(req.user)
            content = content.replace("{title}", match.group(1) if match else "")
        return content

    def send(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
            key = mock_key(req.system, req.user)
            if key in self.responses:
                return self.responses[key]
            body = None
            for index, rule in enumerate(self.rules):
                if self._matches(index, rule, req):
                    body = rule
                    break
            if body is None:
                body = self.script.get("default")
        if body is None:
            raise EmptyResponse("no scripted response matches the request")
        return self._render(body, req)


class LLMGateway:
    """Sends chat requests for one role, with retries and resumable batches."""

    def __init__(self, backend: ChatBackend, settings: Optional[RoleSettings] = None):
        self.backend = backend
        self.settings = settings or RoleSettings()
        self.calls = 0
        self._lock = threading.Lock()

    def request(self, prompt: ChatPromptTemplate, **variables: Any) -> ChatRequest:
        """Format a prompt template into a request using this role's model settings."""

        messages = prompt.format_messages(**variables)
        system = "\n".join(m.content for m in messages if m.type == "system")
        user = "\n".join(m.content for m in messages if m.type == "human")
        return ChatRequest(
            model=self.settings.model,
            system=system,
            user=user,
            temperature=self.settings.temperature,
        )

    def _log_backoff(self, details: Dict[str, Any]) -> None:
        exc = details.get("exception")
        logger.warning(
            f"Retrying chat request after {type(exc).__name__}",
            extra={
                "attempt": details["tries"],
                "delay": round(details["wait"], 3),
                "model": self.settings.model,
            },
        )

    def _send(self, req: ChatRequest) -> str:
        with self._lock:
            self.calls += 1
        return self.backend.send(req)

    def complete(self, req: ChatRequest) -> ChatResponse:
        """Send one request, retrying 429/5xx/transport failures with jittered backoff."""

        send = backoff.on_exception(
            backoff.expo,
            (TransportError, RateLimitError),
            max_tries=self.settings.max_attempts,
            factor=self.settings.base_delay,
            jitter=backoff.full_jitter,
            giveup=lambda exc: not exc.retryable,
            on_backoff=self._log_backoff,
            logger=None,
        )(self._send)

        started = time.monotonic()
        content = send(req)
        latency_ms = int((time.monotonic() - started) * 1000)
        return ChatResponse(content=content, model=req.model, latency_ms=latency_ms)

    def complete_batch(
        self,
        reqs: Sequence[ChatRequest],
        parallelism: Optional[int] = None,
        checkpoint: Optional[str | Path] = None,
        desc: str = "chat",
    ) -> list[BatchResult]:
        """Complete requests in input order; failures occupy their slot as the error.

        Indices already recorded in the checkpoint are answered from it without a call.
        """

        parallelism = parallelism or self.settings.parallelism
        if parallelism < 1:
            raise ValueError("parallelism must be at least 1")

        results: list[Optional[BatchResult]] = [None] * len(reqs)
        done = _load_checkpoint(checkpoint, reqs) if checkpoint else {}
        for index, content in done.items():
            results[index] = ChatResponse(
                content=content, model=reqs[index].model, from_checkpoint=True
            )
        pending = [i for i in range(len(reqs)) if i not in done]
        if done:
            logger.info(
                f"Resuming batch: {len(done)} of {len(reqs)} answered from checkpoint",
                extra={"checkpoint": str(checkpoint)},
            )

        sink = _CheckpointWriter(checkpoint) if checkpoint else None
        progress = tqdm(total=len(pending), desc=desc, disable=None, leave=False)

        def run(index: int) -> BatchResult:
            try:
                response = self.complete(reqs[index])
            except GatewayError as exc:
                logger.debug(
                    f"Request {index} failed: {exc}", extra={"error": type(exc).__name__}
                )
                return exc
            except Exception as exc:
                logger.exception(f"Request {index} raised {type(exc).__name__}")
                error = GatewayError(f"unexpected {type(exc).__name__}: {exc}")
                error.__cause__ = exc
                return error
            if sink is not None:
                sink.write(index, reqs[index].fingerprint, response.content)
            return response

        try:
            if parallelism == 1:
                for index in pending:
                    results[index] = run(index)
                    progress.update(1)
            else:
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    futures = {pool.submit(run, index): index for index in pending}
                    for future in as_completed(futures):
                        results[futures[future]] = future.result()
                        progress.update(1)
        finally:
            progress.close()
            if sink is not None:
                sink.close()

        failures = sum(1 for r in results if isinstance(r, GatewayError))
        if failures:
            logger.warning(
                f"{failures} of {len(reqs)} requests failed", extra={"model": self.settings.model}
            )
        return results  # type: ignore[return-value]


class _CheckpointWriter:
    """Append-only JSONL sink; each record is flushed as soon as it is written."""

    def __init__(self, path: str | Path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self._file = open(path, "a", encoding="utf-8")
            # start fresh after an interrupted partial line
            if path.stat().st_size and not path.read_bytes().endswith(b"\n"):
                self._file.write("\n")
        except OSError as exc:
            raise IoError(f"cannot open checkpoint {path}: {exc}") from exc
        self._lock = threading.Lock()

    def write(self, index: int, key: str, content: str) -> None:
        line = json.dumps({"index": index, "key": key, "content": content}, ensure_ascii=False)
        with self._lock:
            self._file.write(line + "\n")
            self._file.flush()

    def close(self) -> None:
        self._file.close()


def _load_checkpoint(path: str | Path, reqs: Sequence[ChatRequest]) -> Dict[int, str]:
    path = Path(path)
    if not path.exists():
        return {}
    done: Dict[int, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            try:
                record = json.loads(line)
                index = int(record["index"])
                key = record["key"]
                content = record["content"]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                # an interrupted write leaves a partial last line
                logger.warning(f"Ignoring unreadable checkpoint line {lineno} in {path}")
                continue
            if 0 <= index < len(reqs) and reqs[index].fingerprint == key:
                done[index] = content
    return done


class GatewayFactory:
    """Builds one gateway per role; a mock script replaces every remote backend."""

    def __init__(
        self,
        roles: Dict[str, RoleSettings],
        mock: Optional[MockChatBackend] = None,
    ):
        self.roles = roles
        self.mock = mock
        self._gateways: Dict[str, LLMGateway] = {}

    def get(self, role: str) -> LLMGateway:
        if role not in self._gateways:
            if role not in self.roles:
                raise ConfigError(role, "no gateway settings for this role")
            settings = self.roles[role]
            if self.mock is not None:
                backend: ChatBackend = self.mock
            else:
                backend = OpenAIChatBackend(
                    api_key_env=settings.api_key_env,
                    base_url=settings.base_url,
                    timeout=settings.timeout,
                )
            self._gateways[role] = LLMGateway(backend, settings)
        return self._gateways[role]

    @property
    def calls(self) -> int:
        return sum(g.calls for g in self._gateways.values())

    @classmethod
    def from_config(cls, config: PipelineConfig, mock: Optional[MockChatBackend] = None) -> "GatewayFactory":
        roles = dict(config.roles)
        roles.update({f"panel.{name}": settings for name, settings in config.panel.items()})
        return cls(roles, mock)
