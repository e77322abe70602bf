"""Chat-completion and embedding access behind one interface.

Providers:

* ``MockProvider`` answers every prompt with schema-valid JSON derived from a
  hash of the request, and embeds text by feature hashing.
* ``ScriptedProvider`` replays a JSON-lines transcript keyed by request digest.
* ``RecordingProvider`` wraps another provider and captures a transcript.
* ``CallbackProvider`` delegates to a Python callable (handy in tests).
* ``HTTPProvider`` speaks the generic ``/chat/completions`` JSON protocol.

``Gateway`` binds a provider to a token ledger and an audit log.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import random
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)

FRAME_CAP = 30


class GatewayError(RuntimeError):
    """Base class for provider failures."""


class TransportError(GatewayError):
    retryable = True


class RateLimitError(TransportError):
    retryable = True


class TranscriptMiss(GatewayError):
    """The scripted transcript has no (remaining) entry for a request digest."""


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.7
    max_output_tokens: int = 2048
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class MediaAttachment:
    media_id: str
    kind: str
    uri: str = ""
    frames: tuple[int, ...] | None = None
    surrogate_text: str | None = None

    def __post_init__(self):
        if self.kind == "video" and self.frames is not None and len(self.frames) > FRAME_CAP:
            raise ValueError(f"video attachment carries {len(self.frames)} frames (cap {FRAME_CAP})")

    def to_dict(self) -> dict:
        return {
            "media_id": self.media_id,
            "kind": self.kind,
            "uri": self.uri,
            "frames": None if self.frames is None else list(self.frames),
            "surrogate_text": self.surrogate_text,
        }


@dataclass(frozen=True)
class ChatMessage:
    role: str
    text: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    attachments: tuple[MediaAttachment, ...] = ()
    params: GenerationParams = GenerationParams()
    # Template id of the prompt; routing hint for offline providers, not sent.
    purpose: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.text for m in self.messages)

    def digest(self) -> str:
        payload = {
            "messages": [[m.role, m.text] for m in self.messages],
            "attachments": [a.to_dict() for a in self.attachments],
            "temperature": self.params.temperature,
            "max_output_tokens": self.params.max_output_tokens,
        }
        blob = json.dumps(payload, sort_keys=True, ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(self.prompt_tokens + other.prompt_tokens, self.completion_tokens + other.completion_tokens)

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: TokenUsage = TokenUsage()


def count_tokens(text: str) -> int:
    """Rough offline token count: words and punctuation marks."""
    return len(re.findall(r"\w+|[^\w\s]", text))


def sample_frames(frame_count: int, cap: int = FRAME_CAP) -> list[int]:
    """Uniformly spaced frame indices, at most ``cap`` of them."""
    if frame_count < 0:
        raise ValueError("frame_count must be >= 0")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if frame_count <= cap:
        return list(range(frame_count))
    return [i * frame_count // cap for i in range(cap)]


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity of two non-zero vectors of equal dimension."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    sa = float(np.max(np.abs(a))) if a.size else 0.0
    sb = float(np.max(np.abs(b))) if b.size else 0.0
    if sa == 0.0 or sb == 0.0:
        raise ValueError("cosine is undefined for a zero vector")
    # rescale first so tiny or huge components neither underflow nor overflow
    a, b = a / sa, b / sb
    return float(np.clip(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))


# --------------------------------------------------------------------------
# Providers


class Provider(Protocol):
    def generate(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class HashingEmbedder:
    """Deterministic bag-of-words embedding via feature hashing."""

    def __init__(self, dimension: int = 64):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def _bucket(self, token: str) -> int:
        h = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(h, "little") % self.dimension

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed needs at least one text")
        out = []
        for text in texts:
            vec = np.zeros(self.dimension, dtype=np.float64)
            tokens = re.findall(r"\w+", text.lower()) or [text]
            for tok in tokens:
                vec[self._bucket(tok)] += 1.0
            # Bigrams separate texts sharing a vocabulary in different order.
            for a, b in zip(tokens, tokens[1:]):
                vec[self._bucket(a + " " + b)] += 0.5
            out.append(np.sqrt(vec))
        return out


def _fence(obj) -> str:
    return "```json\n" + json.dumps(obj, ensure_ascii=False, indent=2) + "\n```"


class MockProvider:
    """Offline provider whose replies are a pure function of (request, seed)."""

    _MENU = re.compile(r"^(buyer|seller) evidence (\S+?):", re.MULTILINE)

    def __init__(self, seed: int = 0, dimension: int = 64, seller_bias: float = 0.6):
        self.seed = seed
        self.seller_bias = seller_bias
        self._embedder = HashingEmbedder(dimension)

    @property
    def dimension(self) -> int:
        return self._embedder.dimension

    def _rng(self, request: ChatRequest) -> random.Random:
        return random.Random(f"{self.seed}:{request.params.seed}:{request.digest()}")

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._embedder.embed(texts)

    def generate(self, request: ChatRequest) -> ChatResponse:
        rng = self._rng(request)
        purpose = request.purpose or self._guess_purpose(request.prompt_text)
        handler = getattr(self, f"_reply_{purpose}", self._reply_unknown)
        text = handler(request, rng)
        usage = TokenUsage(count_tokens(request.prompt_text), count_tokens(text))
        return ChatResponse(text, usage)

    @staticmethod
    def _guess_purpose(prompt: str) -> str:
        for key, purpose in (
            ("buyer_core_claim", "stage1"),
            ("selected_evidence_id", "stage2_select"),
            ("is_sufficient", "stage2_perceive"),
            ("dispute_root_cause", "stage3"),
            ("[Judgment Rules]", "stage4"),
            ("key_arguments", "summary"),
            ("reflection_result", "reflect"),
            ("most suitable subcategory", "classify"),
            ('"Conclusion"', "baseline"),
        ):
            if key in prompt:
                return purpose
        return "unknown"

    def _reply_unknown(self, request, rng):
        return _fence({"result": f"mock-{rng.randrange(10**6)}"})

    def _coin(self, rng) -> str:
        return "seller" if rng.random() < self.seller_bias else "buyer"

    def _reply_baseline(self, request, rng):
        return _fence({"Reason": "Mock assessment of the case record.", "Conclusion": self._coin(rng).capitalize()})

    def _reply_stage1(self, request, rng):
        tag = rng.randrange(1000)
        return _fence(
            {
                "buyer_core_claim": f"Buyer asks for a refund over the reported product issue (#{tag}).",
                "seller_core_claim": f"Seller maintains the item matched its listing (#{tag}).",
                "dispute_focus": f"Whether the product condition on receipt matches the listing (#{tag}).",
            }
        )

    def _reply_stage2_select(self, request, rng):
        menu = self._MENU.findall(request.prompt_text)
        if not menu:
            return _fence({"selected_evidence_id": "none", "reason": "no evidence offered"})
        side, eid = menu[rng.randrange(len(menu))]
        return _fence({"selected_evidence_id": f"{side} evidence {eid}", "reason": "Most likely to show the disputed detail."})

    def _reply_stage2_perceive(self, request, rng):
        findings = []
        for idx, att in enumerate(request.attachments):
            findings.append(
                {
                    "media_type": att.kind,
                    "media_index": idx,
                    "timestamp": "00:00" if att.kind == "image" else f"00:{rng.randrange(60):02d}",
                    "description": att.surrogate_text or f"Visual content of {att.media_id}.",
                    "benefit_analysis": "Shows the item state relevant to the dispute focus.",
                    "importance": rng.choice(["high", "medium", "low"]),
                }
            )
        return _fence(
            {
                "visual_findings": findings,
                "evidence_summary": f"Evidence partly supports the claim (score {rng.randrange(100)}).",
                "support_strength": rng.choice(["strong", "moderate", "weak"]),
                "is_sufficient": "true" if rng.random() < 0.4 else "false",
                "sufficiency_reason": "Mock sufficiency judgement.",
            }
        )

    def _reply_stage3(self, request, rng):
        side_report = {
            "key_evidence": ["submitted photos", "chat record"],
            "visual_support": "partially",
            "strengths": ["consistent account"],
            "weaknesses": ["limited close-up detail"],
        }
        return _fence(
            {
                "dispute_root_cause": rng.choice(["description mismatch", "product quality issue", "service issue"]),
                "buyer_position": {"main_complaint": "Item differs from the listing.", "demands": "refund", **side_report},
                "seller_position": {"main_defense": "Item was shipped as described.", "dcounter_arguments": "Defect pre-disclosed.", **side_report},
                "conflict_focus": {
                    "core_disagreement": "Condition of the item at delivery.",
                    "evidence_contradictions": [f"Photos disagree on visible wear ({rng.randrange(100)})."],
                    "visual_evidence_insights": "Wear marks are visible in close-up images.",
                    "critical_facts": ["Listing mentioned minor wear."],
                },
            }
        )

    def _reply_stage4(self, request, rng):
        prompt = request.prompt_text
        verdict = self._coin(rng)
        section = prompt.split("Verdicts from the jurors you followed in the previous round:", 1)[-1]
        section = section.split("Buyer's claim:", 1)[0]
        seller_n = len(re.findall(r"verdict=seller", section))
        buyer_n = len(re.findall(r"verdict=buyer", section))
        if seller_n != buyer_n and rng.random() < 0.5:
            verdict = "seller" if seller_n > buyer_n else "buyer"
        reasons = [
            f"The {verdict}'s evidence is more consistent with the dispute focus.",
            f"Platform rules favour the {verdict} on the disclosed facts (#{rng.randrange(1000)}).",
        ]
        return _fence({"verdict": verdict, "reasoning": reasons})

    def _reply_summary(self, request, rng):
        prompt = request.prompt_text
        s = prompt.count("verdict=seller")
        b = prompt.count("verdict=buyer")
        lean = "the seller" if s > b else "the buyer" if b > s else "neither side"
        return _fence(
            {
                "key_arguments": f"Jurors weighed disclosure against condition on receipt ({b} buyer / {s} seller mentions).",
                "debate_intensity": "heated" if abs(s - b) <= 3 else "calm",
                "prevailing_orientation": f"Opinion currently favours {lean}.",
            }
        )

    def _reply_reflect(self, request, rng):
        rules = [
            "When the listing discloses wear, visible traces of use do not justify a return.",
            "Serious undisclosed defects shown on unboxing support the buyer's refund claim.",
            "Chat-history disclosures outweigh product display photos when they conflict.",
            "Claims without unboxing evidence carry little weight.",
        ]
        k = 2 + rng.randrange(3)
        return _fence({"reflection_result": rng.sample(rules, k)})

    _CLASSIFY_HINTS = (
        ("phone", "Mobile Phones"),
        ("laptop", "Computers"),
        ("computer", "Computers"),
        ("camera", "Cameras"),
        ("vacuum", "Small Appliances"),
        ("fridge", "Major Appliances"),
        ("watch", "Smart Devices"),
        ("charger", "Digital Accessories"),
        ("shirt", "Clothing"),
        ("jacket", "Clothing"),
        ("sneaker", "Footwear"),
        ("shoe", "Footwear"),
        ("bag", "Bags & Luggage"),
        ("hat", "Hats"),
        ("sofa", "Furniture & Home Décor"),
        ("stroller", "Maternity & Baby Products"),
        ("bike", "Sports & Outdoors"),
        ("account", "Gaming Accounts & Services"),
        ("course", "Tutorials & Courses"),
    )

    def _reply_classify(self, request, rng):
        product = request.prompt_text.split("Product Information:", 1)[-1].split("Optional categories", 1)[0].lower()
        for key, sub in self._CLASSIFY_HINTS:
            if re.search(rf"\b{key}", product):
                return sub
        return "Uncategorized Secondhand Items"


Responder = Callable[[ChatRequest], "str | ChatResponse"]


class CallbackProvider:
    """Delegates ``generate`` to a callable; embeddings come from a fallback."""

    def __init__(self, fn: Responder, embedder: Provider | HashingEmbedder | None = None):
        self.fn = fn
        self._embedder = embedder or HashingEmbedder()

    def generate(self, request: ChatRequest) -> ChatResponse:
        out = self.fn(request)
        if isinstance(out, ChatResponse):
            return out
        return ChatResponse(out, TokenUsage(count_tokens(request.prompt_text), count_tokens(out)))

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._embedder.embed(texts)


@dataclass(frozen=True)
class TranscriptEntry:
    request_digest: str
    response_text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def to_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "response_text": self.response_text,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }


def read_transcript(path: str | Path) -> list[TranscriptEntry]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                entries.append(
                    TranscriptEntry(
                        d["request_digest"],
                        d["response_text"],
                        int(d.get("prompt_tokens", 0)),
                        int(d.get("completion_tokens", 0)),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad transcript line ({exc})") from None
    return entries


def write_transcript(entries: Iterable[TranscriptEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps(e.to_dict(), ensure_ascii=False, sort_keys=True) + "\n")


class ScriptedProvider:
    """Replays transcript entries; each entry answers one matching request."""

    def __init__(self, entries: Iterable[TranscriptEntry], embedder: Provider | HashingEmbedder | None = None):
        self._queues: dict[str, deque[TranscriptEntry]] = {}
        for e in entries:
            self._queues.setdefault(e.request_digest, deque()).append(e)
        self._lock = threading.Lock()
        self._embedder = embedder or HashingEmbedder()

    @classmethod
    def from_file(cls, path: str | Path, embedder=None) -> "ScriptedProvider":
        return cls(read_transcript(path), embedder)

    @property
    def remaining(self) -> int:
        with self._lock:
            return sum(len(q) for q in self._queues.values())

    def generate(self, request: ChatRequest) -> ChatResponse:
        digest = request.digest()
        with self._lock:
            queue = self._queues.get(digest)
            if not queue:
                raise TranscriptMiss(f"no transcript entry for request {digest[:12]} ({request.purpose or 'unknown'})")
            entry = queue.popleft()
        return ChatResponse(entry.response_text, TokenUsage(entry.prompt_tokens, entry.completion_tokens))

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self._embedder.embed(texts)


class RecordingProvider:
    """Pass-through wrapper that records every exchange as a transcript."""

    def __init__(self, inner: Provider):
        self.inner = inner
        self.entries: list[TranscriptEntry] = []
        self._lock = threading.Lock()

    def generate(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.generate(request)
        entry = TranscriptEntry(
            request.digest(), response.text, response.usage.prompt_tokens, response.usage.completion_tokens
        )
        with self._lock:
            self.entries.append(entry)
        return response

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return self.inner.embed(texts)

    def save(self, path: str | Path) -> None:
        with self._lock:
            write_transcript(self.entries, path)


class FrameExtractor(Protocol):
    """Turns a media locator and frame indices into encoded image bytes."""

    def __call__(self, uri: str, frames: Sequence[int] | None) -> list[bytes]: ...


def read_image_file(uri: str, frames: Sequence[int] | None) -> list[bytes]:
    """Default extractor: still images from local files, no video decoding."""
    if frames is not None:
        return []
    path = Path(uri)
    return [path.read_bytes()] if path.is_file() else []


class HTTPProvider:
    """Generic chat-completion client (``model``, ``messages``, ``temperature``, ``max_tokens``)."""

    def __init__(
        self,
        endpoint_url: str,
        model_id: str,
        api_key_env: str = "JURYSIM_API_KEY",
        timeout_s: float = 60.0,
        max_retries: int = 3,
        embedding_url: str | None = None,
        embedding_model: str | None = None,
        frame_extractor: FrameExtractor | None = read_image_file,
        client: httpx.Client | None = None,
        backoff_s: float = 1.0,
    ):
        self.endpoint_url = endpoint_url
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.embedding_url = embedding_url
        self.embedding_model = embedding_model or model_id
        self.frame_extractor = frame_extractor
        self.backoff_s = backoff_s
        self._client = client or httpx.Client(timeout=timeout_s)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _media_parts(self, attachments: Sequence[MediaAttachment]) -> list[dict]:
        parts = []
        for att in attachments:
            blobs = []
            if self.frame_extractor is not None and att.uri:
                try:
                    blobs = self.frame_extractor(att.uri, att.frames)
                except OSError as exc:
                    logger.warning("could not read media %s: %s", att.media_id, exc)
            if blobs:
                for blob in blobs:
                    data = base64.b64encode(blob).decode("ascii")
                    parts.append({"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{data}"}})
            elif att.surrogate_text:
                parts.append({"type": "text", "text": f"[{att.kind} {att.media_id}] {att.surrogate_text}"})
        return parts

    def build_payload(self, request: ChatRequest) -> dict:
        messages = [{"role": m.role, "content": m.text} for m in request.messages]
        media = self._media_parts(request.attachments)
        if media:
            last = messages[-1]
            last["content"] = [{"type": "text", "text": last["content"]}] + media
        payload = {
            "model": self.model_id,
            "messages": messages,
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        }
        if request.params.seed is not None:
            payload["seed"] = request.params.seed
        return payload

    def _post(self, url: str, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self._client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_exc = TransportError(f"{url}: {exc}")
            else:
                if resp.status_code == 429:
                    last_exc = RateLimitError(f"{url}: rate limited")
                elif resp.status_code >= 500:
                    last_exc = TransportError(f"{url}: HTTP {resp.status_code}")
                elif resp.status_code >= 400:
                    raise GatewayError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
                else:
                    try:
                        return resp.json()
                    except ValueError:
                        raise TransportError(f"{url}: response is not JSON") from None
            if attempt < self.max_retries:
                time.sleep(self.backoff_s * (2**attempt))
        raise last_exc

    def generate(self, request: ChatRequest) -> ChatResponse:
        data = self._post(self.endpoint_url, self.build_payload(request))
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError("malformed chat-completion response") from None
        if isinstance(content, list):
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        usage = data.get("usage") or {}
        return ChatResponse(
            content or "",
            TokenUsage(int(usage.get("prompt_tokens", 0) or 0), int(usage.get("completion_tokens", 0) or 0)),
        )

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed needs at least one text")
        if not self.embedding_url:
            raise GatewayError("no embedding_url configured")
        data = self._post(self.embedding_url, {"model": self.embedding_model, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda r: r.get("index", 0))
            return [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError):
            raise TransportError("malformed embedding response") from None


# --------------------------------------------------------------------------
# Gateway


@dataclass(frozen=True)
class AuditEntry:
    seq: int
    purpose: str
    request_digest: str
    response_digest: str
    prompt_tokens: int
    completion_tokens: int
    prompt_text: str | None = None
    response_text: str | None = None

    def to_dict(self) -> dict:
        d = {
            "seq": self.seq,
            "purpose": self.purpose,
            "request_digest": self.request_digest,
            "response_digest": self.response_digest,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }
        if self.prompt_text is not None:
            d["prompt_text"] = self.prompt_text
            d["response_text"] = self.response_text
        return d


class TokenLedger:
    """Thread-safe running totals of token usage and call counts."""

    def __init__(self):
        self._lock = threading.Lock()
        self._usage = TokenUsage()
        self._calls = 0
        self._embed_calls = 0

    def add(self, usage: TokenUsage) -> None:
        with self._lock:
            self._usage = self._usage + usage
            self._calls += 1

    def add_embed(self, n: int = 1) -> None:
        with self._lock:
            self._embed_calls += n

    @property
    def usage(self) -> TokenUsage:
        with self._lock:
            return self._usage

    @property
    def calls(self) -> int:
        with self._lock:
            return self._calls

    @property
    def embed_calls(self) -> int:
        with self._lock:
            return self._embed_calls

    def to_dict(self) -> dict:
        u = self.usage
        return {
            "prompt_tokens": u.prompt_tokens,
            "completion_tokens": u.completion_tokens,
            "total_tokens": u.total,
            "generate_calls": self.calls,
            "embed_calls": self.embed_calls,
        }


@dataclass
class Gateway:
    provider: Provider
    params: GenerationParams = GenerationParams()
    log_full: bool = False
    ledger: TokenLedger = field(default_factory=TokenLedger)
    audit: list[AuditEntry] = field(default_factory=list)

    def __post_init__(self):
        self._lock = threading.Lock()

    def generate(self, request: ChatRequest) -> ChatResponse:
        response = self.provider.generate(request)
        self.ledger.add(response.usage)
        with self._lock:
            self.audit.append(
                AuditEntry(
                    seq=len(self.audit),
                    purpose=request.purpose,
                    request_digest=request.digest(),
                    response_digest=hashlib.sha256(response.text.encode("utf-8")).hexdigest(),
                    prompt_tokens=response.usage.prompt_tokens,
                    completion_tokens=response.usage.completion_tokens,
                    prompt_text=request.prompt_text if self.log_full else None,
                    response_text=response.text if self.log_full else None,
                )
            )
        return response

    def chat(self, messages: Sequence[tuple[str, str]], purpose: str = "", attachments=()) -> ChatResponse:
        req = ChatRequest(
            tuple(ChatMessage(r, t) for r, t in messages), tuple(attachments), self.params, purpose
        )
        return self.generate(req)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        texts = list(texts)
        if not texts:
            raise ValueError("embed needs at least one text")
        vectors = self.provider.embed(texts)
        if len(vectors) != len(texts):
            raise GatewayError(f"provider returned {len(vectors)} vectors for {len(texts)} texts")
        self.ledger.add_embed(len(texts))
        return [np.asarray(v, dtype=np.float64) for v in vectors]

    def fork(self) -> "Gateway":
        """Same provider and settings, fresh ledger and audit log."""
        return Gateway(self.provider, self.params, self.log_full)


def attachments_for(media: Iterable, cap: int = FRAME_CAP) -> list[MediaAttachment]:
    """Attachments for case media; videos carry uniformly sampled frame indices."""
    out = []
    for m in media:
        frames = tuple(sample_frames(m.frame_count, cap)) if m.kind == "video" else None
        out.append(MediaAttachment(m.media_id, m.kind, m.uri, frames, m.surrogate_text))
    return out
