"""Prompt templates, fenced-JSON extraction and schema-checked calls."""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources
from typing import Any, Callable, Mapping, Sequence

from .cases import Verdict
from .gateway import ChatMessage, ChatRequest, Gateway, MediaAttachment, TransportError

TEMPLATE_IDS = (
    "baseline",
    "persona",
    "stage1",
    "stage2_select",
    "stage2_perceive",
    "stage3",
    "stage4",
    "summary",
    "reflect",
    "classify",
)

PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")

REPAIR_INSTRUCTION = (
    "Your previous reply was not valid JSON matching the required format. "
    "Reply with only the JSON object."
)


class MissingBinding(KeyError):
    def __init__(self, template_id: str, names: Sequence[str]):
        self.template_id = template_id
        self.names = tuple(names)
        super().__init__(f"template {template_id!r} is missing binding(s): {', '.join(names)}")


class ParseError(ValueError):
    def __init__(self, message: str, offset: int = 0):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


class SchemaError(ValueError):
    pass


class SchemaFailure(RuntimeError):
    """Retry budget exhausted without a schema-valid reply."""

    def __init__(self, schema_id: str, attempts: int, last_raw: str, reason: str):
        self.schema_id = schema_id
        self.attempts = attempts
        self.last_raw = last_raw
        self.reason = reason
        super().__init__(f"{schema_id}: no valid reply after {attempts} attempt(s): {reason}")


@lru_cache(maxsize=None)
def template_body(template_id: str) -> str:
    if template_id not in TEMPLATE_IDS:
        raise KeyError(f"unknown template {template_id!r}")
    return resources.files("jurysim").joinpath("templates").joinpath(f"{template_id}.txt").read_text(encoding="utf-8")


def placeholders(template_id: str) -> list[str]:
    return list(dict.fromkeys(PLACEHOLDER.findall(template_body(template_id))))


def render(template_id: str, bindings: Mapping[str, Any]) -> str:
    """Substitute ``{name}`` placeholders in one pass; values are not rescanned."""
    body = template_body(template_id)
    missing = [name for name in placeholders(template_id) if name not in bindings]
    if missing:
        raise MissingBinding(template_id, missing)
    return PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), body)


# --------------------------------------------------------------------------
# JSON extraction

_FENCE = re.compile(r"```json[ \t]*\r?\n?(.*?)```", re.DOTALL | re.IGNORECASE)
_TRAILING_COMMA = re.compile(r",(\s*[}\]])")


def _loads_lenient(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        # Models copy the trailing commas shown in the return-format examples.
        return json.loads(_TRAILING_COMMA.sub(r"\1", text))


def extract_json(text: str) -> Any:
    """First fenced ```json block, else the whole text, else the first JSON value in prose."""
    m = _FENCE.search(text)
    if m:
        try:
            return _loads_lenient(m.group(1).strip())
        except json.JSONDecodeError as exc:
            raise ParseError(f"fenced block is not valid JSON: {exc.msg}", m.start(1) + exc.pos) from None
    stripped = text.strip()
    try:
        return _loads_lenient(stripped)
    except json.JSONDecodeError:
        pass
    starts = [i for i in (text.find("{"), text.find("[")) if i >= 0]
    if not starts:
        raise ParseError("no JSON value found", 0)
    start = min(starts)
    try:
        value, _ = json.JSONDecoder().raw_decode(_TRAILING_COMMA.sub(r"\1", text[start:]))
        return value
    except json.JSONDecodeError as exc:
        raise ParseError(f"no parseable JSON: {exc.msg}", start + exc.pos) from None


# --------------------------------------------------------------------------
# Schemas: required keys and enumerated values only; extra keys pass.


def _need_keys(obj: Any, keys: Sequence[str]) -> dict:
    if not isinstance(obj, dict):
        raise SchemaError(f"expected a JSON object, got {type(obj).__name__}")
    missing = [k for k in keys if k not in obj]
    if missing:
        raise SchemaError(f"missing key(s): {', '.join(missing)}")
    return obj


def _need_text(obj: dict, keys: Sequence[str]) -> None:
    for k in keys:
        if not isinstance(obj[k], str) or not obj[k].strip():
            raise SchemaError(f"{k} must be a non-empty string")


def parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "yes", "1"):
        return True
    if isinstance(value, str) and value.strip().lower() in ("false", "no", "0"):
        return False
    raise SchemaError(f"not a boolean: {value!r}")


def _verdict(value: Any) -> Verdict:
    try:
        return Verdict.parse(value)
    except ValueError:
        raise SchemaError(f"verdict must be buyer or seller, got {value!r}") from None


def _check_baseline(obj):
    _need_keys(obj, ["Reason", "Conclusion"])
    _verdict(obj["Conclusion"])


def _check_stage1(obj):
    _need_keys(obj, ["buyer_core_claim", "seller_core_claim", "dispute_focus"])
    _need_text(obj, ["buyer_core_claim", "seller_core_claim", "dispute_focus"])


def _check_select(obj):
    _need_keys(obj, ["selected_evidence_id", "reason"])
    if not isinstance(obj["selected_evidence_id"], (str, int)):
        raise SchemaError("selected_evidence_id must be a string")


def _check_perceive(obj):
    _need_keys(obj, ["visual_findings", "evidence_summary", "support_strength", "is_sufficient", "sufficiency_reason"])
    if not isinstance(obj["visual_findings"], list):
        raise SchemaError("visual_findings must be a list")
    parse_bool(obj["is_sufficient"])


def _check_stage3(obj):
    _need_keys(obj, ["dispute_root_cause", "buyer_position", "seller_position", "conflict_focus"])
    for k in ("buyer_position", "seller_position", "conflict_focus"):
        if not isinstance(obj[k], dict):
            raise SchemaError(f"{k} must be an object")


def _check_stage4(obj):
    _need_keys(obj, ["verdict", "reasoning"])
    _verdict(obj["verdict"])
    reasons = obj["reasoning"]
    if isinstance(reasons, str):
        reasons = [reasons]
    if not isinstance(reasons, list) or not [r for r in reasons if isinstance(r, str) and r.strip()]:
        raise SchemaError("reasoning must hold at least one non-empty string")


def _check_summary(obj):
    keys = ["key_arguments", "debate_intensity", "prevailing_orientation"]
    _need_keys(obj, keys)
    for k in keys:
        if not isinstance(obj[k], (str, list)):
            raise SchemaError(f"{k} must be text")


def _check_reflect(obj):
    _need_keys(obj, ["reflection_result"])
    rules = obj["reflection_result"]
    if not isinstance(rules, list) or not 2 <= len(rules) <= 4:
        raise SchemaError("reflection_result must be an array of 2 to 4 strings")
    if not all(isinstance(r, str) and r.strip() for r in rules):
        raise SchemaError("reflection_result entries must be non-empty strings")


SCHEMAS: dict[str, Callable[[Any], None]] = {
    "baseline": _check_baseline,
    "stage1": _check_stage1,
    "stage2_select": _check_select,
    "stage2_perceive": _check_perceive,
    "stage3": _check_stage3,
    "stage4": _check_stage4,
    "summary": _check_summary,
    "reflect": _check_reflect,
}


def validate(schema_id: str, value: Any) -> Any:
    SCHEMAS[schema_id](value)
    return value


def call_with_schema(
    gateway: Gateway,
    template_id: str,
    bindings: Mapping[str, Any],
    schema_id: str | None = None,
    retries: int = 3,
    system: str | None = None,
    attachments: Sequence[MediaAttachment] = (),
    check: Callable[[Any], None] | None = None,
    extra_messages: Sequence[tuple[str, str]] = (),
) -> Any:
    """Render, call, extract and validate; re-ask with a repair note on failure.

    ``retries`` bounds the total number of gateway calls. ``check`` may raise
    SchemaError for constraints beyond the schema.
    """
    if retries < 1:
        raise ValueError("retries must be >= 1")
    schema_id = schema_id or template_id
    prompt = render(template_id, bindings)
    base: list[ChatMessage] = []
    if system:
        base.append(ChatMessage("system", system))
    base.append(ChatMessage("user", prompt))
    base.extend(ChatMessage(r, t) for r, t in extra_messages)

    messages = list(base)
    last_raw, reason = "", ""
    for attempt in range(1, retries + 1):
        request = ChatRequest(tuple(messages), tuple(attachments), gateway.params, template_id)
        try:
            raw = gateway.generate(request).text
        except TransportError:
            if attempt == retries:
                raise
            continue
        last_raw = raw
        try:
            value = extract_json(raw)
            validate(schema_id, value)
            if check is not None:
                check(value)
            return value
        except (ParseError, SchemaError) as exc:
            reason = str(exc)
        messages = base + [ChatMessage("assistant", raw), ChatMessage("user", REPAIR_INSTRUCTION)]
    raise SchemaFailure(schema_id, retries, last_raw, reason)


def dumps(value: Any) -> str:
    """Stable JSON text for embedding structured outputs into prompts."""
    return json.dumps(value, ensure_ascii=False, sort_keys=True)
