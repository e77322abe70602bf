"""Run configuration files (JSON) and provider construction."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .gateway import GenerationParams, HTTPProvider, MockProvider, Provider, ScriptedProvider
from .jury import SimulationConfig

PROVIDER_KINDS = ("mock", "scripted", "http")


class ConfigError(ValueError):
    pass


@dataclass
class ProviderSettings:
    kind: str = "mock"
    seed: int = 0
    dimension: int = 64
    transcript: str | None = None
    endpoint_url: str | None = None
    model_id: str | None = None
    api_key_env: str = "JURYSIM_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    embedding_url: str | None = None
    embedding_model: str | None = None


@dataclass
class Seeds:
    network: int = 0
    persona: int = 0
    fallback: int = 0


@dataclass
class GenerationSettings:
    temperature: float = 0.7
    max_output_tokens: int = 2048
    seed: int | None = None


@dataclass
class Paths:
    corpus: str | None = None
    precedents: str | None = None
    output: str | None = None
    personas: str | None = None


@dataclass
class RunConfig:
    jurors: int = 17
    rounds: int = 3
    t_max: int = 3
    memory_k: int = 3
    delta: float = 0.8
    out_degree: int = 3
    lite: bool = False
    schema_retries: int = 3
    precedent_top_m: int = 3
    seeds: Seeds = field(default_factory=Seeds)
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    generation: GenerationSettings = field(default_factory=GenerationSettings)
    paths: Paths = field(default_factory=Paths)

    def simulation(self) -> SimulationConfig:
        return SimulationConfig(
            jurors=self.jurors,
            rounds=self.rounds,
            t_max=self.t_max,
            memory_k=self.memory_k,
            delta=self.delta,
            out_degree=self.out_degree,
            network_seed=self.seeds.network,
            persona_seed=self.seeds.persona,
            fallback_seed=self.seeds.fallback,
            lite=self.lite,
            schema_retries=self.schema_retries,
        )

    def params(self) -> GenerationParams:
        g = self.generation
        return GenerationParams(g.temperature, g.max_output_tokens, g.seed)

    def validate(self) -> "RunConfig":
        try:
            self.simulation().validate()
            self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.precedent_top_m < 1:
            raise ConfigError("precedent_top_m must be >= 1")
        p = self.provider
        if p.kind not in PROVIDER_KINDS:
            raise ConfigError(f"provider.kind must be one of {', '.join(PROVIDER_KINDS)}, got {p.kind!r}")
        if p.kind == "scripted" and not p.transcript:
            raise ConfigError("provider.transcript is required for the scripted provider")
        if p.kind == "http" and not (p.endpoint_url and p.model_id):
            raise ConfigError("provider.endpoint_url and provider.model_id are required for the http provider")
        if p.dimension < 1:
            raise ConfigError("provider.dimension must be >= 1")
        return self

    def check_offline(self) -> None:
        """Offline runs refuse any network endpoint."""
        p = self.provider
        if p.kind == "http" or p.endpoint_url or p.embedding_url:
            raise ConfigError("--offline forbids the http provider and any endpoint_url/embedding_url")

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s): {', '.join(unknown)}")
    kwargs = {}
    nested = {"seeds": Seeds, "provider": ProviderSettings, "generation": GenerationSettings, "paths": Paths}
    for key, value in data.items():
        if cls is RunConfig and key in nested:
            kwargs[key] = _build(nested[key], value, f"{where}.{key}")
            continue
        default = getattr(cls(), key)
        if isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{where}.{key}: expected a number")
            if isinstance(default, int) and not isinstance(value, int):
                raise ConfigError(f"{where}.{key}: expected an integer")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{where}.{key}: expected a string")
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "config").validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return config_from_dict(data)


def build_provider(cfg: RunConfig) -> Provider:
    p = cfg.provider
    if p.kind == "mock":
        return MockProvider(seed=p.seed, dimension=p.dimension)
    if p.kind == "scripted":
        return ScriptedProvider.from_file(p.transcript, MockProvider(seed=p.seed, dimension=p.dimension))
    return HTTPProvider(
        endpoint_url=p.endpoint_url,
        model_id=p.model_id,
        api_key_env=p.api_key_env,
        timeout_s=p.timeout_s,
        max_retries=p.max_retries,
        embedding_url=p.embedding_url,
        embedding_model=p.embedding_model,
    )
