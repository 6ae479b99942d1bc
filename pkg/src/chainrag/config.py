"""Pipeline configuration.

A config file (YAML or JSON) mirrors :class:`PipelineConfig`. String values
may reference environment variables as ``${NAME}``; command-line flags
override file values.
"""

from __future__ import annotations

import dataclasses
import hashlib
import importlib
import importlib.util
import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .corpus import DEFAULT_CHUNK_SIZE, DEFAULT_CHUNK_STRIDE, SUPPORTED_FORMATS
from .gateway import Gateway, LatencyModel, MockGateway, OpenAIGateway, PseudoEmbedder
from .retrieval import DEFAULT_B, DEFAULT_K, DEFAULT_K1, DEFAULT_RRF_C, METHODS

logger = logging.getLogger(__name__)

ROLES = ("reranker", "generator", "annotator", "embedder")
GATEWAY_KINDS = ("openai", "mock", "pseudo")
_ENV_REF = re.compile(r"\$\{(\w+)\}")


class ConfigurationError(ValueError):
    pass


@dataclass
class DatasetConfig:
    format: str = "synthetic"
    path: str = ""


@dataclass
class RetrievalConfig:
    method: str = "sparse"
    k: int = DEFAULT_K
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    rrf_c: float = DEFAULT_RRF_C
    # local: each question's own paragraph pool; global: the whole corpus
    scope: str = "local"


@dataclass
class ChunkConfig:
    size: int = DEFAULT_CHUNK_SIZE
    stride: int = DEFAULT_CHUNK_STRIDE


@dataclass
class GatewayConfig:
    kind: str = "mock"
    model_id: str = "mock"
    base_url: str = ""
    api_key: str = ""
    embedding_model: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 512
    max_in_flight: int = 8
    timeout: float = 120.0
    max_attempts: int = 3
    # mock only
    fixture: str | None = None
    factory: str | None = None
    factory_args: dict = field(default_factory=dict)
    default: str | None = None
    latency: dict = field(default_factory=dict)
    # mock and pseudo embedders
    embed_dim: int = 64


@dataclass
class PipelineConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    chunking: ChunkConfig = field(default_factory=ChunkConfig)
    gateways: dict[str, GatewayConfig] = field(default_factory=dict)
    think_mode: str = "no_think"
    seed: int = 42
    sample_size: int | None = 500
    summarize_steps: bool = False
    rerank_reprompts: int = 1
    concurrency: int = 8
    output_dir: str = "runs"
    corpus_dir: str | None = None

    def resolved_corpus_dir(self) -> Path:
        return Path(self.corpus_dir) if self.corpus_dir else Path(self.output_dir) / "corpus"

    def validate(self, roles: tuple[str, ...] = ()) -> None:
        if self.dataset.format not in SUPPORTED_FORMATS:
            raise ConfigurationError(f"unknown dataset format {self.dataset.format!r}; supported: {', '.join(SUPPORTED_FORMATS)}")
        if self.retrieval.k < 1:
            raise ConfigurationError(f"k must be >= 1 (got {self.retrieval.k})")
        if self.retrieval.method not in METHODS:
            raise ConfigurationError(f"retrieval method must be one of {METHODS}")
        if self.retrieval.scope not in ("local", "global"):
            raise ConfigurationError("scope must be 'local' or 'global'")
        if self.think_mode not in ("think", "no_think"):
            raise ConfigurationError("think_mode must be 'think' or 'no_think'")
        if self.chunking.size <= 0 or not 0 < self.chunking.stride <= self.chunking.size:
            raise ConfigurationError("chunking needs size > 0 and 0 < stride <= size")
        for role in roles:
            if role not in self.gateways:
                raise ConfigurationError(f"no gateway configured for role {role!r}")
        for role, gw in self.gateways.items():
            if role not in ROLES:
                raise ConfigurationError(f"unknown gateway role {role!r}; roles: {', '.join(ROLES)}")
            if gw.kind not in GATEWAY_KINDS:
                raise ConfigurationError(f"gateway {role}: kind must be one of {GATEWAY_KINDS}")
            if gw.kind == "openai" and not gw.base_url:
                raise ConfigurationError(f"gateway {role}: base_url is required")

    def fingerprint_payload(self) -> dict:
        """Everything that can change results; paths, secrets and concurrency excluded."""
        data = dataclasses.asdict(self)
        for key in ("output_dir", "corpus_dir", "concurrency"):
            data.pop(key)
        data["dataset"].pop("path")
        for gw in data["gateways"].values():
            gw.pop("api_key")
            gw.pop("max_in_flight")
        return data

    def fingerprint(self, corpus_hash: str = "") -> str:
        payload = {"config": self.fingerprint_payload(), "corpus": corpus_hash}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def _interpolate(value):
    if isinstance(value, str):
        def sub(m):
            name = m.group(1)
            if name not in os.environ:
                logger.warning("environment variable %s is not set", name)
            return os.environ.get(name, "")
        return _ENV_REF.sub(sub, value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"{where}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigurationError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict) -> PipelineConfig:
    data = _interpolate(dict(data))
    sub = {
        "dataset": DatasetConfig,
        "retrieval": RetrievalConfig,
        "chunking": ChunkConfig,
    }
    kwargs: dict[str, Any] = {}
    for key, value in data.items():
        if key in sub:
            kwargs[key] = _build(sub[key], value, key)
        elif key == "gateways":
            kwargs[key] = {role: _build(GatewayConfig, gw, f"gateways.{role}") for role, gw in value.items()}
        else:
            kwargs[key] = value
    return _build(PipelineConfig, kwargs, "config")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return config_from_dict(data or {})


def config_to_dict(config: PipelineConfig) -> dict:
    data = dataclasses.asdict(config)
    for gw in data["gateways"].values():
        if gw["api_key"]:
            gw["api_key"] = "***"
    return data


def _load_callable(spec: str):
    """Resolve ``package.module:attr`` or ``path/to/file.py:attr``."""
    target, _, attr = spec.rpartition(":")
    if not target or not attr:
        raise ConfigurationError(f"factory must look like 'module:callable' (got {spec!r})")
    if target.endswith(".py"):
        module_spec = importlib.util.spec_from_file_location(Path(target).stem, target)
        if module_spec is None or module_spec.loader is None:
            raise ConfigurationError(f"cannot import {target}")
        module = importlib.util.module_from_spec(module_spec)
        module_spec.loader.exec_module(module)
    else:
        module = importlib.import_module(target)
    return getattr(module, attr)


def build_gateway(gw: GatewayConfig) -> Gateway | PseudoEmbedder:
    common = dict(temperature=gw.temperature, max_output_tokens=gw.max_output_tokens, max_in_flight=gw.max_in_flight)
    if gw.kind == "openai":
        return OpenAIGateway(
            base_url=gw.base_url, api_key=gw.api_key or None, model_id=gw.model_id,
            embedding_model=gw.embedding_model, timeout=gw.timeout, max_attempts=gw.max_attempts, **common,
        )
    if gw.kind == "pseudo":
        return PseudoEmbedder(gw.embed_dim)
    responses = {}
    if gw.fixture:
        responses = json.loads(Path(gw.fixture).read_text(encoding="utf-8"))
        if not isinstance(responses, dict):
            raise ConfigurationError(f"{gw.fixture}: mock fixture must map request keys to texts")
    responder = _load_callable(gw.factory)(**gw.factory_args) if gw.factory else None
    return MockGateway(
        responses=responses, responder=responder, default=gw.default,
        latency=LatencyModel(**gw.latency), embed_dim=gw.embed_dim, model_id=gw.model_id, **common,
    )


@dataclass
class Gateways:
    reranker: Gateway | None = None
    generator: Gateway | None = None
    annotator: Gateway | None = None
    embedder: Any = None


def build_gateways(config: PipelineConfig) -> Gateways:
    return Gateways(**{role: build_gateway(gw) for role, gw in config.gateways.items()})
