"""Pipeline configuration: a flat ``key = value`` text file.

Blank lines and lines starting with ``#`` are ignored.  Every key is a field
of :class:`PipelineConfig`; unknown keys are errors.  ``split_ratios`` takes
three comma-separated numbers.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = problems


@dataclass
class PipelineConfig:
    # paths
    dataset: str = ""
    work_dir: str = "work"
    # corpus
    max_code_len: int = 200
    max_comment_len: int = 30
    code_vocab_size: int = 30000
    comment_vocab_size: int = 30000
    min_count: int = 1
    split_ratios: tuple[float, float, float] = (0.9, 0.05, 0.05)
    # retrieval
    k1: float = 1.2
    b: float = 0.75
    # model
    embed_dim: int = 128
    hidden_dim: int = 256
    # training
    batch_size: int = 32
    lr: float = 1e-3
    epochs: int = 100
    patience: int = 5
    clip_norm: float = 5.0
    # decoding
    beam_width: int = 5
    max_decode_len: int = 30
    length_penalty: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        problems = []
        positive_ints = (
            "max_code_len",
            "max_comment_len",
            "min_count",
            "embed_dim",
            "hidden_dim",
            "batch_size",
            "epochs",
            "beam_width",
        )
        for name in positive_ints:
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1 (got {getattr(self, name)})")
        for name in ("code_vocab_size", "comment_vocab_size"):
            if getattr(self, name) <= 4:
                problems.append(f"{name} must be > 4 (got {getattr(self, name)})")
        if self.max_decode_len < 2:
            problems.append(f"max_decode_len must be >= 2 (got {self.max_decode_len})")
        if self.patience < 0:
            problems.append(f"patience must be >= 0 (got {self.patience})")
        if not 0 < self.b <= 1:
            problems.append(f"b must satisfy 0 < b <= 1 (got {self.b})")
        if self.k1 < 0:
            problems.append(f"k1 must be >= 0 (got {self.k1})")
        if self.lr <= 0:
            problems.append(f"lr must be > 0 (got {self.lr})")
        if self.clip_norm <= 0:
            problems.append(f"clip_norm must be > 0 (got {self.clip_norm})")
        if self.length_penalty < 0:
            problems.append(f"length_penalty must be >= 0 (got {self.length_penalty})")
        r = self.split_ratios
        if len(r) != 3 or any(x < 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            problems.append(f"split_ratios must be three non-negative numbers summing to 1 (got {r})")
        if problems:
            raise ConfigError(problems)

    def sub_seed(self, name: str) -> int:
        """Deterministic per-purpose seed derived from ``seed`` and a name ("shuffle", "init", ...)."""
        digest = hashlib.sha256(f"{self.seed}:{name}".encode()).digest()
        return int.from_bytes(digest[:4], "little")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "split_ratios":
                value = ",".join(repr(float(x)) for x in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {f.name: (list(v) if isinstance((v := getattr(self, f.name)), tuple) else v) for f in fields(self)}


FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _convert(key: str, raw: str):
    kind = FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "str":
        return raw
    return tuple(float(x) for x in raw.split(","))


def apply_overrides(config: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    problems = []
    for key, raw in overrides.items():
        if key not in FIELD_TYPES:
            problems.append(f"unknown config key {key!r}")
            continue
        try:
            setattr(config, key, _convert(key, raw))
        except ValueError:
            problems.append(f"{key}: cannot parse {raw!r} as {FIELD_TYPES[key]}")
    if problems:
        raise ConfigError(problems)
    return config


def parse_config_text(text: str) -> dict[str, str]:
    values, problems = {}, []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value'")
            continue
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    if problems:
        raise ConfigError(problems)
    return values


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None) -> PipelineConfig:
    config = PipelineConfig()
    if path is not None:
        apply_overrides(config, parse_config_text(Path(path).read_text()))
    if overrides:
        apply_overrides(config, overrides)
    config.validate()
    return config
