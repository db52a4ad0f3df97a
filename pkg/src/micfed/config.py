"""Run configuration: a flat key = value text format with baked-in defaults.

An empty config reproduces the reference hyperparameters; every key can be
overridden individually.  Lines starting with # and blank lines are ignored.
Values are typed per key (int, float, bool, comma-separated float list, or
string) and serialization uses repr so parse -> serialize -> parse is the
identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

DEFAULT_N_SCENARIOS = 20
DEFAULT_PRETRAIN_EPOCHS = 30
DEFAULT_PRETRAIN_CORPUS = 256


@dataclass(frozen=True)
class RunConfig:
    """Everything a full pipeline run depends on, in one flat record."""

    seed: int = 0
    n_nodes: int = 16
    n_scenarios: int = DEFAULT_N_SCENARIOS
    room: tuple = (4.7, 3.4, 2.4)
    t60: float = 0.34
    clip_seconds: float = 30.0
    win: int = 1024
    hop: int = 512
    n_mels: int = 128
    eps1: float = 0.0134
    eps2: float = 0.005
    eps3: float = 0.0007
    max_rounds: int = 25
    lr: float = 0.1
    recursive: bool = False
    lam: float = 0.5
    mv_thresholds: tuple = (0.0, 0.5, 0.9)
    pretrain_epochs: int = DEFAULT_PRETRAIN_EPOCHS
    pretrain_corpus: int = DEFAULT_PRETRAIN_CORPUS
    pretrain_seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "room", tuple(float(v) for v in self.room))
        object.__setattr__(self, "mv_thresholds",
                           tuple(float(v) for v in self.mv_thresholds))
        if len(self.room) != 3 or min(self.room) <= 0:
            raise ValueError("room needs three positive extents")
        if self.t60 <= 0:
            raise ValueError("t60 must be positive")
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")
        if min(self.n_nodes, self.n_scenarios) < 1:
            raise ValueError("n_nodes and n_scenarios must be at least 1")
        if min(self.win, self.hop, self.n_mels) < 1:
            raise ValueError("win, hop, and n_mels must be at least 1")
        if min(self.eps1, self.eps2, self.eps3) < 0:
            raise ValueError("thresholds must be nonnegative")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be at least 1")
        if self.lr < 0:
            raise ValueError("lr must be nonnegative")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")
        for v in self.mv_thresholds:
            if not 0.0 <= v <= 1.0:
                raise ValueError("mv thresholds must lie in [0, 1]")
        if min(self.pretrain_epochs, self.pretrain_corpus) < 0:
            raise ValueError("pretraining sizes must be nonnegative")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_floats(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


_FIELD_TYPES = {
    "seed": int,
    "n_nodes": int,
    "n_scenarios": int,
    "room": _parse_floats,
    "t60": float,
    "clip_seconds": float,
    "win": int,
    "hop": int,
    "n_mels": int,
    "eps1": float,
    "eps2": float,
    "eps3": float,
    "max_rounds": int,
    "lr": float,
    "recursive": _parse_bool,
    "lam": float,
    "mv_thresholds": _parse_floats,
    "pretrain_epochs": int,
    "pretrain_corpus": int,
    "pretrain_seed": int,
    "out_dir": str,
}

assert set(_FIELD_TYPES) == {f.name for f in dataclasses.fields(RunConfig)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str) -> RunConfig:
    """Build a RunConfig from key = value lines over the defaults."""
    overrides = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        if key in overrides:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        try:
            overrides[key] = _FIELD_TYPES[key](value.strip())
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**overrides)


def serialize_config(config: RunConfig) -> str:
    """All keys, one per line, in field order."""
    lines = [f"{f.name} = {_format_value(getattr(config, f.name))}"
             for f in dataclasses.fields(config)]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, "r") as fh:
        return parse_config(fh.read())


def save_config(config: RunConfig, path):
    with open(path, "w") as fh:
        fh.write(serialize_config(config))
