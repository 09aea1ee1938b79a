"""Flat ``key = value`` run configuration with a default for every key."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


DEFAULT_LADDER = tuple(1.0 + 0.5 * k for k in range(10))


@dataclass(frozen=True)
class RunConfig:
    data: str = ""
    schema: str = ""
    out: str = "out"
    kernel: str = "gaussian"
    mixture: bool = True
    ladder: tuple[float, ...] = DEFAULT_LADDER
    n_iter: int = 10_000
    burn_in: int = 5_000
    m: int = 10
    thin: int = 10
    seed: int = 0
    group: str = ""
    nu_sigma: float = 0.0          # 0 selects the model default
    n_replicates: int = 200
    n_init_clusters: int = 5
    latent_scan: str = "blocked"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kernel not in ("gaussian", "t"):
            raise ConfigError(f"kernel must be gaussian or t, got {self.kernel!r}")
        if self.n_iter < 1:
            raise ConfigError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ConfigError("burn_in must be nonnegative and below n_iter")
        if not 1 <= self.m <= self.n_iter - self.burn_in:
            raise ConfigError("m must lie between 1 and n_iter - burn_in")
        if self.thin < 1:
            raise ConfigError("thin must be positive")
        if not self.ladder or any(x <= 0 for x in self.ladder):
            raise ConfigError("ladder values must be positive")
        if any(b <= a for a, b in zip(self.ladder, self.ladder[1:])):
            raise ConfigError("ladder must be strictly increasing")
        if self.latent_scan not in ("blocked", "sequential"):
            raise ConfigError("latent_scan must be blocked or sequential")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    default = _FIELDS[name].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return raw


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path: str | Path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in _FIELDS:
        val = getattr(cfg, name)
        if isinstance(val, tuple):
            val = ",".join(repr(float(x)) for x in val)
        elif isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{name} = {val}")
    return "\n".join(lines) + "\n"
