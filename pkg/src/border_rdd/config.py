"""Flat key=value run configuration with dotted keys for nesting.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Relative paths resolve against the config file's directory. Validation
errors always name the offending key.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ConfigError


class RunConfig:
    def __init__(self, values: dict[str, str], base_dir: Path):
        self.values = values
        self.base_dir = base_dir

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        values: dict[str, str] = {}
        for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            values[key] = value.strip()
        return cls(values, path.parent.resolve())

    def has(self, key: str) -> bool:
        return key in self.values

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is not None:
            return default
        raise ConfigError(f"missing required config key: {key}")

    def get_float(self, key: str, default: float | None = None) -> float:
        raw = self.get(key, None if default is None else str(default))
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key} is not a number: {raw!r}") from None

    def get_int(self, key: str, default: int | None = None) -> int:
        raw = self.get(key, None if default is None else str(default))
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key} is not an integer: {raw!r}") from None

    def get_bool(self, key: str, default: bool | None = None) -> bool:
        raw = self.get(key, None if default is None else ("true" if default else "false"))
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key} is not a boolean: {raw!r}")

    def get_list(self, key: str, default: str | None = None) -> list[str]:
        raw = self.get(key, default)
        return [part.strip() for part in raw.split(",") if part.strip()]

    def get_path(self, key: str, must_exist: bool = True) -> Path:
        raw = self.get(key)
        p = Path(raw)
        if not p.is_absolute():
            p = self.base_dir / p
        if must_exist and not p.exists():
            raise ConfigError(f"config key {key} points to a missing path: {p}")
        return p

    def get_path_list(self, key: str, must_exist: bool = True) -> list[Path]:
        paths = []
        for raw in self.get_list(key):
            p = Path(raw)
            if not p.is_absolute():
                p = self.base_dir / p
            if must_exist and not p.exists():
                raise ConfigError(f"config key {key} points to a missing path: {p}")
            paths.append(p)
        if not paths:
            raise ConfigError(f"config key {key} lists no paths")
        return paths

    def output_dir(self) -> Path:
        p = Path(self.get("output_dir"))
        if not p.is_absolute():
            p = self.base_dir / p
        return p
