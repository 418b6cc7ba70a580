"""Key-value config files: `key = value` lines, `#` comments, blank lines ignored."""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Malformed config input, annotated with file position."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where = f" ({where})"
        super().__init__(message + where)
        self.path = path
        self.line = line


def parse_kv_text(text: str, path: str | None = None) -> dict[str, str]:
    cfg: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("empty key", path, lineno)
        if key in cfg:
            raise ConfigError(f"duplicate key {key!r}", path, lineno)
        cfg[key] = value.strip()
    return cfg


def load_config(path: str | Path) -> dict[str, str]:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(p)) from exc
    return parse_kv_text(text, str(p))


def get_float_list(cfg: dict, key: str, default: list[float] | None = None) -> list[float]:
    if key not in cfg:
        if default is None:
            raise ConfigError(f"missing required key {key!r}")
        return list(default)
    raw = str(cfg[key])
    try:
        return [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: expected a list of numbers, got {raw!r}") from exc


def get_int_list(cfg: dict, key: str, default: list[int] | None = None) -> list[int]:
    floats = get_float_list(cfg, key, None if default is None else [float(v) for v in default])
    out = []
    for v in floats:
        if v != int(v):
            raise ConfigError(f"key {key!r}: expected integers, got {v}")
        out.append(int(v))
    return out
