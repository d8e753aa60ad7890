"""INI experiment configs, stable hashing and atomic CSV/JSON output."""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .errors import ConfigError

OUT_DIR_ENV = "KINLMC_OUT_DIR"

SECTIONS = ("experiment", "target", "kernel", "regime", "schedule", "grids", "constants")


@dataclass
class ExperimentConfig:
    seed: int
    target: dict[str, str] = field(default_factory=dict)
    kernel: dict[str, str] = field(default_factory=dict)
    regime: dict[str, str] = field(default_factory=dict)
    schedule: dict[str, str] = field(default_factory=dict)
    grids: dict[str, list[float]] = field(default_factory=dict)
    constants: dict[str, float] = field(default_factory=dict)
    output: str | None = None
    extra: dict[str, dict[str, str]] = field(default_factory=dict)
    source: str | None = None

    def as_dict(self) -> dict[str, Any]:
        return {"seed": self.seed, "target": self.target, "kernel": self.kernel, "regime": self.regime,
                "schedule": self.schedule, "grids": self.grids, "constants": self.constants,
                "output": self.output, "extra": self.extra}

    @property
    def hash(self) -> str:
        return config_hash(self.as_dict())


def parse_list(raw: str) -> list[float]:
    try:
        return [float(v) for v in raw.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"not a list of numbers: {raw!r}") from None


def read_ini(path: str | os.PathLike) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return cp


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    """Read an experiment config; the ``experiment`` section must carry a seed."""
    cp = read_ini(path)
    exp = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    if "seed" not in exp:
        raise ConfigError(f"{path}: [experiment] seed is required")
    try:
        seed = int(exp["seed"])
    except ValueError:
        raise ConfigError(f"{path}: seed must be an integer") from None
    grids = {}
    if cp.has_section("grids"):
        for key, raw in cp["grids"].items():
            grids[key] = parse_list(raw)
            if not grids[key]:
                raise ConfigError(f"{path}: grid {key!r} is empty")
    constants = {}
    if cp.has_section("constants"):
        for key, raw in cp["constants"].items():
            try:
                constants[key] = float(raw)
            except ValueError:
                raise ConfigError(f"{path}: constant {key!r} is not a number") from None
    sect = {s: dict(cp[s]) if cp.has_section(s) else {} for s in ("target", "kernel", "regime", "schedule")}
    extra = {s: dict(cp[s]) for s in cp.sections() if s not in SECTIONS}
    return ExperimentConfig(seed=seed, grids=grids, constants=constants, output=exp.get("output"),
                            extra=extra, source=str(path), **sect)


def config_hash(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def resolve_output(path: str | os.PathLike) -> Path:
    """Relative output paths are placed under $KINLMC_OUT_DIR when it is set."""
    p = Path(path)
    base = os.environ.get(OUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    return p


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    if isinstance(v, float) or hasattr(v, "dtype"):
        f = float(v)
        return repr(f) if f == f else "nan"
    return str(v)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence], cfg_hash: str, seed: int) -> str:
    lines = [f"# config_hash={cfg_hash} seed={seed}", ",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise ValueError("row length does not match the header")
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], cfg_hash: str, seed: int) -> Path:
    return atomic_write_text(path, csv_text(columns, rows, cfg_hash, seed))


def write_json(path, obj: Any) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n")
