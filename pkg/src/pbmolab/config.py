"""Sectioned ``key = value`` experiment configuration.

Example::

    [experiment]
    seed = 0
    out = out/heat

    [domain]
    shape = box          ; box | disk | lshape | file
    bounds = 0,1
    h = 1/64

    [cylinder]
    T = 0.5
    delta = 0.05
    sigma = 1
    p = 2

Numbers may be written as fractions (``1/64``). Keys are case sensitive.
Module sections (``[chain]``, ``[jn]``, ...) are read with typed getters
and fall back to documented defaults.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .geometry import SpatialDomain, box_domain, disk_domain, l_domain


class ConfigError(ValueError):
    """Malformed or out-of-range configuration."""


def number(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


def numbers(text: str) -> tuple[float, ...]:
    return tuple(number(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class Section:
    name: str
    items: dict[str, str] = field(default_factory=dict)

    def num(self, key: str, default: float) -> float:
        return number(self.items[key]) if key in self.items else float(default)

    def integer(self, key: str, default: int) -> int:
        if key not in self.items:
            return int(default)
        try:
            return int(self.items[key])
        except ValueError as exc:
            raise ConfigError(f"[{self.name}] {key} must be an integer") from exc

    def text(self, key: str, default: str) -> str:
        return self.items.get(key, default).strip()

    def floats(self, key: str, default: tuple[float, ...]) -> tuple[float, ...]:
        return numbers(self.items[key]) if key in self.items else tuple(default)

    def flag(self, key: str, default: bool) -> bool:
        if key not in self.items:
            return default
        v = self.items[key].strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"[{self.name}] {key} must be a boolean")


@dataclass(frozen=True)
class CylinderConfig:
    T: float
    delta: float
    sigma: float
    p: float

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("T must be positive")
        if not 0 < self.delta < self.T:
            raise ConfigError("delta must lie in (0, T)")
        if not self.sigma >= 1:
            raise ConfigError("sigma must be at least 1")
        if not self.p > 1:
            raise ConfigError("p must exceed 1")


@dataclass(frozen=True)
class ExperimentConfig:
    path: Path | None
    sections: dict[str, Section]
    seed: int
    out: Path
    refine: int
    cylinder: CylinderConfig

    def section(self, name: str) -> Section:
        return self.sections.get(name, Section(name))

    @property
    def domain_file(self) -> Path | None:
        d = self.section("domain")
        return self.resolve(d.items["file"]) if d.text("shape", "box") == "file" else None

    def resolve(self, name: str) -> Path:
        """Paths inside the config are relative to the config file."""
        p = Path(name.strip())
        if not p.is_absolute() and self.path is not None:
            p = self.path.parent / p
        return p

    def canonical(self) -> str:
        """Normalized text: sorted sections and keys, overrides applied, output path left out."""
        lines = []
        for name in sorted(self.sections):
            lines.append(f"[{name}]")
            for k in sorted(self.sections[name].items):
                if name == "experiment" and k == "out":
                    continue
                lines.append(f"{k} = {self.sections[name].items[k].strip()}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def build_domain(self, extra_refine: int = 1) -> SpatialDomain:
        """The spatial domain, refined by ``refine * extra_refine``."""
        from .formats import read_mask

        d = self.section("domain")
        k = self.refine * extra_refine
        shape = d.text("shape", "box")
        if shape == "file":
            origin = d.floats("origin", ()) or None
            return read_mask(self.domain_file, origin).refine(k)
        h = d.num("h", 1 / 64) / k
        if not h > 0:
            raise ConfigError("h must be positive")
        if shape == "box":
            b = d.floats("bounds", (0.0, 1.0))
            if len(b) not in (2, 4) or any(hi <= lo for lo, hi in zip(b[::2], b[1::2])):
                raise ConfigError("bounds must be lo,hi[,lo,hi] with lo < hi")
            return box_domain(list(zip(b[::2], b[1::2])), h)
        if shape == "disk":
            return disk_domain(d.num("radius", 1.0), h, d.floats("center", (0.0, 0.0)))
        if shape == "lshape":
            return l_domain(h, d.num("size", 1.0))
        raise ConfigError(f"unknown domain shape {shape!r}")


def parse_config(text: str, path: Path | None = None, seed: int | None = None,
                 out: str | None = None, refine: int | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    sections = {s: Section(s, dict(cp[s])) for s in cp.sections()}
    exp = dict(sections.get("experiment", Section("experiment")).items)
    if seed is not None:
        exp["seed"] = str(seed)
    if out is not None:
        exp["out"] = out
    if refine is not None:
        exp["refine"] = str(refine)
    sections["experiment"] = Section("experiment", exp)
    e = sections["experiment"]
    seed_v = e.integer("seed", 0)
    if not 0 <= seed_v < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    refine_v = e.integer("refine", 1)
    if refine_v < 1:
        raise ConfigError("refine must be at least 1")
    c = sections.get("cylinder", Section("cylinder"))
    cyl = CylinderConfig(c.num("T", 1.0), c.num("delta", 0.05), c.num("sigma", 1.0), c.num("p", 2.0))
    cfg = ExperimentConfig(path, sections, seed_v, Path(e.text("out", "out")), refine_v, cyl)
    if cfg.section("domain").text("shape", "box") == "file":
        if "file" not in cfg.section("domain").items:
            raise ConfigError("[domain] shape = file needs a file key")
        if not cfg.domain_file.exists():
            raise ConfigError(f"domain file {cfg.domain_file} does not exist")
    src = cfg.section("field").text("source", "solve")
    if src.startswith("file:") and not cfg.resolve(src[5:]).exists():
        raise ConfigError(f"field file {src[5:]} does not exist")
    bnd = cfg.section("solve").text("boundary", "exact:heat_exp")
    if bnd.startswith("file:") and not cfg.resolve(bnd[5:]).exists():
        raise ConfigError(f"boundary file {bnd[5:]} does not exist")
    return cfg


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, path, **overrides)
