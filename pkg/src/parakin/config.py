"""Run configuration: flat ``[section]`` / ``key = value`` text with ``#`` comments.

Sections and keys::

    [geometry]   L0 L1 L2 L3 L4 theta_min theta_max
    [decomp]     max_depth samples_per_axis kappa_a kappa_b leaf_budget root_box
    [render]     width height palette
    [task.pp.NAME]  waypoints = x y; x y; ...
    [task.ct.NAME]  vertices = x y; x y; ...   step = <length>   (step optional)

A missing ``[geometry]`` section means the reference five-bar.  A present
one must give all five lengths.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources

from .celltree import CellBox, DecompositionConfig
from .kinematics import GeometryError, ManipulatorGeometry
from .regions import DEFAULT_ROOT
from .trajectory import ContinuousTask, PointToPointTask

PALETTES = ("gray", "color")


class ConfigError(ValueError):
    pass


class ParseError(ConfigError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.line = line
        self.field = field


class ValidationError(ConfigError):
    def __init__(self, invariant: str, message: str):
        super().__init__(f"{invariant}: {message}")
        self.invariant = invariant


@dataclass(frozen=True)
class RenderConfig:
    width: int = 900
    height: int = 600
    palette: str = "gray"


@dataclass(frozen=True)
class ContinuousSpec:
    task: ContinuousTask
    step: float | None = None


@dataclass(frozen=True)
class RunConfig:
    geometry: ManipulatorGeometry = field(default_factory=ManipulatorGeometry)
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    root: CellBox = DEFAULT_ROOT
    render: RenderConfig = field(default_factory=RenderConfig)
    pp_tasks: dict = field(default_factory=dict)
    ct_tasks: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Plain-data echo used in atlas files."""
        return {
            "geometry": asdict(self.geometry),
            "decomp": {**asdict(self.decomposition), "root_box": [*self.root.lo, *self.root.hi]},
            "render": asdict(self.render),
            "task.pp": {k: [list(p) for p in t.waypoints] for k, t in sorted(self.pp_tasks.items())},
            "task.ct": {
                k: {"vertices": [list(p) for p in s.task.vertices], "step": s.step}
                for k, s in sorted(self.ct_tasks.items())
            },
        }


def default_config_text() -> str:
    return resources.files("parakin").joinpath("data/five_bar.cfg").read_text(encoding="utf-8")


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        m = re.fullmatch(r"\[(.+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return i
    return None


class _Reader:
    def __init__(self, text: str, parser: configparser.ConfigParser):
        self.text = text
        self.parser = parser

    def fail(self, section, key, message):
        raise ParseError(message, _line_of(self.text, section, key), f"{section}.{key}")

    def get(self, section, key, conv, default):
        if not self.parser.has_option(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        try:
            return conv(raw)
        except (TypeError, ValueError) as exc:
            self.fail(section, key, f"cannot read {raw!r}: {exc}")

    def known(self, section, keys):
        for key in self.parser.options(section):
            if key not in keys:
                self.fail(section, key, "unknown key")


def _float(raw: str) -> float:
    value = float(raw)
    if not math.isfinite(value):
        raise ValueError("value must be finite")
    return value


def _int(raw: str) -> int:
    value = float(raw)
    if value != int(value):
        raise ValueError("value must be an integer")
    return int(value)


def _points(raw: str) -> list[tuple[float, float]]:
    pts = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.replace(",", " ").split()
        if len(parts) != 2:
            raise ValueError(f"expected 'x y', got {chunk!r}")
        pts.append((_float(parts[0]), _float(parts[1])))
    return pts


def parse_config(text: str) -> RunConfig:
    """Parse and validate a run configuration; omitted fields take defaults."""
    parser = configparser.ConfigParser(
        comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None, default_section="__none__"
    )
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("key outside of any [section]", exc.lineno) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ParseError(exc.message.splitlines()[0], exc.lineno) from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ParseError("malformed line", lineno) from None
    r = _Reader(text, parser)

    geometry = ManipulatorGeometry()
    if parser.has_section("geometry"):
        keys = ("L0", "L1", "L2", "L3", "L4", "theta_min", "theta_max")
        r.known("geometry", keys)
        missing = [k for k in keys[:5] if not parser.has_option("geometry", k)]
        if missing:
            raise ValidationError("lengths", f"geometry block lacks {', '.join(missing)}")
        values = {k: r.get("geometry", k, _float, getattr(geometry, k)) for k in keys}
        try:
            geometry = ManipulatorGeometry(**values)
        except GeometryError as exc:
            invariant, _, message = str(exc).partition(": ")
            raise ValidationError(invariant, message) from None

    decomposition = DecompositionConfig()
    root = DEFAULT_ROOT
    if parser.has_section("decomp"):
        keys = ("max_depth", "samples_per_axis", "kappa_a", "kappa_b", "leaf_budget", "root_box")
        r.known("decomp", keys)
        d = DecompositionConfig()
        values = dict(
            max_depth=r.get("decomp", "max_depth", _int, d.max_depth),
            samples_per_axis=r.get("decomp", "samples_per_axis", _int, d.samples_per_axis),
            kappa_a=r.get("decomp", "kappa_a", _float, d.kappa_a),
            kappa_b=r.get("decomp", "kappa_b", _float, d.kappa_b),
            leaf_budget=r.get("decomp", "leaf_budget", _int, d.leaf_budget),
        )
        try:
            decomposition = DecompositionConfig(**values)
        except ValueError as exc:
            raise ValidationError("decomp", str(exc)) from None
        box = r.get("decomp", "root_box", lambda s: [_float(v) for v in s.replace(",", " ").split()], None)
        if box is not None:
            if len(box) != 4:
                raise ValidationError("root_box", "expected 'lo_x lo_y hi_x hi_y'")
            try:
                root = CellBox(tuple(box[:2]), tuple(box[2:]))
            except ValueError as exc:
                raise ValidationError("root_box", str(exc)) from None

    render = RenderConfig()
    if parser.has_section("render"):
        r.known("render", ("width", "height", "palette"))
        render = RenderConfig(
            width=r.get("render", "width", _int, render.width),
            height=r.get("render", "height", _int, render.height),
            palette=r.get("render", "palette", str, render.palette),
        )
        if render.width < 1 or render.height < 1:
            raise ValidationError("render", "width and height must be positive")
        if render.palette not in PALETTES:
            raise ValidationError("render", f"palette must be one of {PALETTES}")

    pp_tasks, ct_tasks = {}, {}
    for section in parser.sections():
        if section in ("geometry", "decomp", "render"):
            continue
        kind, _, name = section.partition(".")[2].partition(".")
        if not section.startswith("task.") or kind not in ("pp", "ct") or not name:
            raise ParseError(f"unknown section [{section}]", _section_line(text, section))
        if kind == "pp":
            r.known(section, ("waypoints",))
            pts = r.get(section, "waypoints", _points, [])
            if not pts:
                raise ValidationError("waypoints", f"task {name!r} needs at least one waypoint")
            pp_tasks[name] = PointToPointTask(tuple(pts))
        else:
            r.known(section, ("vertices", "step"))
            pts = r.get(section, "vertices", _points, [])
            if len(pts) < 2:
                raise ValidationError("vertices", f"task {name!r} needs at least two vertices")
            step = r.get(section, "step", _float, None)
            if step is not None and step <= 0:
                raise ValidationError("step", f"task {name!r} needs a positive step")
            ct_tasks[name] = ContinuousSpec(ContinuousTask(tuple(pts)), step)

    return RunConfig(geometry, decomposition, root, render, pp_tasks, ct_tasks)


def _section_line(text: str, section: str) -> int | None:
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{section}]":
            return i
    return None


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config(default_config_text())
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
