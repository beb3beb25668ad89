"""Scenario and hierarchy file parsing.

Two file kinds are understood:

* the class hierarchy, an XML document with one ``<class>`` element per
  tree node and the per-class settings as child elements (``rate``,
  ``ceil``, ``burst``, ``cburst``, ``parentId``, ``level``, ``quantum``,
  ``mbuffer``, ``priority``, ``queueNum``);
* the scenario description, a line-oriented ``key = value`` file with
  ``source`` and ``filter`` directives, referencing the hierarchy by path.

Rates accept ``bps``/``kbps``/``Mbps``/``Gbps`` (``bit/s`` spellings too)
and bare integers are bits per second.  Durations accept ``ns``/``us``/
``ms``/``s``; bare integers are nanoseconds.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .classify import FlowFilter
from .core import NUM_PRIOS, HtbClassConfig

SECOND_NS = 1_000_000_000


class ConfigError(ValueError):
    """Parse failure, annotated with file/line context when known."""

    def __init__(self, message: str, source: Optional[str] = None,
                 line: Optional[int] = None) -> None:
        prefix = ""
        if source is not None:
            prefix = source if line is None else f"{source}:{line}"
            prefix += ": "
        super().__init__(prefix + message)


_RATE_SUFFIXES = {
    "bps": 1, "bit/s": 1,
    "kbps": 10**3, "kbit/s": 10**3,
    "mbps": 10**6, "mbit/s": 10**6,
    "gbps": 10**9, "gbit/s": 10**9,
}

_DURATION_SUFFIXES = {
    "ns": 1,
    "us": 10**3, "µs": 10**3,
    "ms": 10**6,
    "s": 10**9,
}

_NUMBER_RE = re.compile(r"^([0-9]+(?:\.[0-9]+)?)\s*([a-zA-Zµ/]*)$")


def parse_rate(text: str) -> int:
    """Parse a bitrate into integer bits per second."""
    m = _NUMBER_RE.match(text.strip())
    if not m:
        raise ValueError(f"malformed rate {text!r}")
    value, suffix = m.groups()
    if not suffix:
        factor = 1
    else:
        factor = _RATE_SUFFIXES.get(suffix.lower())
        if factor is None:
            raise ValueError(f"unknown rate unit {suffix!r}")
    bps = Fraction(value) * factor
    if bps.denominator != 1:
        raise ValueError(f"rate {text!r} is not a whole number of bits per second")
    return int(bps)


def parse_duration(text: str) -> int:
    """Parse a duration into integer nanoseconds."""
    m = _NUMBER_RE.match(text.strip())
    if not m:
        raise ValueError(f"malformed duration {text!r}")
    value, suffix = m.groups()
    if not suffix:
        factor = 1
    else:
        factor = _DURATION_SUFFIXES.get(suffix.lower().replace("μ", "µ"))
        if factor is None:
            raise ValueError(f"unknown duration unit {suffix!r}")
    ns = Fraction(value) * factor
    if ns.denominator != 1:
        raise ValueError(f"duration {text!r} is not a whole number of nanoseconds")
    return int(ns)


def format_rate(bps: int) -> str:
    for suffix, factor in (("Gbps", 10**9), ("Mbps", 10**6), ("kbps", 10**3)):
        if bps % factor == 0 and bps >= factor:
            return f"{bps // factor}{suffix}"
    return str(bps)


def format_duration(ns: int) -> str:
    for suffix, factor in (("s", 10**9), ("ms", 10**6), ("us", 10**3)):
        if ns % factor == 0 and ns >= factor:
            return f"{ns // factor}{suffix}"
    return str(ns)


# -- hierarchy XML ---------------------------------------------------------

_CLASS_FIELDS = {
    "name", "rate", "ceil", "burst", "cburst", "parentId",
    "level", "quantum", "mbuffer", "priority", "queueNum",
}
_REQUIRED_FIELDS = {"name", "rate", "ceil", "parentId", "level"}
_LEAF_ONLY_FIELDS = {"priority", "queueNum"}


def parse_hierarchy(text: str, source: str = "<hierarchy>") -> list[HtbClassConfig]:
    """Parse the class hierarchy XML into per-class configs.

    Naming rules are enforced here: the top class must be called ``root``
    and inner/leaf classes must carry ``inner``/``leaf`` in their names.
    """
    try:
        doc = ET.fromstring(text)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else None
        raise ConfigError(f"invalid XML: {exc}", source, line) from None

    configs: list[HtbClassConfig] = []
    names: set[str] = set()
    for elem in doc.iter("class"):
        fields: dict[str, str] = {}
        for child in elem:
            if child.tag not in _CLASS_FIELDS:
                raise ConfigError(f"unknown field {child.tag!r} in class element", source)
            if child.tag in fields:
                raise ConfigError(f"repeated field {child.tag!r}", source)
            fields[child.tag] = (child.text or "").strip()
        missing = _REQUIRED_FIELDS - fields.keys()
        if missing:
            raise ConfigError(
                f"class element missing required field(s): {', '.join(sorted(missing))}",
                source)
        name = fields["name"]
        if not name:
            raise ConfigError("class element with empty name", source)
        if name in names:
            raise ConfigError(f"duplicate class name {name!r}", source)
        names.add(name)

        parent = fields["parentId"]
        is_root = parent.upper() == "NULL" or parent == ""
        try:
            level = int(fields["level"])
            cfg = HtbClassConfig(
                name=name,
                rate=parse_rate(fields["rate"]),
                ceil=parse_rate(fields["ceil"]),
                parent=None if is_root else parent,
                level=level,
                burst=int(fields["burst"]) if "burst" in fields else None,
                cburst=int(fields["cburst"]) if "cburst" in fields else None,
                quantum=int(fields["quantum"]) if "quantum" in fields else None,
                mbuffer=parse_duration(fields["mbuffer"]) if "mbuffer" in fields else None,
                priority=int(fields["priority"]) if "priority" in fields else None,
                queue_index=int(fields["queueNum"]) if "queueNum" in fields else None,
            )
        except ValueError as exc:
            raise ConfigError(f"class {name!r}: {exc}", source) from None

        is_leaf_name = "leaf" in name
        if is_root:
            if name != "root":
                raise ConfigError(f"top class must be named 'root', got {name!r}", source)
        elif level == 0:
            if not is_leaf_name:
                raise ConfigError(
                    f"leaf class name must contain 'leaf', got {name!r}", source)
        else:
            if "inner" not in name:
                raise ConfigError(
                    f"inner class name must contain 'inner', got {name!r}", source)
        if not is_leaf_name or is_root:
            present = _LEAF_ONLY_FIELDS & fields.keys()
            if present:
                raise ConfigError(
                    f"class {name!r}: field(s) {', '.join(sorted(present))} "
                    "are leaf-only", source)
        elif "queueNum" not in fields:
            raise ConfigError(f"leaf class {name!r} missing queueNum", source)

        configs.append(cfg)

    if not configs:
        raise ConfigError("no class elements found", source)
    return configs


def serialize_hierarchy(configs: list[HtbClassConfig]) -> str:
    """Render configs back to the XML form accepted by ``parse_hierarchy``."""
    doc = ET.Element("config")
    for cfg in configs:
        elem = ET.SubElement(doc, "class")
        ET.SubElement(elem, "name").text = cfg.name
        ET.SubElement(elem, "rate").text = str(cfg.rate)
        ET.SubElement(elem, "ceil").text = str(cfg.ceil)
        if cfg.burst is not None:
            ET.SubElement(elem, "burst").text = str(cfg.burst)
        if cfg.cburst is not None:
            ET.SubElement(elem, "cburst").text = str(cfg.cburst)
        ET.SubElement(elem, "parentId").text = cfg.parent if cfg.parent else "NULL"
        ET.SubElement(elem, "level").text = str(cfg.level)
        if cfg.quantum is not None:
            ET.SubElement(elem, "quantum").text = str(cfg.quantum)
        if cfg.mbuffer is not None:
            ET.SubElement(elem, "mbuffer").text = str(cfg.mbuffer)
        if cfg.priority is not None:
            ET.SubElement(elem, "priority").text = str(cfg.priority)
        if cfg.queue_index is not None:
            ET.SubElement(elem, "queueNum").text = str(cfg.queue_index)
    ET.indent(doc)
    return ET.tostring(doc, encoding="unicode") + "\n"


# -- scenario description ----------------------------------------------------


@dataclass
class CbrSource:
    """Constant-bitrate source: one ``packet_size`` packet every ``interval``
    within ``[start, stop)``."""

    flow_id: int
    start: int               # ns
    stop: int                # ns
    packet_size: int         # bytes
    interval: int            # ns
    src: Optional[str] = None
    dst: Optional[str] = None

    @property
    def offered_bps(self) -> float:
        return self.packet_size * 8 * SECOND_NS / self.interval


@dataclass
class Scenario:
    name: str
    hierarchy: list[HtbClassConfig]
    hierarchy_path: str
    link_rate: int
    sources: list[CbrSource] = field(default_factory=list)
    filters: list[FlowFilter] = field(default_factory=list)
    horizon: int = 0
    queue_capacity: int = 500
    report_window: int = SECOND_NS


def _parse_directive(parts: list[str], source: str, line_no: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for part in parts:
        if "=" not in part:
            raise ConfigError(f"expected key=value, got {part!r}", source, line_no)
        key, value = part.split("=", 1)
        if key in out:
            raise ConfigError(f"repeated key {key!r}", source, line_no)
        out[key] = value
    return out


def _require(kv: dict[str, str], keys: list[str], what: str,
             source: str, line_no: int) -> None:
    missing = [k for k in keys if k not in kv]
    if missing:
        raise ConfigError(f"{what} missing {', '.join(missing)}", source, line_no)


def parse_scenario(text: str, hierarchy_text: str, name: str = "<scenario>",
                   hierarchy_name: str = "<hierarchy>") -> Scenario:
    """Parse a scenario description given its hierarchy document."""
    link_rate: Optional[int] = None
    horizon: Optional[int] = None
    queue_capacity = 500
    report_window = SECOND_NS
    hierarchy_path = ""
    sources: list[CbrSource] = []
    filters: list[FlowFilter] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "source":
                kv = _parse_directive(parts[1:], name, line_no)
                _require(kv, ["flow", "start", "stop", "packet_size", "interval"],
                         "source", name, line_no)
                sources.append(CbrSource(
                    flow_id=int(kv["flow"]),
                    start=parse_duration(kv["start"]),
                    stop=parse_duration(kv["stop"]),
                    packet_size=int(kv["packet_size"]),
                    interval=parse_duration(kv["interval"]),
                    src=kv.get("src"),
                    dst=kv.get("dst"),
                ))
            elif parts[0] == "filter":
                kv = _parse_directive(parts[1:], name, line_no)
                _require(kv, ["leaf"], "filter", name, line_no)
                filters.append(FlowFilter(
                    target_leaf=kv["leaf"],
                    flow_id=int(kv["flow"]) if "flow" in kv else None,
                    src=kv.get("src"),
                    dst=kv.get("dst"),
                ))
            elif "=" in line:
                key, value = (s.strip() for s in line.split("=", 1))
                if key == "hierarchy":
                    hierarchy_path = value
                elif key == "link_rate":
                    link_rate = parse_rate(value)
                elif key == "horizon":
                    horizon = parse_duration(value)
                elif key == "queue_capacity":
                    queue_capacity = int(value)
                elif key == "report_window":
                    report_window = parse_duration(value)
                else:
                    raise ConfigError(f"unknown setting {key!r}", name, line_no)
            else:
                raise ConfigError(f"unparseable line {line!r}", name, line_no)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc), name, line_no) from None

    if link_rate is None:
        raise ConfigError("missing link_rate", name)
    if horizon is None:
        raise ConfigError("missing horizon", name)
    if report_window <= 0:
        raise ConfigError("report_window must be positive", name)
    if queue_capacity <= 0:
        raise ConfigError("queue_capacity must be positive", name)

    hierarchy = parse_hierarchy(hierarchy_text, hierarchy_name)
    return Scenario(
        name=name,
        hierarchy=hierarchy,
        hierarchy_path=hierarchy_path,
        link_rate=link_rate,
        sources=sources,
        filters=filters,
        horizon=horizon,
        queue_capacity=queue_capacity,
        report_window=report_window,
    )


def validate(scenario: Scenario) -> list[str]:
    """Semantic checks; returns a list of violations (empty means valid)."""
    violations: list[str] = []
    by_name = {cfg.name: cfg for cfg in scenario.hierarchy}

    for cfg in scenario.hierarchy:
        if cfg.ceil < cfg.rate:
            violations.append(f"{cfg.name}: ceiling below assured ({cfg.ceil} < {cfg.rate})")
        if cfg.priority is not None and not 0 <= cfg.priority < NUM_PRIOS:
            violations.append(f"{cfg.name}: priority {cfg.priority} out of 0..7")

    children: dict[str, list[HtbClassConfig]] = {}
    for cfg in scenario.hierarchy:
        if cfg.parent is not None:
            if cfg.parent not in by_name:
                violations.append(f"{cfg.name}: unknown parent {cfg.parent!r}")
                continue
            children.setdefault(cfg.parent, []).append(cfg)
    for parent_name, kids in children.items():
        parent = by_name[parent_name]
        total = sum(k.rate for k in kids)
        if total > parent.rate:
            violations.append(
                f"{parent_name}: children assured sum {total} exceeds parent {parent.rate}")

    leaves = [cfg for cfg in scenario.hierarchy
              if cfg.name not in children and cfg.parent is not None]
    queue_nums = [cfg.queue_index for cfg in leaves]
    if None in queue_nums:
        holders = [cfg.name for cfg in leaves if cfg.queue_index is None]
        violations.append(f"leaf class(es) without queue index: {', '.join(holders)}")
    else:
        expected = set(range(len(leaves)))
        seen: set[int] = set()
        for cfg in leaves:
            if cfg.queue_index in seen:
                violations.append(f"duplicate queue index {cfg.queue_index}")
            seen.add(cfg.queue_index)
        if seen != expected and len(seen) == len(leaves):
            violations.append(
                f"queue indices {sorted(seen)} do not cover 0..{len(leaves) - 1}")

    leaf_names = {cfg.name for cfg in leaves}
    for f in scenario.filters:
        if f.target_leaf not in leaf_names:
            violations.append(f"filter targets unknown leaf {f.target_leaf!r}")

    from .classify import classify  # local import to avoid cycle at module load

    for src in scenario.sources:
        leaf = classify(scenario.filters, src)
        if leaf is None:
            violations.append(f"flow {src.flow_id}: no filter matches")
        if src.stop > scenario.horizon:
            violations.append(
                f"flow {src.flow_id}: stop {src.stop} ns beyond horizon {scenario.horizon} ns")
        if src.interval <= 0:
            violations.append(f"flow {src.flow_id}: non-positive interval")
        if src.packet_size <= 0:
            violations.append(f"flow {src.flow_id}: non-positive packet size")

    flow_ids = [s.flow_id for s in scenario.sources]
    if len(set(flow_ids)) != len(flow_ids):
        violations.append("duplicate flow ids among sources")

    return violations
