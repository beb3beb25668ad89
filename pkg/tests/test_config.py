"""Hierarchy XML and scenario file parsing plus semantic validation."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from htbsim.config import (ConfigError, format_duration, format_rate,
                           parse_duration, parse_hierarchy, parse_rate,
                           parse_scenario, serialize_hierarchy, validate)

MBPS = 10**6


def class_xml(name, rate="3Mbps", ceil="20Mbps", parent="root", level=0,
              extra="", leaf_fields=True):
    fields = [f"<name>{name}</name>", f"<rate>{rate}</rate>",
              f"<ceil>{ceil}</ceil>", f"<parentId>{parent}</parentId>",
              f"<level>{level}</level>"]
    if leaf_fields:
        fields.append("<priority>7</priority>")
        fields.append(f"<queueNum>{name[-1] if name[-1].isdigit() else 0}</queueNum>")
    fields.append(extra)
    return "<class>" + "".join(fields) + "</class>"


ROOT_XML = ("<class><name>root</name><rate>50Mbps</rate><ceil>50Mbps</ceil>"
            "<parentId>NULL</parentId><level>1</level></class>")


def wrap(*classes):
    return "<config>" + "".join(classes) + "</config>"


# -- units -------------------------------------------------------------------


def test_rate_units():
    assert parse_rate("50Mbps") == 50_000_000
    assert parse_rate("50Mbit/s") == 50_000_000
    assert parse_rate("3000kbps") == 3_000_000_000 // 1000
    assert parse_rate("1500") == 1500
    assert parse_rate("2.5Mbps") == 2_500_000
    with pytest.raises(ValueError):
        parse_rate("fast")
    with pytest.raises(ValueError):
        parse_rate("3furlongs")


def test_duration_units():
    assert parse_duration("100us") == 100_000
    assert parse_duration("1s") == 1_000_000_000
    assert parse_duration("60s") == 60_000_000_000
    assert parse_duration("12ms") == 12_000_000
    assert parse_duration("42") == 42
    with pytest.raises(ValueError):
        parse_duration("later")


@given(bps=st.integers(1, 10**10))
@settings(max_examples=60, deadline=None)
def test_rate_format_round_trip(bps):
    assert parse_rate(format_rate(bps)) == bps


@given(ns=st.integers(1, 10**12))
@settings(max_examples=60, deadline=None)
def test_duration_format_round_trip(ns):
    assert parse_duration(format_duration(ns)) == ns


# -- hierarchy parsing ----------------------------------------------------------


def test_parse_two_inner_hierarchy():
    # root + two inner classes + five leaves: eight configs
    xml = wrap(
        "<class><name>root</name><rate>50Mbps</rate><ceil>50Mbps</ceil>"
        "<parentId>NULL</parentId><level>2</level></class>",
        "<class><name>inner1</name><rate>20Mbps</rate><ceil>40Mbps</ceil>"
        "<parentId>root</parentId><level>1</level></class>",
        "<class><name>inner2</name><rate>30Mbps</rate><ceil>40Mbps</ceil>"
        "<parentId>root</parentId><level>1</level></class>",
        *[class_xml(f"leaf{i}", parent="inner1" if i < 3 else "inner2")
          for i in range(5)],
    )
    configs = parse_hierarchy(xml)
    assert len(configs) == 8
    by_name = {c.name: c for c in configs}
    assert by_name["inner1"].rate == 20 * MBPS
    assert by_name["inner2"].ceil == 40 * MBPS
    assert by_name["leaf4"].parent == "inner2"
    assert by_name["leaf2"].queue_index == 2
    assert by_name["root"].parent is None


def test_inner_name_rule_enforced():
    xml = wrap(ROOT_XML,
               "<class><name>middle1</name><rate>20Mbps</rate><ceil>40Mbps</ceil>"
               "<parentId>root</parentId><level>1</level></class>")
    with pytest.raises(ConfigError, match="inner class name must contain 'inner'"):
        parse_hierarchy(xml)


def test_leaf_name_rule_enforced():
    xml = wrap(ROOT_XML,
               "<class><name>flow0</name><rate>3Mbps</rate><ceil>20Mbps</ceil>"
               "<parentId>root</parentId><level>0</level>"
               "<priority>7</priority><queueNum>0</queueNum></class>")
    with pytest.raises(ConfigError, match="leaf class name must contain 'leaf'"):
        parse_hierarchy(xml)


def test_root_name_rule_enforced():
    xml = wrap("<class><name>top</name><rate>50Mbps</rate><ceil>50Mbps</ceil>"
               "<parentId>NULL</parentId><level>1</level></class>")
    with pytest.raises(ConfigError, match="must be named 'root'"):
        parse_hierarchy(xml)


def test_leaf_missing_queue_num_rejected():
    xml = wrap(ROOT_XML,
               "<class><name>leaf0</name><rate>3Mbps</rate><ceil>20Mbps</ceil>"
               "<parentId>root</parentId><level>0</level>"
               "<priority>7</priority></class>")
    with pytest.raises(ConfigError, match="missing queueNum"):
        parse_hierarchy(xml)


def test_unknown_field_rejected():
    xml = wrap(ROOT_XML.replace("</class>", "<color>blue</color></class>"))
    with pytest.raises(ConfigError, match="unknown field"):
        parse_hierarchy(xml)


def test_missing_required_field_rejected():
    xml = wrap("<class><name>root</name><rate>50Mbps</rate>"
               "<parentId>NULL</parentId><level>1</level></class>")
    with pytest.raises(ConfigError, match="missing required"):
        parse_hierarchy(xml)


def test_non_numeric_value_rejected():
    xml = wrap(ROOT_XML.replace("50Mbps", "lots", 1))
    with pytest.raises(ConfigError, match="root"):
        parse_hierarchy(xml)


def test_priority_on_inner_rejected():
    xml = wrap(ROOT_XML,
               "<class><name>inner1</name><rate>20Mbps</rate><ceil>40Mbps</ceil>"
               "<parentId>root</parentId><level>1</level>"
               "<priority>3</priority></class>")
    with pytest.raises(ConfigError, match="leaf-only"):
        parse_hierarchy(xml)


def test_malformed_xml_reports_line():
    with pytest.raises(ConfigError, match="invalid XML"):
        parse_hierarchy("<config><class></config>", source="bad.xml")


def test_round_trip_parse_serialize_parse():
    xml = wrap(ROOT_XML, *[class_xml(f"leaf{i}") for i in range(3)])
    first = parse_hierarchy(xml)
    second = parse_hierarchy(serialize_hierarchy(first))
    assert first == second


# -- scenario parsing -------------------------------------------------------------


SCN = """
# comment line
hierarchy = h.xml
link_rate = 50Mbps
horizon = 140s
queue_capacity = 400
report_window = 1s

source flow=0 start=0s stop=100s packet_size=1500 interval=100us
filter flow=0 leaf=leaf0
"""

HIER = wrap(ROOT_XML, class_xml("leaf0"))


def test_parse_scenario_fields():
    s = parse_scenario(SCN, HIER, name="s", hierarchy_name="h")
    assert s.link_rate == 50 * MBPS
    assert s.horizon == 140 * 10**9
    assert s.queue_capacity == 400
    assert len(s.sources) == 1 and len(s.filters) == 1
    assert s.sources[0].interval == 100_000
    assert s.sources[0].offered_bps == 120 * MBPS


def test_scenario_requires_link_rate():
    with pytest.raises(ConfigError, match="link_rate"):
        parse_scenario("horizon = 1s\n", HIER)


def test_scenario_bad_line_has_context():
    with pytest.raises(ConfigError, match=r"s:2"):
        parse_scenario("link_rate = 50Mbps\nnonsense here\n", HIER, name="s")


def test_scenario_source_missing_key():
    with pytest.raises(ConfigError, match="source missing"):
        parse_scenario("source flow=0 start=0s\n", HIER)


# -- validation ----------------------------------------------------------------------


def scenario_for(hier_xml, scn=SCN):
    return parse_scenario(scn, hier_xml)


def test_validate_two_leaf_priority_hierarchy_ok():
    # root 50/50 with two 5/30 leaves, one prioritized
    xml = wrap(ROOT_XML,
               class_xml("leaf0", rate="5Mbps", ceil="30Mbps"),
               class_xml("leaf1", rate="5Mbps", ceil="30Mbps"))
    scn = SCN + "source flow=1 start=10s stop=110s packet_size=1500 interval=100us\n" \
                "filter flow=1 leaf=leaf1\n"
    assert validate(scenario_for(xml, scn)) == []


def test_validate_flags_ceiling_below_assured():
    xml = wrap(ROOT_XML, class_xml("leaf0", rate="25Mbps", ceil="20Mbps"))
    violations = validate(scenario_for(xml))
    assert any("ceiling below assured" in v for v in violations)


def test_validate_flags_duplicate_queue_index():
    xml = wrap(ROOT_XML,
               class_xml("leaf0", extra=""),
               class_xml("leaf1").replace("<queueNum>1</queueNum>",
                                          "<queueNum>0</queueNum>"))
    violations = validate(scenario_for(xml))
    assert any("duplicate queue index" in v for v in violations)


def test_validate_flags_children_assured_over_parent():
    xml = wrap(ROOT_XML,
               class_xml("leaf0", rate="30Mbps", ceil="50Mbps"),
               class_xml("leaf1", rate="30Mbps", ceil="50Mbps"))
    violations = validate(scenario_for(xml))
    assert any("exceeds parent" in v for v in violations)


def test_validate_flags_uncovered_flow():
    scn = SCN + "source flow=9 start=0s stop=1s packet_size=1500 interval=1ms\n"
    violations = validate(scenario_for(HIER, scn))
    assert any("no filter matches" in v for v in violations)


def test_validate_flags_horizon_before_stop():
    scn = SCN.replace("horizon = 140s", "horizon = 50s")
    violations = validate(scenario_for(HIER, scn))
    assert any("beyond horizon" in v for v in violations)
