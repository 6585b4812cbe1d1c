import json

import pytest

from agps.errors import ProtocolError
from agps.geometry import SpatialConstraint
from agps.supervisor import wire
from agps.supervisor.wire import AgentDecision, InterventionMode

from conftest import golden_json, golden_text

CODECS = {
    "keypoints.json": (wire.decode_keypoints, wire.encode_keypoints),
    "strategy.json": (wire.decode_strategy, wire.encode_strategy),
    "bbox_3d.json": (wire.decode_bbox, wire.encode_bbox),
    "tool_calls.json": (wire.decode_tool_calls, wire.encode_tool_calls),
}


@pytest.mark.parametrize("name", sorted(CODECS))
def test_golden_round_trip_is_byte_exact(name):
    decode, encode = CODECS[name]
    text = golden_text(name)
    assert wire.dumps(encode(decode(text))) == text
    # decoders accept parsed JSON and bytes as well as text
    assert encode(decode(json.loads(text))) == json.loads(text)
    assert encode(decode(text.encode())) == json.loads(text)


def test_keypoint_fields():
    kps = wire.decode_keypoints(golden_text("keypoints.json"))
    assert [k.name for k in kps] == ["socket", "connector_tip"]
    assert (kps[0].u_norm, kps[0].v_norm, kps[0].confidence) == (512, 388, 0.95)
    assert kps[1].description == "tip of the held connector"


def test_strategy_decode():
    d = wire.decode_strategy('{"strategy":"action_guidance","reasoning":"r"}')
    assert d == AgentDecision(InterventionMode.ACTION_GUIDANCE, "r")


def test_bbox_decode_values():
    box = wire.decode_bbox(golden_text("bbox_3d.json")).constraint
    assert box == SpatialConstraint([0.5, 0, 0.2], [0.02, 0.01, 0.05])


def test_envelope_and_bare_lists_agree():
    bare = wire.decode_tool_calls(golden_text("tool_calls.json"))
    env = wire.decode_tool_calls(golden_text("tool_calls_envelope.json"))
    assert env == bare
    assert [c.name for c in bare] == ["lift", "move_to_pose", "pre_grasp", "grasp", "move_delta", "release"]


def test_bbox_debug_layout_matches_golden():
    dbg = wire.bbox_debug(["tcp", "goal"], [[0.01, 0.01], [0.005, 0.005], [0.02, 0.03]], False,
                          "tight box around the port mouth")
    assert dbg == golden_json("bbox_3d.json")["debug"]


MALFORMED = [
    (wire.decode_keypoints, "not json"),
    (wire.decode_keypoints, {"name": "x"}),
    (wire.decode_keypoints, [{"name": "x"}]),
    (wire.decode_keypoints, [{"name": "x", "point_2d": [1]}]),
    (wire.decode_keypoints, [{"name": "x", "point_2d": [1, "2"]}]),
    (wire.decode_keypoints, [{"name": "x", "point_2d": [1, 2000]}]),
    (wire.decode_keypoints, [{"name": "x", "point_2d": [1, 2], "confidence": True}]),
    (wire.decode_strategy, {"reasoning": "no strategy"}),
    (wire.decode_strategy, {"strategy": "teleport"}),
    (wire.decode_bbox, {"bbox_3d": [0.5, 0, 0.2, -0.01, 0.01, 0.05, 0, 0, 0]}),
    (wire.decode_bbox, {"bbox_3d": [0.5, 0, 0.2, 0.01, 0.01, 0.05]}),
    (wire.decode_bbox, {"bbox_3d": [0.5, 0, 0.2, 0.01, 0.01, 0.05, 0, 0, 0.3]}),
    (wire.decode_bbox, {"bbox_3d": [0.5, 0, 0.2, 0.01, 0.01, float("nan"), 0, 0, 0]}),
    (wire.decode_bbox, {"bbox_3d": [0.5, 0, 0.2, 0.01, 0.01, 0.05, 0, 0, 0], "debug": []}),
    (wire.decode_tool_calls, []),
    (wire.decode_tool_calls, {"tool_calls": []}),
    (wire.decode_tool_calls, [{"name": "teleport"}]),
    (wire.decode_tool_calls, [{"function": {"name": "lift", "arguments": "{bad"}}]),
    (wire.decode_tool_calls, [42]),
]


@pytest.mark.parametrize("decode,payload", MALFORMED)
def test_malformed_payloads_raise_protocol_error(decode, payload):
    with pytest.raises(ProtocolError) as exc:
        decode(payload)
    assert exc.value.payload is payload


def test_unknown_primitive_is_named():
    with pytest.raises(ProtocolError, match="teleport"):
        wire.decode_tool_calls([{"name": "lift", "height": 0.05}, {"name": "teleport"}])


def test_bbox_outside_workspace():
    ws = SpatialConstraint.from_bounds([0, 0, 0], [1, 1, 1])
    with pytest.raises(ProtocolError, match="workspace"):
        wire.decode_bbox({"bbox_3d": [0.99, 0.5, 0.5, 0.1, 0.1, 0.1, 0, 0, 0]}, ws)


def test_unknown_fields_ignored():
    d = wire.decode_strategy({"strategy": " Exploration_Pruning ", "extra": 1})
    assert d.mode is InterventionMode.EXPLORATION_PRUNING
