"""JSON codecs for the remote agent: keypoints, strategy, bbox and tool calls.

Decoders accept parsed JSON (or a JSON string), ignore unknown fields and raise
:class:`ProtocolError` with the raw payload attached on anything malformed.
Encoders emit the canonical form, so ``encode(decode(x)) == x`` for canonical
payloads.
"""
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import MalformedCallError, ProtocolError
from ..geometry import PixelKeypoint, SpatialConstraint, _num
from ..primitives import GuidancePlan, PrimitiveCall


class InterventionMode(Enum):
    ACTION_GUIDANCE = "action_guidance"
    EXPLORATION_PRUNING = "exploration_pruning"


@dataclass(frozen=True)
class AgentDecision:
    mode: InterventionMode
    reasoning: str = ""


@dataclass(frozen=True)
class BoxProposal:
    """A decoded bbox reply: the constraint plus whatever debug block came with it."""

    constraint: SpatialConstraint
    debug: dict = field(default_factory=dict)


def _parse(payload):
    if isinstance(payload, (bytes, bytearray)):
        payload = payload.decode("utf-8")
    if isinstance(payload, str):
        try:
            return json.loads(payload)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"invalid JSON: {exc}", payload) from None
    return payload


def _number(x, what, raw):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ProtocolError(f"{what} must be a number, got {x!r}", raw)
    if not np.isfinite(x):
        raise ProtocolError(f"{what} must be finite", raw)
    return x


# keypoints -------------------------------------------------------------------

def decode_keypoints(payload):
    raw = payload
    data = _parse(payload)
    if not isinstance(data, list):
        raise ProtocolError("keypoint payload must be a JSON array", raw)
    out = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "name" not in item or "point_2d" not in item:
            raise ProtocolError(f"keypoint {i} needs 'name' and 'point_2d'", raw)
        pt = item["point_2d"]
        if not isinstance(pt, list) or len(pt) != 2:
            raise ProtocolError(f"keypoint {i}: point_2d must be [x, y]", raw)
        u, v = (_number(c, f"keypoint {i} coordinate", raw) for c in pt)
        conf = _number(item.get("confidence", 1.0), f"keypoint {i} confidence", raw)
        try:
            out.append(PixelKeypoint(str(item["name"]), u, v, conf, str(item.get("description", ""))))
        except ValueError as exc:
            raise ProtocolError(f"keypoint {i}: {exc}", raw) from None
    return out


def encode_keypoints(keypoints):
    return [
        {
            "name": kp.name,
            "point_2d": [kp.u_norm, kp.v_norm],
            "confidence": kp.confidence,
            "description": kp.description,
        }
        for kp in keypoints
    ]


# strategy --------------------------------------------------------------------

def decode_strategy(payload):
    raw = payload
    data = _parse(payload)
    if not isinstance(data, dict) or "strategy" not in data:
        raise ProtocolError("strategy payload must be an object with 'strategy'", raw)
    value = data["strategy"]
    try:
        mode = InterventionMode(str(value).strip().lower())
    except ValueError:
        raise ProtocolError(f"unknown strategy {value!r}", raw) from None
    return AgentDecision(mode, str(data.get("reasoning", "")))


def encode_strategy(decision):
    return {"strategy": decision.mode.value, "reasoning": decision.reasoning}


# bbox ------------------------------------------------------------------------

def decode_bbox(payload, workspace=None):
    """Box reply -> :class:`BoxProposal`; with ``workspace`` the box must lie inside it."""
    raw = payload
    data = _parse(payload)
    if not isinstance(data, dict) or "bbox_3d" not in data:
        raise ProtocolError("bbox payload must be an object with 'bbox_3d'", raw)
    values = data["bbox_3d"]
    if not isinstance(values, list) or len(values) != 9:
        raise ProtocolError("bbox_3d must hold 9 numbers", raw)
    values = [_number(v, "bbox_3d entry", raw) for v in values]
    if any(v <= 0 for v in values[3:6]):
        raise ProtocolError(f"bbox sizes must be positive, got {values[3:6]}", raw)
    try:
        box = SpatialConstraint.from_bbox3d(values)
    except Exception as exc:
        raise ProtocolError(str(exc), raw) from None
    if workspace is not None:
        if np.any(box.lo < workspace.lo - 1e-9) or np.any(box.hi > workspace.hi + 1e-9):
            raise ProtocolError("bbox extends outside the workspace", raw)
    debug = data.get("debug", {})
    if not isinstance(debug, dict):
        raise ProtocolError("bbox debug block must be an object", raw)
    return BoxProposal(box, debug)


def encode_bbox(proposal):
    if isinstance(proposal, SpatialConstraint):
        proposal = BoxProposal(proposal)
    return {"bbox_3d": proposal.constraint.to_bbox3d(), "debug": proposal.debug}


def bbox_debug(points_used, margins, clamped, reason=""):
    """Debug block in the reply layout; ``margins`` is a per-axis (neg, pos) pair."""
    m = np.asarray(margins, dtype=float).reshape(3, -1)
    if m.shape[1] == 1:
        m = np.hstack([m, m])
    return {
        "roi_points_used": list(points_used),
        "margins_m": {ax: [_num(m[i, 0]), _num(m[i, 1])] for i, ax in enumerate("xyz")},
        "clamped_to_global": bool(clamped),
        "reason": reason,
    }


# tool calls ------------------------------------------------------------------

def _call_object(item, i, raw):
    """Accept a bare primitive object or a function-call envelope."""
    if not isinstance(item, dict):
        raise ProtocolError(f"tool call {i} must be an object", raw)
    fn = item.get("function")
    if isinstance(fn, dict):
        args = fn.get("arguments", {})
        if isinstance(args, str):
            try:
                args = json.loads(args) if args.strip() else {}
            except json.JSONDecodeError:
                raise ProtocolError(f"tool call {i}: arguments are not valid JSON", raw) from None
        if not isinstance(args, dict):
            raise ProtocolError(f"tool call {i}: arguments must be an object", raw)
        return {**args, "name": fn.get("name", args.get("name"))}
    return item


def decode_tool_calls(payload):
    raw = payload
    data = _parse(payload)
    if isinstance(data, dict):
        data = data.get("tool_calls")
    if not isinstance(data, list):
        raise ProtocolError("tool-call payload must be a list (or an object with 'tool_calls')", raw)
    if not data:
        raise ProtocolError("tool-call list is empty", raw)
    calls = []
    for i, item in enumerate(data):
        obj = _call_object(item, i, raw)
        try:
            calls.append(PrimitiveCall.from_json(obj))
        except MalformedCallError as exc:
            raise ProtocolError(f"tool call {i}: {exc}", raw) from None
    return GuidancePlan(tuple(calls))


def encode_tool_calls(plan):
    return [c.to_json() for c in plan]


def dumps(obj):
    """Canonical text form used for golden files and payload digests."""
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
