"""A local HTTP endpoint that answers remote-agent requests with a scripted oracle.

Handy for exercising the remote code path end to end without a real model.
"""
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from ..encoding import Observation
from ..geometry import WorldPoint
from ..primitives import GuidancePlan
from . import wire
from .agents import Subgoal, digest


def _obs(body):
    o = body["observation"]
    return Observation(np.asarray(o["proprio"]), np.asarray(o["scene"]), int(o.get("step", 0)))


class _Handler(BaseHTTPRequestHandler):
    oracle = None
    camera = None

    def log_message(self, *args):  # keep test output quiet
        pass

    def do_POST(self):
        n = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(n) or b"{}")
        endpoint = self.path.strip("/")
        try:
            reply = self._answer(endpoint, body)
            code = 200
        except Exception as exc:  # report, don't crash the server thread
            reply, code = {"error": str(exc)}, 500
        data = json.dumps(reply).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _answer(self, endpoint, body):
        oracle = self.oracle
        if endpoint == "decide_mode":
            return wire.encode_strategy(oracle.decide_mode(_obs(body), Subgoal(body["subgoal"])))
        if endpoint == "perceive":
            return wire.encode_keypoints(oracle.perceive(_obs(body), self.camera))
        if endpoint == "gen_bbox":
            pts = [WorldPoint(k, v) for k, v in body["keypoints_3d"].items()]
            box = oracle.gen_bbox(pts)
            dbg = wire.bbox_debug(list(body["keypoints_3d"]), oracle.profile.margins, False,
                                  f"scripted oracle {digest(body)}")
            return wire.encode_bbox(wire.BoxProposal(box, dbg))
        if endpoint == "gen_waypoints":
            plan = oracle.gen_waypoints(_obs(body), body["keypoints"])
            return {"tool_calls": [
                {"type": "function", "function": {"name": c.name, "arguments": json.dumps(c.to_json())}}
                for c in GuidancePlan(plan.calls)
            ]}
        raise KeyError(f"unknown endpoint {endpoint!r}")


class OracleServer:
    """Context manager running an oracle-backed endpoint on a background thread."""

    def __init__(self, oracle, camera, host="127.0.0.1", port=0):
        handler = type("Handler", (_Handler,), {"oracle": oracle, "camera": camera})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def url(self):
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()
