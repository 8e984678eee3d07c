import copy
import json
import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest

from graspsim.config import DEFAULTS, load_scenario, parse_scenario
from graspsim.errors import ParseError, SchemaError
from graspsim.runner import MetricsReport, run_batch, run_scenario
from graspsim.session import PHASES, GraspSession

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def minimal_config(**overrides):
    data = {
        "seed": 11,
        "objects": [
            {"id": 1, "name": "red box", "shape": "box", "dims": [0.05, 0.05, 0.06], "position": [0.6, 0.05, 0.2]}
        ],
        "prompt_script": [{"type": "prompt", "kind": "text", "text": "red box"}, {"type": "confirm"}],
    }
    data.update(overrides)
    return data


def tiny_config(**overrides):
    """Low-resolution fast scenario for protocol-level tests."""
    data = minimal_config(
        intrinsics={"fx": 28.0, "fy": 28.0, "cx": 16.0, "cy": 12.0, "width": 32, "height": 24},
        control={"v_max": 3.0},
    )
    data.update(overrides)
    return data


# --- loadScenario ---------------------------------------------------------


def test_minimal_file_fills_defaults(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(minimal_config()))
    cfg = load_scenario(p)
    eff = cfg.effective()
    assert eff["noise"]["quantization"] == DEFAULTS["noise"]["quantization"]
    assert eff["control"]["pid"]["kp"] == 2.0
    assert eff["intrinsics"]["width"] == 320
    assert cfg.chain().n == 6


def test_missing_seed_names_field(tmp_path):
    data = minimal_config()
    del data["seed"]
    p = tmp_path / "s.json"
    p.write_text(json.dumps(data))
    with pytest.raises(SchemaError, match="seed"):
        load_scenario(p)


def test_unknown_field_rejected(tmp_path):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(minimal_config(gripper_pressure=5)))
    with pytest.raises(SchemaError, match="gripper_pressure"):
        load_scenario(p)


def test_unknown_nested_field_rejected(tmp_path):
    data = minimal_config()
    data["noise"] = {"depth_sigma": 0.001, "fog": 1}
    p = tmp_path / "s.json"
    p.write_text(json.dumps(data))
    with pytest.raises(SchemaError, match="fog"):
        load_scenario(p)


def test_bad_json_reports_position(tmp_path):
    p = tmp_path / "s.json"
    p.write_text('{"seed": 1,\n  "objects": [}')
    with pytest.raises(ParseError, match=r":2:"):
        load_scenario(p)


def test_effective_config_round_trips():
    cfg = parse_scenario(minimal_config())
    again = parse_scenario(cfg.effective())
    assert again.effective() == cfg.effective()


# --- handleMessage ----------------------------------------------------------


def test_prompt_returns_segmentation_overlay():
    session = GraspSession(parse_scenario(tiny_config()))
    replies = session.handle_message({"type": "prompt", "kind": "text", "text": "red box"})
    assert len(replies) == 1
    assert replies[0]["type"] == "segmentation"
    assert replies[0]["label"] == "red box"
    assert sum(replies[0]["mask_rle"]["counts"]) == 32 * 24
    assert session.phase == "segmented_awaiting_confirm"


def test_confirm_before_segmentation_is_protocol_error():
    session = GraspSession(parse_scenario(tiny_config()))
    replies = session.handle_message({"type": "confirm"})
    assert replies[0]["type"] == "error"
    assert session.phase == "awaiting_prompt"


def test_point_prompt_on_background_is_error_and_keeps_phase():
    session = GraspSession(parse_scenario(tiny_config()))
    replies = session.handle_message({"type": "prompt", "kind": "point", "u": 0, "v": 0})
    assert replies[0]["type"] == "error"
    assert session.phase == "awaiting_prompt"


def test_abort_while_approaching_finishes_within_tick():
    session = GraspSession(parse_scenario(tiny_config()))
    session.handle_message({"type": "prompt", "kind": "text", "text": "red box"})
    session.handle_message({"type": "confirm"})
    assert session.phase == "approaching"
    for _ in range(3):
        session.tick()
    replies = session.handle_message({"type": "abort"})
    assert replies[0]["type"] == "outcome"
    assert replies[0]["status"] == "aborted_by_user"
    assert session.phase == "done"
    # The log records the outcome at the abort, no later ticks.
    outcome_records = [e for e in session.log if e["record"] == "outcome"]
    assert len(outcome_records) == 1


def test_set_speed_clamps_and_replies():
    session = GraspSession(parse_scenario(tiny_config()))
    replies = session.handle_message({"type": "set_speed", "scale": 10.0})
    assert replies[0] == {"type": "speed", "scale": 2.0}
    assert session.params.v_max == pytest.approx(6.0)


def test_malformed_messages_never_mutate_state():
    session = GraspSession(parse_scenario(tiny_config()))
    session.handle_message({"type": "prompt", "kind": "text", "text": "red box"})

    def snapshot(s):
        return (
            s.phase,
            s.tick_index,
            s.scene.clock,
            s.scene.step_count,
            tuple(s.scene.arm_theta),
            s.speed_scale,
            s.outcome is None,
        )

    bad_messages = [
        "not an object",
        {"no_type": 1},
        {"type": "teleport"},
        {"type": "prompt", "kind": "point"},
        {"type": "prompt", "kind": "point", "u": 9999, "v": 0},
        {"type": "set_speed"},
        {"type": "prompt", "kind": "box", "u0": 5, "v0": 5},
    ]
    before = snapshot(session)
    for msg in bad_messages:
        replies = session.handle_message(msg)
        assert replies[0]["type"] == "error"
        assert snapshot(session) == before


# --- phase machine safety ----------------------------------------------------


def run_to_phase_boundary(session, cap=2000):
    start = session.phase
    n = 0
    while session.phase == start and not session.done and n < cap:
        session.tick()
        n += 1
    return session


def test_phase_machine_exhaustive_depth_six():
    """Exhaustive message/tick sequences (deduplicated by reached state)
    never arrive at the grasping phase without passing confirmation."""
    base = parse_scenario(tiny_config())

    def actions(session):
        frame_actions = {
            "prompt": {"type": "prompt", "kind": "text", "text": "red box"},
            "bad_prompt": {"type": "prompt", "kind": "point", "u": 0, "v": 0},
            "confirm": {"type": "confirm"},
            "abort": {"type": "abort"},
            "malformed": {"type": "warp"},
            "advance": None,  # run ticks to the next phase boundary
        }
        return frame_actions

    def signature(session, confirmed):
        return (session.phase, session._pending is not None, confirmed, session.outcome is None)

    seen = set()
    violations = []
    initial = GraspSession(base)
    queue = [(initial, False, 0)]
    seen.add(signature(initial, False))
    transitions = 0
    while queue:
        session, confirmed, depth = queue.pop()
        if depth >= 6:
            continue
        for name, msg in actions(session).items():
            child = copy.deepcopy(session)
            child_confirmed = confirmed
            if msg is None:
                run_to_phase_boundary(child)
            else:
                replies = child.handle_message(msg)
                rejected = bool(replies) and replies[0].get("type") == "error"
                if name == "confirm" and not rejected:
                    child_confirmed = True
            transitions += 1
            if child.phase == "grasping" and not child_confirmed:
                violations.append((name, depth))
            sig = signature(child, child_confirmed)
            if sig not in seen:
                seen.add(sig)
                queue.append((child, child_confirmed, depth + 1))
    assert not violations
    assert transitions > 0


# --- runner -------------------------------------------------------------------


def test_run_scenario_in_reach_success(tmp_path):
    cfg = parse_scenario(minimal_config())
    row = run_scenario(cfg, log_path=tmp_path / "log.ndjson")
    assert row["status"] == "success"
    assert row["relocated"] is False
    assert (tmp_path / "log.ndjson").exists()


def test_run_scenario_relocates_for_far_target():
    cfg = parse_scenario(
        minimal_config(
            objects=[
                {"id": 1, "name": "red box", "shape": "box", "dims": [0.06, 0.06, 0.06], "position": [1.8, 0.0, 0.2]}
            ]
        )
    )
    row = run_scenario(cfg)
    assert row["relocated"] is True
    assert row["status"] == "success"


def test_run_scenario_byte_identical_logs(tmp_path):
    cfg = parse_scenario(minimal_config(noise={"depth_sigma": 0.002, "dropout_prob": 0.05, "servo_sigma": 0.001}))
    run_scenario(cfg, log_path=tmp_path / "a.ndjson")
    run_scenario(cfg, log_path=tmp_path / "b.ndjson")
    assert (tmp_path / "a.ndjson").read_bytes() == (tmp_path / "b.ndjson").read_bytes()


def test_replay_from_log_reproduces_log(tmp_path):
    cfg = parse_scenario(minimal_config())
    run_scenario(cfg, log_path=tmp_path / "orig.ndjson")
    records = [json.loads(line) for line in (tmp_path / "orig.ndjson").read_text().splitlines()]
    effective = next(r for r in records if r["record"] == "config")["config"]
    inbound = [r["msg"] for r in records if r["record"] == "message" and r["dir"] == "in"]
    replay_cfg = parse_scenario(effective)
    replay_cfg.raw["prompt_script"] = inbound
    run_scenario(replay_cfg, log_path=tmp_path / "replay.ndjson")
    orig = (tmp_path / "orig.ndjson").read_text()
    replay = (tmp_path / "replay.ndjson").read_text()
    assert orig == replay


def test_metrics_report_aggregates_rows(tmp_path):
    report = MetricsReport(
        rows=[
            {"scenario": "a", "status": "success", "final_error": 0.001, "replans": 1, "relocated": False, "ticks": 10, "wall_time_s": 0.1},
            {"scenario": "b", "status": "grip_failure", "final_error": 0.002, "replans": 0, "relocated": True, "ticks": 20, "wall_time_s": 0.2},
        ]
    )
    assert report.success_rate == pytest.approx(0.5)
    out = tmp_path / "m.csv"
    report.to_csv(out)
    text = out.read_text()
    assert "success_rate,0.5" in text
    assert text.count("\n") == 4  # header + 2 rows + aggregate

    recomputed = sum(1 for r in report.rows if r["status"] == "success") / len(report.rows)
    assert recomputed == report.success_rate


def test_run_batch(tmp_path):
    for i, name in enumerate(["a", "b"]):
        data = minimal_config(seed=50 + i, name=name)
        (tmp_path / f"{name}.json").write_text(json.dumps(data))
    report = run_batch(tmp_path, metrics_out=tmp_path / "metrics.csv")
    assert len(report.rows) == 2
    assert (tmp_path / "metrics.csv").exists()


# --- service -------------------------------------------------------------------


class ServiceClient:
    def __init__(self, port):
        self.sock = socket.create_connection(("127.0.0.1", port), timeout=10.0)
        self.sock.settimeout(10.0)
        self.buf = b""

    def send(self, msg):
        self.sock.sendall(json.dumps(msg).encode() + b"\n")

    def recv(self):
        while b"\n" not in self.buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self.buf += chunk
        line, self.buf = self.buf.split(b"\n", 1)
        return json.loads(line)

    def recv_until(self, mtype, limit=5000):
        for _ in range(limit):
            msg = self.recv()
            if msg is None:
                return None
            if msg["type"] == mtype:
                return msg
        raise AssertionError(f"no {mtype} message within {limit} messages")

    def close(self):
        self.sock.close()


@pytest.fixture
def service_port():
    from graspsim.service import serve

    cfg = parse_scenario(tiny_config())
    ready = threading.Event()
    port_holder = {}

    def pick_port():
        s = socket.socket()
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
        s.close()
        return port

    port = pick_port()
    thread = threading.Thread(
        target=serve, args=(cfg, port), kwargs={"ready": ready, "realtime": False}, daemon=True
    )
    thread.start()
    assert ready.wait(5.0)
    yield port
    ready.server.shutdown()  # type: ignore[attr-defined]


def test_service_full_session(service_port):
    client = ServiceClient(service_port)
    first = client.recv()
    assert first == {"type": "phase", "name": "awaiting_prompt"}
    frame = client.recv_until("frame")
    assert isinstance(frame["png_b64"], str) and len(frame["png_b64"]) > 0

    client.send({"type": "prompt", "kind": "text", "text": "red box"})
    seg = client.recv_until("segmentation")
    assert seg["label"] == "red box"
    client.send({"type": "confirm"})
    telemetry = client.recv_until("telemetry")
    assert len(telemetry["theta"]) == 6
    outcome = client.recv_until("outcome")
    assert outcome["status"] == "success"
    client.close()


def test_service_abort(service_port):
    client = ServiceClient(service_port)
    client.send({"type": "prompt", "kind": "text", "text": "red box"})
    client.recv_until("segmentation")
    client.send({"type": "confirm"})
    client.recv_until("telemetry")
    client.send({"type": "abort"})
    outcome = client.recv_until("outcome")
    assert outcome["status"] == "aborted_by_user"
    client.close()


def test_service_malformed_json(service_port):
    client = ServiceClient(service_port)
    client.recv()  # phase
    client.sock.sendall(b"this is not json\n")
    err = client.recv_until("error")
    assert err["code"] == "protocol"
    client.close()


# --- cli -----------------------------------------------------------------------


def test_cli_run_and_exit_codes(tmp_path, capsys):
    from graspsim.cli import main

    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps(minimal_config()))
    assert main(["run", "--scenario", str(scenario), "--headless", "--log-out", str(tmp_path / "log.ndjson")]) == 0
    out = capsys.readouterr().out
    assert '"status": "success"' in out

    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["run", "--scenario", str(bad), "--headless"]) == 2

    missing_seed = tmp_path / "missing.json"
    data = minimal_config()
    del data["seed"]
    missing_seed.write_text(json.dumps(data))
    assert main(["run", "--scenario", str(missing_seed), "--headless"]) == 2


def test_cli_seed_override(tmp_path, capsys):
    from graspsim.cli import main

    scenario = tmp_path / "s.json"
    scenario.write_text(json.dumps(minimal_config(noise={"depth_sigma": 0.002})))
    assert main(["run", "--scenario", str(scenario), "--headless", "--seed", "99"]) == 0
    assert main(["run", "--scenario", str(scenario), "--headless", "--seed", "99"]) == 0


def test_cli_batch(tmp_path, capsys):
    from graspsim.cli import main

    d = tmp_path / "batch"
    d.mkdir()
    (d / "one.json").write_text(json.dumps(minimal_config(name="one")))
    assert main(["batch", "--dir", str(d), "--metrics-out", str(tmp_path / "m.csv")]) == 0
    assert "success rate" in capsys.readouterr().out


@pytest.fixture
def ws_service_port():
    from graspsim.service import serve

    cfg = parse_scenario(tiny_config())
    ready = threading.Event()
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    thread = threading.Thread(
        target=serve, args=(cfg, port), kwargs={"ready": ready, "realtime": False, "websocket": True}, daemon=True
    )
    thread.start()
    assert ready.wait(5.0)
    yield port
    ready.server.shutdown()  # type: ignore[attr-defined]


def _ws_recv(sock, buf):
    """Minimal RFC6455 client-side frame reader (server frames unmasked)."""
    import struct

    def read_exact(n):
        nonlocal buf
        while len(buf) < n:
            chunk = sock.recv(65536)
            if not chunk:
                raise ConnectionError("closed")
            buf += chunk
        out, buf = buf[:n], buf[n:]
        return out, buf

    head, buf = read_exact(2)
    length = head[1] & 0x7F
    if length == 126:
        raw, buf = read_exact(2)
        length = struct.unpack(">H", raw)[0]
    elif length == 127:
        raw, buf = read_exact(8)
        length = struct.unpack(">Q", raw)[0]
    payload, buf = read_exact(length)
    return json.loads(payload), buf


def _ws_send(sock, obj):
    import os as _os
    import struct

    payload = json.dumps(obj).encode()
    mask = _os.urandom(4)
    masked = bytes(b ^ mask[i % 4] for i, b in enumerate(payload))
    n = len(payload)
    if n < 126:
        head = bytes([0x81, 0x80 | n])
    else:
        head = bytes([0x81, 0x80 | 126]) + struct.pack(">H", n)
    sock.sendall(head + mask + masked)


def test_websocket_service_round_trip(ws_service_port):
    import base64
    import hashlib

    sock = socket.create_connection(("127.0.0.1", ws_service_port), timeout=10.0)
    sock.settimeout(10.0)
    key = base64.b64encode(b"0123456789abcdef").decode()
    sock.sendall(
        (
            f"GET / HTTP/1.1\r\nHost: localhost\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Key: {key}\r\nSec-WebSocket-Version: 13\r\n\r\n"
        ).encode()
    )
    response = b""
    while b"\r\n\r\n" not in response:
        response += sock.recv(65536)
    assert b"101" in response.split(b"\r\n")[0]
    expected = base64.b64encode(
        hashlib.sha1(key.encode() + b"258EAFA5-E914-47DA-95CA-C5AB0DC85B11").digest()
    ).decode()
    assert expected.encode() in response

    buf = b""
    msg, buf = _ws_recv(sock, buf)
    assert msg == {"type": "phase", "name": "awaiting_prompt"}
    _ws_send(sock, {"type": "prompt", "kind": "text", "text": "red box"})
    for _ in range(200):
        msg, buf = _ws_recv(sock, buf)
        if msg["type"] == "segmentation":
            break
    assert msg["type"] == "segmentation"
    assert msg["label"] == "red box"
    sock.close()
