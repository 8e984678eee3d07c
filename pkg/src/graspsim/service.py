"""Live session service for the operator console.

Speaks newline-delimited JSON over a local TCP socket, one session per
connection. Ticks run at real time (scaled by nothing; motion speed is a
session concern) with client messages drained between ticks; frames
stream as base64 PNG at a decimated rate, telemetry at the full tick
rate.

A browser cannot open a raw TCP socket, so `--ws` switches the listener
to WebSocket framing (RFC 6455, text frames) carrying exactly the same
newline-free JSON messages, one message per frame.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import queue
import socket
import socketserver
import struct
import threading

from .config import ScenarioConfig
from .render import render_depth
from .session import GraspSession

FRAME_DECIMATION = 5  # 50 Hz ticks -> 10 Hz frames

_WS_MAGIC = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


def _frame_png_b64(session: GraspSession) -> str:
    from PIL import Image

    frame, _ = render_depth(session.scene)
    buf = io.BytesIO()
    Image.fromarray(frame.color).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


class _Transport:
    """Line transport: newline-delimited JSON over a plain socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._buf = b""

    def handshake(self) -> None:
        pass

    def recv_message(self) -> dict | None:
        while b"\n" not in self._buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                return None
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        if not line.strip():
            return self.recv_message()
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            return {"type": "__malformed__", "raw": line.decode(errors="replace")}

    def send_message(self, msg: dict) -> None:
        self.sock.sendall(json.dumps(msg, sort_keys=True).encode() + b"\n")


class _WebSocketTransport(_Transport):
    """Minimal server-side WebSocket: enough for one browser client."""

    def handshake(self) -> None:
        data = b""
        while b"\r\n\r\n" not in data:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise ConnectionError("client closed during handshake")
            data += chunk
        headers = {}
        for line in data.split(b"\r\n")[1:]:
            if b":" in line:
                k, v = line.split(b":", 1)
                headers[k.strip().lower()] = v.strip()
        key = headers.get(b"sec-websocket-key")
        if key is None:
            raise ConnectionError("not a websocket handshake")
        accept = base64.b64encode(hashlib.sha1(key + _WS_MAGIC.encode()).digest()).decode()
        self.sock.sendall(
            (
                "HTTP/1.1 101 Switching Protocols\r\n"
                "Upgrade: websocket\r\n"
                "Connection: Upgrade\r\n"
                f"Sec-WebSocket-Accept: {accept}\r\n\r\n"
            ).encode()
        )

    def _read_exact(self, n: int) -> bytes:
        out = b""
        while len(out) < n:
            chunk = self.sock.recv(n - len(out))
            if not chunk:
                raise ConnectionError("client closed")
            out += chunk
        return out

    def recv_message(self) -> dict | None:
        while True:
            head = self._read_exact(2)
            opcode = head[0] & 0x0F
            masked = head[1] & 0x80
            length = head[1] & 0x7F
            if length == 126:
                length = struct.unpack(">H", self._read_exact(2))[0]
            elif length == 127:
                length = struct.unpack(">Q", self._read_exact(8))[0]
            mask = self._read_exact(4) if masked else b"\x00" * 4
            payload = bytearray(self._read_exact(length))
            for i in range(length):
                payload[i] ^= mask[i % 4]
            if opcode == 8:  # close
                return None
            if opcode == 9:  # ping -> pong
                self._send_frame(0xA, bytes(payload))
                continue
            if opcode in (1, 2):
                try:
                    return json.loads(bytes(payload))
                except json.JSONDecodeError:
                    return {"type": "__malformed__", "raw": payload.decode(errors="replace")}

    def _send_frame(self, opcode: int, payload: bytes) -> None:
        head = bytes([0x80 | opcode])
        n = len(payload)
        if n < 126:
            head += bytes([n])
        elif n < 65536:
            head += bytes([126]) + struct.pack(">H", n)
        else:
            head += bytes([127]) + struct.pack(">Q", n)
        self.sock.sendall(head + payload)

    def send_message(self, msg: dict) -> None:
        self._send_frame(1, json.dumps(msg, sort_keys=True).encode())


def _serve_connection(
    transport: _Transport, config: ScenarioConfig, realtime: bool = True, log_path=None
) -> None:
    import time

    transport.handshake()
    session = GraspSession(config)
    inbound: queue.Queue = queue.Queue()
    closed = threading.Event()

    def reader():
        try:
            while True:
                msg = transport.recv_message()
                if msg is None:
                    break
                inbound.put(msg)
        except (ConnectionError, OSError):
            pass
        finally:
            closed.set()

    threading.Thread(target=reader, daemon=True).start()

    transport.send_message({"type": "phase", "name": session.phase})
    transport.send_message({"type": "frame", "png_b64": _frame_png_b64(session), "t": session.scene.clock})

    tick_no = 0
    next_deadline = time.monotonic()
    try:
        while not closed.is_set():
            # Client messages are never dropped, only handled between ticks.
            try:
                while True:
                    msg = inbound.get_nowait()
                    if msg.get("type") == "__malformed__":
                        transport.send_message(
                            {"type": "error", "code": "protocol", "detail": "message is not valid JSON"}
                        )
                        continue
                    phase_before = session.phase
                    for reply in session.handle_message(msg):
                        transport.send_message(reply)
                    if session.phase != phase_before:
                        transport.send_message({"type": "phase", "name": session.phase})
            except queue.Empty:
                pass

            if session.done:
                time.sleep(0.05)
                continue

            if session.phase in ("relocating", "approaching", "grasping"):
                phase_before = session.phase
                for msg in session.tick():
                    transport.send_message(msg)
                if session.phase != phase_before:
                    transport.send_message({"type": "phase", "name": session.phase})
                tick_no += 1
                if tick_no % FRAME_DECIMATION == 0:
                    transport.send_message(
                        {"type": "frame", "png_b64": _frame_png_b64(session), "t": session.scene.clock}
                    )
            else:
                # Waiting on the operator: refresh the view at frame rate.
                tick_no += 1
                if tick_no % FRAME_DECIMATION == 0:
                    transport.send_message(
                        {"type": "frame", "png_b64": _frame_png_b64(session), "t": session.scene.clock}
                    )

            if realtime:
                next_deadline += session.params.dt
                delay = next_deadline - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                else:
                    next_deadline = time.monotonic()
    except (ConnectionError, OSError, BrokenPipeError):
        pass
    finally:
        if log_path is not None:
            try:
                from pathlib import Path

                Path(log_path).write_text(session.log_lines())
            except OSError:
                pass
        try:
            transport.sock.close()
        except OSError:
            pass


def serve(config: ScenarioConfig, port: int, host: str = "127.0.0.1", websocket: bool = False,
          ready: threading.Event | None = None, realtime: bool = True,
          log_dir: str | None = None) -> None:
    """Accept connections forever; each one gets an independent session."""

    transport_cls = _WebSocketTransport if websocket else _Transport
    conn_ids = iter(range(1, 1 << 30))
    lock = threading.Lock()

    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            log_path = None
            if log_dir is not None:
                from pathlib import Path

                with lock:
                    n = next(conn_ids)
                Path(log_dir).mkdir(parents=True, exist_ok=True)
                log_path = Path(log_dir) / f"session_{n:04d}.ndjson"
            _serve_connection(transport_cls(self.request), config, realtime=realtime, log_path=log_path)

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as server:
        if ready is not None:
            ready.server = server  # type: ignore[attr-defined]
            ready.set()
        server.serve_forever()
