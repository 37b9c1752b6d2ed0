"""TCP control plane hosting simulated transmit/receive nodes plus the channel.

One process owns all node state and the propagation model, so a scripted
session is exactly reproducible.  Clients speak a length-prefixed protocol:

    [4-byte big-endian body length][UTF-8 JSON body]

Requests are objects ``{"v": 1, "id": <token>, "cmd": <verb>, "args": {...}}``;
unknown fields are ignored.  Every reply echoes the request's ``id`` and
carries ``status``: ``"ok"`` (with verb-specific payload), ``"error"`` (with
an ``error`` message — errors are always in-band, the connection stays up),
or ``"progress"`` for long-running commands (sweeps emit one progress event
per completed transmit row).  A body that is not valid JSON gets an in-band
error with ``id: null``; only an unusable length prefix (zero or beyond
``MAX_MESSAGE_BYTES``) closes the connection, since framing cannot recover.

Verbs: ``set_mode``, ``set_beam``, ``set_awv``, ``set_gain``, ``load_iq``,
``tx_frame``, ``rx_capture``, ``run_sweep``, ``get_status``, ``reset``.

State changes are atomic: a single lock guards node state, and an AWV is
swapped as one tuple, so concurrent clients never observe a half-applied
weight set.  Sweeps run outside the state lock (status queries stay live)
and at most one runs at a time ("busy" error otherwise).

Artifacts (sweep matrices, receive captures) are written under the server's
output directory with content-addressed names: ``<kind>-<sha256[:10]>.<ext>``.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from . import __version__
from .beamforming import Awv, BeamformingError, ElementWeight
from .channel import ChannelModel, Scenario, load_scenario
from .modem import bits as bitops
from .modem.frame import PpduConfig, build_ppdu
from .modem.iqfile import IqBuffer, IqFormatError, read_iq, write_iq
from .modem.mapping import MappingError, parse_modulation
from .modem.receiver import ModemError, demod_decode
from .sweep import run_sweep

__all__ = [
    "DEFAULT_PORT",
    "BIND_ENV_VAR",
    "PROTOCOL_VERSION",
    "MAX_MESSAGE_BYTES",
    "ControlError",
    "NodeState",
    "TwinServer",
    "ControlClient",
    "serve",
    "resolve_bind_address",
]

DEFAULT_PORT = 5225
BIND_ENV_VAR = "SDA_TWIN_BIND"
PROTOCOL_VERSION = 1
MAX_MESSAGE_BYTES = 1 << 20

_MODES = ("idle", "tx", "rx")


class ControlError(RuntimeError):
    """A per-command failure reported in-band to the client."""


def resolve_bind_address(explicit: str | None = None) -> tuple[str, int]:
    """(host, port) from an explicit ``host:port``, the env var, or defaults."""
    raw = explicit or os.environ.get(BIND_ENV_VAR) or f"127.0.0.1:{DEFAULT_PORT}"
    host, sep, port = raw.rpartition(":")
    if not sep:
        return raw, DEFAULT_PORT
    try:
        return host or "127.0.0.1", int(port)
    except ValueError as exc:
        raise ControlError(f"unusable bind address {raw!r}") from exc


@dataclass
class NodeState:
    """Mutable state of one simulated node."""

    node_id: int
    name: str
    role: str  # which end of the scenario this node occupies: "tx" or "rx"
    mode: str = "idle"
    beam_index: int | None = None
    awv: Awv | None = None
    gain_db: float = 0.0
    loaded_iq: IqBuffer | None = None

    def status(self, model: ChannelModel) -> dict:
        pose = model.scenario.tx if self.role == "tx" else model.scenario.rx
        awv = None
        if self.awv is not None:
            awv = {
                "amplitudes": [w.amplitude for w in self.awv.weights],
                "phases_rad": [w.phase_rad for w in self.awv.weights],
                "active_elements": sum(
                    1 for w in self.awv.weights if w.amplitude > 0.0
                ),
            }
        return {
            "node": self.name,
            "mode": self.mode,
            "beam_index": self.beam_index,
            "gain_db": self.gain_db,
            "awv": awv,
            "loaded_samples": None if self.loaded_iq is None else self.loaded_iq.samples.size,
            "pose": {"x_m": pose.x_m, "y_m": pose.y_m, "heading_deg": pose.heading_deg},
        }


@dataclass(frozen=True)
class _OnAir:
    """Snapshot of the most recent transmission (atomic at tx_frame time)."""

    waveform: IqBuffer
    tx_name: str
    tx_awv: Awv
    tx_beam: int
    frame_index: int


class TwinServer:
    """All node + channel state behind the TCP face (usable in-process too)."""

    def __init__(
        self,
        scenario: Scenario | str = "tabletop-4p5m",
        seed: int = 0,
        out_dir: str | Path = "artifacts",
        config: PpduConfig | None = None,
    ):
        if isinstance(scenario, str):
            scenario = load_scenario(scenario)
        self.config = config or PpduConfig()
        self.model = ChannelModel(scenario, seed=seed, config=self.config)
        self.seed = int(seed)
        self.out_dir = Path(out_dir)
        self._lock = threading.RLock()
        self._sweep_gate = threading.Lock()
        self.nodes: dict[str, NodeState] = {}
        self._on_air: _OnAir | None = None
        self._frame_counter = 0
        self._install_defaults()
        self._handlers: dict[str, Callable[[dict, Callable[[dict], None]], dict]] = {
            "set_mode": self._cmd_set_mode,
            "set_beam": self._cmd_set_beam,
            "set_awv": self._cmd_set_awv,
            "set_gain": self._cmd_set_gain,
            "load_iq": self._cmd_load_iq,
            "tx_frame": self._cmd_tx_frame,
            "rx_capture": self._cmd_rx_capture,
            "run_sweep": self._cmd_run_sweep,
            "get_status": self._cmd_get_status,
            "reset": self._cmd_reset,
        }

    def _install_defaults(self) -> None:
        with self._lock:
            self.nodes = {
                "tx0": NodeState(0, "tx0", "tx"),
                "rx0": NodeState(1, "rx0", "rx"),
            }
            self._on_air = None
            self._frame_counter = 0

    # -- dispatch ---------------------------------------------------------

    def dispatch(self, message: dict, send: Callable[[dict], None]) -> None:
        """Execute one request and emit its reply (plus progress events)."""
        msg_id = message.get("id")
        envelope = {"v": PROTOCOL_VERSION, "id": msg_id}
        version = message.get("v", PROTOCOL_VERSION)
        if version != PROTOCOL_VERSION:
            send({**envelope, "status": "error",
                  "error": f"unsupported protocol version {version!r}"})
            return
        cmd = message.get("cmd")
        handler = self._handlers.get(cmd)
        if handler is None:
            send({**envelope, "status": "error",
                  "error": f"unknown command {cmd!r}"})
            return
        args = message.get("args") or {}
        if not isinstance(args, dict):
            send({**envelope, "status": "error", "error": "args must be an object"})
            return

        def progress(done: int, total: int) -> None:
            send({**envelope, "status": "progress", "done": done, "total": total})

        try:
            payload = handler(args, progress)
        except ControlError as exc:
            send({**envelope, "status": "error", "error": str(exc)})
            return
        except (BeamformingError, MappingError, ModemError, IqFormatError) as exc:
            send({**envelope, "status": "error", "error": str(exc)})
            return
        except (TypeError, ValueError, KeyError, OSError) as exc:
            send({**envelope, "status": "error", "error": f"{type(exc).__name__}: {exc}"})
            return
        send({**envelope, "status": "ok", **payload})

    # -- helpers ------------------------------------------------------------

    def _node(self, args: dict, default: str | None = None) -> NodeState:
        name = args.get("node", default)
        if name is None:
            raise ControlError("missing required arg 'node'")
        node = self.nodes.get(str(name))
        if node is None:
            raise ControlError(
                f"unknown node {name!r}; nodes: {', '.join(sorted(self.nodes))}"
            )
        return node

    def _artifact(self, kind: str, data: bytes, ext: str) -> Path:
        digest = hashlib.sha256(data).hexdigest()[:10]
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / f"{kind}-{digest}.{ext}"
        path.write_bytes(data)
        return path

    # -- verbs --------------------------------------------------------------

    def _cmd_set_mode(self, args: dict, progress) -> dict:
        mode = args.get("mode")
        if mode not in _MODES:
            raise ControlError(f"mode must be one of {', '.join(_MODES)}")
        node = self._node(args)
        with self._lock:
            node.mode = mode
        return {"node": node.name, "mode": mode}

    def _cmd_set_beam(self, args: dict, progress) -> dict:
        if "index" not in args:
            raise ControlError("missing required arg 'index'")
        index = args["index"]
        n = self.model.codebook.n_beams
        if isinstance(index, bool) or not isinstance(index, int) or not (1 <= index <= n):
            raise ControlError(f"index out of range 1..{n}")
        node = self._node(args, default="tx0")
        awv = self.model.codebook.beam(index)
        with self._lock:
            node.beam_index = index
            node.awv = awv
        return {
            "node": node.name,
            "beam_index": index,
            "angle_deg": self.model.codebook.angle(index),
        }

    def _cmd_set_awv(self, args: dict, progress) -> dict:
        node = self._node(args)
        amplitudes = args.get("amplitudes")
        phases = args.get("phases_rad")
        n = self.model.geometry.n_elements
        if not isinstance(amplitudes, list) or len(amplitudes) != n:
            raise ControlError(f"'amplitudes' must be a list of {n} numbers")
        if not isinstance(phases, list) or len(phases) != n:
            raise ControlError(f"'phases_rad' must be a list of {n} numbers")
        weights = tuple(
            ElementWeight.from_polar(float(a), float(p))
            for a, p in zip(amplitudes, phases)
        )
        awv = Awv(weights, label="custom")
        with self._lock:  # one swap: clients never see a partial AWV
            node.awv = awv
            node.beam_index = None
        return {
            "node": node.name,
            "active_elements": sum(1 for w in weights if w.amplitude > 0.0),
        }

    def _cmd_set_gain(self, args: dict, progress) -> dict:
        if "gain_db" not in args:
            raise ControlError("missing required arg 'gain_db'")
        gain = float(args["gain_db"])
        if not math.isfinite(gain):
            raise ControlError("gain_db must be finite")
        node = self._node(args)
        with self._lock:
            node.gain_db = gain
        return {"node": node.name, "gain_db": gain}

    def _cmd_load_iq(self, args: dict, progress) -> dict:
        path = args.get("path")
        if not path:
            raise ControlError("missing required arg 'path'")
        node = self._node(args)
        try:
            buf = read_iq(path)
        except FileNotFoundError:
            raise ControlError(f"no such file: {path}") from None
        with self._lock:
            node.loaded_iq = buf
        return {"node": node.name, "n_samples": buf.samples.size}

    def _cmd_tx_frame(self, args: dict, progress) -> dict:
        node = self._node(args, default="tx0")
        with self._lock:
            if node.mode != "tx":
                raise ControlError(f"node {node.name!r} not in tx mode")
            if node.awv is None:
                raise ControlError(
                    f"node {node.name!r} has no beam or AWV selected"
                )
            awv, beam = node.awv, node.beam_index or 0
            loaded = node.loaded_iq
        frame_meta: dict = {}
        if "payload_hex" in args:
            try:
                payload = bytes.fromhex(args.get("payload_hex") or "")
            except ValueError:
                raise ControlError("payload_hex is not valid hex") from None
            modulation = parse_modulation(args.get("modulation", 4))
            waveform, frame = build_ppdu(
                bitops.bytes_to_bits(payload), modulation, self.config
            )
            frame_meta = {
                "modulation": frame.modulation,
                "payload_len_bits": frame.payload_len_bits,
                "n_symbols": frame.n_symbols,
            }
        elif loaded is not None:
            waveform = loaded
        else:
            raise ControlError("no payload_hex given and no waveform loaded")
        with self._lock:
            self._frame_counter += 1
            self._on_air = _OnAir(
                waveform, node.name, awv, beam, self._frame_counter
            )
            counter = self._frame_counter
        return {
            "node": node.name,
            "frame_index": counter,
            "n_samples": waveform.samples.size,
            **frame_meta,
        }

    def _cmd_rx_capture(self, args: dict, progress) -> dict:
        node = self._node(args, default="rx0")
        with self._lock:
            if node.mode != "rx":
                raise ControlError(f"node {node.name!r} not in rx mode")
            if node.awv is None:
                raise ControlError(
                    f"node {node.name!r} has no beam or AWV selected"
                )
            on_air = self._on_air
            rx_awv, rx_beam = node.awv, node.beam_index or 0
        if on_air is None:
            raise ControlError("nothing on the air: no tx_frame yet")
        capture = self.model.propagate(
            on_air.waveform,
            on_air.tx_awv,
            rx_awv,
            tx_beam=on_air.tx_beam,
            rx_beam=rx_beam,
            frame_index=on_air.frame_index,
        )
        tmp = self.out_dir / f".capture-{threading.get_ident()}.iq"
        self.out_dir.mkdir(parents=True, exist_ok=True)
        write_iq(tmp, capture)
        data = tmp.read_bytes()
        tmp.unlink()
        path = self._artifact("capture", data, "iq")
        payload: dict = {
            "node": node.name,
            "artifact": str(path),
            "n_samples": capture.samples.size,
        }
        if args.get("decode", True):
            try:
                report = demod_decode(capture, self.config)
                payload["report"] = report.summary()
                recovered = report.payload_bytes()
                if recovered is not None:
                    payload["payload_hex"] = recovered.hex()
            except ModemError as exc:
                payload["report"] = {"decode_ok": False, "error": str(exc)}
        return payload

    def _cmd_run_sweep(self, args: dict, progress) -> dict:
        frames = int(args.get("frames_per_position", 3))
        if not (1 <= frames <= 100):
            raise ControlError("frames_per_position must be in 1..100")
        parallel = bool(args.get("parallel", False))
        if not self._sweep_gate.acquire(blocking=False):
            raise ControlError("busy: a sweep is already running")
        try:
            result = run_sweep(
                self.model,
                frames_per_position=frames,
                parallel=parallel,
                progress=progress,
                config=self.config,
            )
        finally:
            self._sweep_gate.release()
        csv_text = result.matrix.to_csv()
        path = self._artifact("sweep", csv_text.encode(), "csv")
        tx_b, rx_b, snr = result.best
        return {
            "artifact": str(path),
            "best_pair": {"tx_beam": tx_b, "rx_beam": rx_b, "snr_db": round(snr, 2)},
            "secondary_peaks": [
                {"tx_beam": t, "rx_beam": r, "snr_db": round(v, 2)}
                for t, r, v in result.secondary_peaks()
            ],
            "n_cells": result.matrix.values.size,
        }

    def _cmd_get_status(self, args: dict, progress) -> dict:
        with self._lock:
            if "node" in args:
                node = self._node(args)
                return {"state": node.status(self.model)}
            return {
                "scenario": self.model.scenario.name,
                "seed": self.seed,
                "version": __version__,
                "nodes": {
                    name: node.status(self.model)
                    for name, node in sorted(self.nodes.items())
                },
            }

    def _cmd_reset(self, args: dict, progress) -> dict:
        self._install_defaults()
        return {"reset": True}


class _Handler(socketserver.StreamRequestHandler):
    def _read_exact(self, n: int) -> bytes | None:
        chunks = b""
        while len(chunks) < n:
            block = self.connection.recv(n - len(chunks))
            if not block:
                return None
            chunks += block
        return chunks

    def _send(self, obj: dict) -> None:
        body = json.dumps(obj, sort_keys=True).encode("utf-8")
        self.connection.sendall(struct.pack(">I", len(body)) + body)

    def handle(self) -> None:
        while True:
            header = self._read_exact(4)
            if header is None:
                return
            (length,) = struct.unpack(">I", header)
            if length == 0 or length > MAX_MESSAGE_BYTES:
                return  # framing unrecoverable; node state untouched
            body = self._read_exact(length)
            if body is None:
                return
            try:
                message = json.loads(body.decode("utf-8"))
                if not isinstance(message, dict):
                    raise ValueError("message body must be a JSON object")
            except (ValueError, UnicodeDecodeError) as exc:
                self._send(
                    {
                        "v": PROTOCOL_VERSION,
                        "id": None,
                        "status": "error",
                        "error": f"malformed message: {exc}",
                    }
                )
                continue
            self.server.twin.dispatch(message, self._send)


class _TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], twin: TwinServer):
        super().__init__(address, _Handler)
        self.twin = twin


def serve(
    scenario: Scenario | str = "tabletop-4p5m",
    seed: int = 0,
    out_dir: str | Path = "artifacts",
    bind: str | None = None,
    background: bool = False,
) -> _TcpServer:
    """Start the control service; blocks unless ``background`` is set.

    Returns the server object (its ``server_address`` reports the bound
    port — handy with port 0 in tests); call ``shutdown()`` to stop a
    background instance.
    """
    address = resolve_bind_address(bind)
    twin = TwinServer(scenario, seed=seed, out_dir=out_dir)
    try:
        server = _TcpServer(address, twin)
    except OSError as exc:
        raise ControlError(f"cannot bind {address[0]}:{address[1]}: {exc}") from exc
    if background:
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        return server
    try:
        server.serve_forever()
    finally:
        server.server_close()
    return server


class ControlClient:
    """Small synchronous client for the wire protocol.

    Progress events are collected (and optionally forwarded to a callback);
    ``request`` returns the final ok/error reply.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT, timeout: float = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._id = 0

    def __enter__(self) -> "ControlClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass

    def _read_exact(self, n: int) -> bytes:
        chunks = b""
        while len(chunks) < n:
            block = self.sock.recv(n - len(chunks))
            if not block:
                raise ControlError("connection closed by server")
            chunks += block
        return chunks

    def send_raw(self, body: bytes) -> None:
        """Send pre-framed bytes (test hook for malformed traffic)."""
        self.sock.sendall(struct.pack(">I", len(body)) + body)

    def read_reply(self) -> dict:
        (length,) = struct.unpack(">I", self._read_exact(4))
        return json.loads(self._read_exact(length).decode("utf-8"))

    def request(
        self,
        cmd: str,
        args: dict | None = None,
        on_progress: Callable[[dict], None] | None = None,
    ) -> dict:
        self._id += 1
        msg_id = f"c{self._id}"
        body = json.dumps(
            {"v": PROTOCOL_VERSION, "id": msg_id, "cmd": cmd, "args": args or {}}
        ).encode("utf-8")
        self.send_raw(body)
        while True:
            reply = self.read_reply()
            if reply.get("status") == "progress":
                if on_progress is not None:
                    on_progress(reply)
                continue
            return reply

    def expect_ok(self, cmd: str, args: dict | None = None) -> dict:
        reply = self.request(cmd, args)
        if reply.get("status") != "ok":
            raise ControlError(f"{cmd} failed: {reply.get('error')}")
        return reply
