"""Coordinator/worker execution of the aggregators, with exact wire accounting.

Frame layout (little-endian, 26-byte header, frozen):

    magic   4 bytes  b"DEES"
    version u8       protocol version, currently 1
    kind    u8       MessageKind value
    node_id u32      sender for uplink frames, target for downlink frames
    rows    u32      payload row count (0 for header-only frames)
    cols    u32      payload column count (0 for header-only frames)
    length  u64      payload byte count, always rows * cols * 8
    payload          row-major IEEE-754 binary64, little-endian

Header-only frames are exactly 26 bytes.  A run is a fixed choreography:
every worker uploads one SubmitSolution; in refinement mode the
coordinator then broadcasts BroadcastReference and gathers SubmitAligned
once per refinementiteration.  No hello or shutdown frames are sent, so
byte counts are exact multiples of the frame sizes above.  Round
counting: each synchronous payload phase counts one round, so one-shot
runs use 1 round and refinement runs use 1 + 2 * n_iter.
"""

from __future__ import annotations

import os
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    MalformedFrame,
    NotOrthonormal,
    PayloadValidation,
    VersionMismatch,
    WorkerFailed,
    WorkerTimeout,
)
from .estimators import (
    AggregateSolution,
    LocalSolution,
    naive_average,
    orthonormalized_mean,
    procrustes_fix_average,
    projector_average,
    sign_fix_average,
)
from .linalg import (
    SubspaceEstimate,
    orthonormality_defect,
    procrustes_rotation,
)

MAGIC = b"DEES"
PROTOCOL_VERSION = 1
_HEADER = struct.Struct("<4sBBIIIQ")
HEADER_BYTES = _HEADER.size  # 26
# Received bases may carry transport-level rounding in principle; accept
# a looser orthonormality defect than freshly computed ones.
PAYLOAD_ORTHONORMAL_TOL = 1e-8
_U32_MAX = 2**32 - 1

ENV_BIND = "EIGENFED_BIND"


class MessageKind(IntEnum):
    HELLO = 0
    SUBMIT_SOLUTION = 1
    BROADCAST_REFERENCE = 2
    SUBMIT_ALIGNED = 3
    DONE = 4
    ERROR = 5


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    node_id: int
    payload: np.ndarray | None = None
    protocol_version: int = PROTOCOL_VERSION


def frame_bytes(rows: int, cols: int) -> int:
    """Exact on-wire size of a frame carrying a rows x cols payload."""
    return HEADER_BYTES + rows * cols * 8


def encode_message(msg: Message) -> bytes:
    """Serialize a message to one frame."""
    if msg.protocol_version != PROTOCOL_VERSION:
        raise VersionMismatch(
            f"cannot encode protocol version {msg.protocol_version}"
        )
    if not (0 <= msg.node_id <= _U32_MAX):
        raise MalformedFrame(f"node_id {msg.node_id} does not fit in u32")
    if msg.payload is None:
        rows = cols = 0
        body = b""
    else:
        arr = np.ascontiguousarray(np.asarray(msg.payload, dtype="<f8"))
        if arr.ndim != 2:
            raise DimensionMismatch(f"payload must be 2-d, got shape {arr.shape}")
        rows, cols = arr.shape
        if rows > _U32_MAX or cols > _U32_MAX or rows < 1 or cols < 1:
            raise MalformedFrame(f"payload shape {arr.shape} not encodable")
        body = arr.tobytes(order="C")
    header = _HEADER.pack(
        MAGIC, PROTOCOL_VERSION, int(msg.kind), msg.node_id, rows, cols, len(body)
    )
    return header + body


def decode_message(frame: bytes) -> Message:
    """Parse one frame; the exact inverse of encode_message."""
    if len(frame) < HEADER_BYTES:
        raise MalformedFrame(f"frame shorter than header: {len(frame)} bytes")
    magic, version, kind, node_id, rows, cols, length = _HEADER.unpack_from(frame)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    if version != PROTOCOL_VERSION:
        raise VersionMismatch(f"protocol version {version}, expected {PROTOCOL_VERSION}")
    try:
        kind = MessageKind(kind)
    except ValueError:
        raise MalformedFrame(f"unknown message kind {kind}") from None
    if length != rows * cols * 8:
        raise MalformedFrame(
            f"declared payload length {length} != rows*cols*8 = {rows * cols * 8}"
        )
    if len(frame) != HEADER_BYTES + length:
        raise MalformedFrame(
            f"frame is {len(frame)} bytes, header promises {HEADER_BYTES + length}"
        )
    if rows == 0 or cols == 0:
        if length != 0:
            raise MalformedFrame("header-only frame with nonzero payload length")
        payload = None
    else:
        payload = (
            np.frombuffer(frame, dtype="<f8", count=rows * cols, offset=HEADER_BYTES)
            .reshape(rows, cols)
            .astype(np.float64)
        )
    return Message(kind=kind, node_id=node_id, payload=payload)


@dataclass(frozen=True)
class Topology:
    """How many workers and over which transport they talk."""

    m: int
    transport: str = "inprocess"
    address: str | None = None
    port: int = 0
    timeout: float = 30.0

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m", f"need at least one worker, got {self.m}")
        if self.transport not in ("inprocess", "socket"):
            raise ConfigError("transport", f"unknown transport {self.transport!r}")
        if self.timeout <= 0.0:
            raise ConfigError("timeout", f"need a positive timeout, got {self.timeout}")

    def bind_address(self) -> str:
        if self.address is not None:
            return self.address
        return os.environ.get(ENV_BIND, "127.0.0.1")


@dataclass(frozen=True)
class CommAccounting:
    """Exact traffic of one run: payload rounds, bytes each way, wall time."""

    rounds: int
    bytes_up: int
    bytes_down: int
    wall_time_s: float


class _Inbox:
    """Coordinator-side receive queue with exact byte accounting."""

    def __init__(self):
        self._q: queue.Queue = queue.Queue()
        self.bytes_received = 0
        self._lock = threading.Lock()

    def put_frame(self, frame: bytes):
        with self._lock:
            self.bytes_received += len(frame)
        self._q.put(("frame", frame))

    def put_error(self, exc: Exception):
        self._q.put(("error", exc))

    def get(self, deadline: float) -> bytes:
        remaining = deadline - time.monotonic()
        if remaining <= 0.0:
            raise queue.Empty
        tag, item = self._q.get(timeout=remaining)
        if tag == "error":
            raise item
        return item


class _InProcessLink:
    """Worker's view of the in-process transport: two byte queues."""

    def __init__(self, inbox: _Inbox):
        self._inbox = inbox
        self._down: queue.Queue = queue.Queue()
        self.bytes_down = 0

    def send_up(self, frame: bytes):
        self._inbox.put_frame(frame)

    def send_down(self, frame: bytes):
        self.bytes_down += len(frame)
        self._down.put(frame)

    def recv_down(self, timeout: float) -> bytes:
        return self._down.get(timeout=timeout)


def _recv_exactly(conn: socket.socket, count: int) -> bytes | None:
    chunks = []
    got = 0
    while got < count:
        chunk = conn.recv(count - got)
        if not chunk:
            return None
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def _read_socket_frame(conn: socket.socket) -> bytes | None:
    """Read one whole frame off a stream socket, or None on clean close."""
    header = _recv_exactly(conn, HEADER_BYTES)
    if header is None:
        return None
    magic, _, _, _, _, _, length = _HEADER.unpack(header)
    if magic != MAGIC:
        raise MalformedFrame(f"bad magic {magic!r}")
    if length == 0:
        return header
    body = _recv_exactly(conn, length)
    if body is None:
        raise MalformedFrame("connection closed mid-payload")
    return header + body


def _validate_payload(msg: Message, expected_shape=None) -> np.ndarray:
    if msg.payload is None:
        raise PayloadValidation(msg.node_id, f"worker {msg.node_id} sent no payload")
    if expected_shape is not None and msg.payload.shape != expected_shape:
        raise PayloadValidation(
            msg.node_id,
            f"worker {msg.node_id} sent shape {msg.payload.shape}, "
            f"expected {expected_shape}",
        )
    if not np.all(np.isfinite(msg.payload)):
        raise PayloadValidation(msg.node_id, f"worker {msg.node_id} sent non-finite values")
    defect = orthonormality_defect(msg.payload)
    if defect > PAYLOAD_ORTHONORMAL_TOL:
        raise PayloadValidation(
            msg.node_id,
            f"worker {msg.node_id} payload not orthonormal (defect {defect:.3e})",
        )
    return msg.payload


def _gather(
    inbox: _Inbox, m: int, expected_kind: MessageKind, timeout: float, expected_shape=None
) -> dict[int, np.ndarray]:
    """Collect one payload from every worker, keyed and later ordered by node_id."""
    deadline = time.monotonic() + timeout
    got: dict[int, np.ndarray] = {}
    while len(got) < m:
        try:
            frame = inbox.get(deadline)
        except queue.Empty:
            missing = min(i for i in range(m) if i not in got)
            raise WorkerTimeout(missing) from None
        msg = decode_message(frame)
        if msg.kind == MessageKind.ERROR:
            raise WorkerFailed(msg.node_id)
        if msg.kind != expected_kind:
            raise PayloadValidation(
                msg.node_id,
                f"worker {msg.node_id} sent {msg.kind.name}, expected {expected_kind.name}",
            )
        if not (0 <= msg.node_id < m):
            raise PayloadValidation(msg.node_id, f"unknown node_id {msg.node_id}")
        if msg.node_id in got:
            raise PayloadValidation(msg.node_id, f"duplicate frame from worker {msg.node_id}")
        got[msg.node_id] = _validate_payload(msg, expected_shape)
    return got


def _solutions_from(got: dict[int, np.ndarray]) -> list[LocalSolution]:
    solutions = []
    for node_id in sorted(got):
        try:
            estimate = SubspaceEstimate(got[node_id])
        except NotOrthonormal as exc:
            raise PayloadValidation(node_id, str(exc)) from exc
        solutions.append(LocalSolution(node_id=node_id, estimate=estimate))
    return solutions


_AGGREGATORS = {
    "naive": naive_average,
    "sign_fix": sign_fix_average,
    "procrustes": procrustes_fix_average,
    "projector_avg": projector_average,
}


class _Cluster:
    """Spawns workers over the chosen transport and hides the difference.

    Exposes one inbox of uplink frames plus per-node downlink sends; all
    byte counts are taken at the transport boundary.
    """

    def __init__(self, topology: Topology, worker_main):
        self.topology = topology
        self.inbox = _Inbox()
        self._threads: list[threading.Thread] = []
        self._links: list[_InProcessLink] = []
        self._conns: dict[int, socket.socket] = {}
        self._server: socket.socket | None = None
        self._bytes_down = 0
        self._worker_main = worker_main

    def start(self):
        if self.topology.transport == "inprocess":
            self._start_inprocess()
        else:
            self._start_socket()

    def _start_inprocess(self):
        for node_id in range(self.topology.m):
            link = _InProcessLink(self.inbox)
            self._links.append(link)
            t = threading.Thread(
                target=self._worker_main,
                args=(node_id, link.send_up, link.recv_down),
                daemon=True,
            )
            self._threads.append(t)
            t.start()

    def _start_socket(self):
        server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        server.bind((self.topology.bind_address(), self.topology.port))
        server.listen(self.topology.m)
        server.settimeout(self.topology.timeout)
        self._server = server
        host, port = server.getsockname()

        def worker_entry(node_id: int):
            conn = socket.create_connection((host, port), timeout=self.topology.timeout)
            try:
                send = lambda frame: conn.sendall(frame)
                def recv(timeout: float) -> bytes:
                    conn.settimeout(timeout)
                    frame = _read_socket_frame(conn)
                    if frame is None:
                        raise queue.Empty
                    return frame
                self._worker_main(node_id, send, recv)
            finally:
                conn.close()

        for node_id in range(self.topology.m):
            t = threading.Thread(target=worker_entry, args=(node_id,), daemon=True)
            self._threads.append(t)
            t.start()

        deadline = time.monotonic() + self.topology.timeout
        accepted = []
        for _ in range(self.topology.m):
            remaining = deadline - time.monotonic()
            if remaining <= 0.0:
                raise WorkerTimeout(len(accepted))
            server.settimeout(remaining)
            try:
                conn, _ = server.accept()
            except socket.timeout:
                raise WorkerTimeout(len(accepted)) from None
            accepted.append(conn)

        # Connections are anonymous until their first frame names a node.
        for conn in accepted:
            t = threading.Thread(target=self._pump, args=(conn,), daemon=True)
            self._threads.append(t)
            t.start()

    def _pump(self, conn: socket.socket):
        """Move frames from one connection into the shared inbox."""
        conn.settimeout(self.topology.timeout)
        try:
            while True:
                frame = _read_socket_frame(conn)
                if frame is None:
                    return
                self.inbox.put_frame(frame)
                node_id = _HEADER.unpack_from(frame)[3]
                self._conns.setdefault(node_id, conn)
        except (MalformedFrame, VersionMismatch) as exc:
            self.inbox.put_error(exc)
        except OSError:
            return

    def send_down(self, node_id: int, frame: bytes):
        if self.topology.transport == "inprocess":
            self._links[node_id].send_down(frame)
        else:
            conn = self._conns.get(node_id)
            if conn is None:
                raise WorkerTimeout(node_id, f"no connection known for worker {node_id}")
            conn.sendall(frame)
            self._bytes_down += len(frame)

    @property
    def bytes_down(self) -> int:
        if self.topology.transport == "inprocess":
            return sum(link.bytes_down for link in self._links)
        return self._bytes_down

    def close(self):
        if self._server is not None:
            self._server.close()
        for conn in self._conns.values():
            try:
                conn.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=0.2)


def run_one_shot(
    topology: Topology,
    per_node_work,
    aggregator: str = "procrustes",
    reference_index: int = 0,
) -> tuple[AggregateSolution, CommAccounting]:
    """One upload per worker, one aggregation at the coordinator.

    per_node_work(node_id) runs on the worker and returns a
    LocalSolution; only the basis crosses the wire.  The aggregate is
    bit-identical to calling the named aggregator on the same solutions
    directly, whichever transport carries the frames.
    """
    if aggregator not in _AGGREGATORS:
        raise ConfigError("aggregator", f"unknown aggregator {aggregator!r}")
    start = time.perf_counter()

    def worker_main(node_id: int, send, recv):
        try:
            sol = per_node_work(node_id)
            frame = encode_message(
                Message(MessageKind.SUBMIT_SOLUTION, node_id, sol.estimate.basis)
            )
        except Exception:
            send(encode_message(Message(MessageKind.ERROR, node_id)))
            return
        send(frame)

    cluster = _Cluster(topology, worker_main)
    try:
        cluster.start()
        got = _gather(
            cluster.inbox, topology.m, MessageKind.SUBMIT_SOLUTION, topology.timeout
        )
        solutions = _solutions_from(got)
        if aggregator == "procrustes":
            result = procrustes_fix_average(
                solutions, reference=solutions[reference_index].estimate
            )
        elif aggregator == "sign_fix":
            result = sign_fix_average(solutions, reference_index=reference_index)
        else:
            result = _AGGREGATORS[aggregator](solutions)
        accounting = CommAccounting(
            rounds=1,
            bytes_up=cluster.inbox.bytes_received,
            bytes_down=cluster.bytes_down,
            wall_time_s=time.perf_counter() - start,
        )
        return result, accounting
    finally:
        cluster.close()


def run_parallel_align(
    topology: Topology, per_node_work, n_iter: int = 1
) -> tuple[AggregateSolution, CommAccounting]:
    """Refinement with the alignment work placed on the workers.

    Workers upload their solutions once; each refinement iteration
    broadcasts the current reference, and every worker uploads its own
    estimate aligned to it.  The result matches iterative_refinement on
    the same solutions bit for bit; only the placement of the Procrustes
    solve differs.  Uses 1 + 2 * n_iter payload rounds.
    """
    if n_iter < 1:
        raise ConfigError("n_iter", f"need n_iter >= 1, got {n_iter}")
    start = time.perf_counter()

    def worker_main(node_id: int, send, recv):
        try:
            sol = per_node_work(node_id)
            basis = sol.estimate.basis
            send(encode_message(Message(MessageKind.SUBMIT_SOLUTION, node_id, basis)))
            for _ in range(n_iter):
                frame = recv(topology.timeout)
                msg = decode_message(frame)
                if msg.kind == MessageKind.DONE:
                    return
                if msg.kind != MessageKind.BROADCAST_REFERENCE or msg.payload is None:
                    return
                z = procrustes_rotation(basis, msg.payload)
                send(
                    encode_message(
                        Message(MessageKind.SUBMIT_ALIGNED, node_id, basis @ z.matrix)
                    )
                )
        except queue.Empty:
            return
        except Exception:
            try:
                send(encode_message(Message(MessageKind.ERROR, node_id)))
            except OSError:
                pass

    cluster = _Cluster(topology, worker_main)
    try:
        cluster.start()
        got = _gather(
            cluster.inbox, topology.m, MessageKind.SUBMIT_SOLUTION, topology.timeout
        )
        solutions = _solutions_from(got)
        shape = solutions[0].estimate.basis.shape
        reference = solutions[0].estimate.basis
        result = None
        completed = 0
        for _ in range(n_iter):
            frame_by_node = {
                node_id: encode_message(
                    Message(MessageKind.BROADCAST_REFERENCE, node_id, reference)
                )
                for node_id in range(topology.m)
            }
            for node_id, frame in frame_by_node.items():
                cluster.send_down(node_id, frame)
            aligned_by_node = _gather(
                cluster.inbox,
                topology.m,
                MessageKind.SUBMIT_ALIGNED,
                topology.timeout,
                expected_shape=shape,
            )
            aligned = [aligned_by_node[i] for i in sorted(aligned_by_node)]
            result = orthonormalized_mean(aligned, "procrustes")
            completed += 1
            if result.degenerate:
                # Header-only Done frames release workers still waiting
                # on the next broadcast; payload round count is unchanged.
                if completed < n_iter:
                    for node_id in range(topology.m):
                        cluster.send_down(
                            node_id,
                            encode_message(Message(MessageKind.DONE, node_id)),
                        )
                break
            reference = result.estimate.basis
        final = AggregateSolution(
            estimate=result.estimate,
            method="iterative",
            pre_qr_sigma_min=result.pre_qr_sigma_min,
            rounds_used=completed,
            degenerate=result.degenerate,
        )
        accounting = CommAccounting(
            rounds=1 + 2 * completed,
            bytes_up=cluster.inbox.bytes_received,
            bytes_down=cluster.bytes_down,
            wall_time_s=time.perf_counter() - start,
        )
        return final, accounting
    finally:
        cluster.close()
