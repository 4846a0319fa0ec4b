"""Coordinator/worker messages and in-process transports.

Wire format of a vector (little endian)::

    u32 tag        0 = dense, 1 = sparse
    u32 count      dense: vector length; sparse: number of stored entries
    dense:  count x f64 values
    sparse: count x u32 indices (ascending), then count x f64 values

A vector is sent sparse when fewer than a quarter of its entries are
nonzero (``-0.0`` counts as nonzero so decoding is bit-exact).  Sparse
payloads do not carry the length; the enclosing frame does.

A frame is::

    4 bytes  magic b"DFM1"
    u8       message kind
    u32      length of the JSON metadata block
    ...      UTF-8 JSON metadata (floats use shortest round-trip repr)
    then for each vector named in metadata["vectors"]: u32 byte length + encoded vector
"""

import json
import queue
import struct
import threading
import time
from dataclasses import dataclass, field

import numpy as np

DENSE = 0
SPARSE = 1
_HEAD = struct.Struct("<II")
_FRAME = struct.Struct("<4sBI")
_LEN = struct.Struct("<I")
MAGIC = b"DFM1"

# message kinds
STEP = 1
EVAL = 2
SNAPSHOT = 3
ROLLBACK = 4
STOP = 5
RESULT = 10
SNAPSHOT_REPLY = 11
ERROR = 12
ACK = 13


class CodecError(ValueError):
    pass


class CommError(RuntimeError):
    pass


class WorkerFailure(CommError):
    def __init__(self, worker_id, detail):
        super().__init__(f"worker {worker_id} failed: {detail}")
        self.worker_id = worker_id


class CommTimeout(CommError):
    pass


class ProtocolError(CommError):
    """Messages were exchanged out of the broadcast/gather order."""


def encode_vector(v):
    v = np.ascontiguousarray(v, dtype="<f8")
    if v.ndim != 1:
        raise CodecError("only 1-D vectors are encoded")
    if not np.all(np.isfinite(v)):
        raise CodecError("non-finite entry in vector")
    nz = np.flatnonzero(v.view("<u8") != 0)
    if nz.size < v.size / 4:
        return _HEAD.pack(SPARSE, nz.size) + nz.astype("<u4").tobytes() + v[nz].tobytes()
    return _HEAD.pack(DENSE, v.size) + v.tobytes()


def decode_vector(buf, length=None):
    buf = memoryview(bytes(buf))
    if len(buf) < _HEAD.size:
        raise CodecError("truncated vector header")
    tag, count = _HEAD.unpack_from(buf, 0)
    body = buf[_HEAD.size:]
    if tag == DENSE:
        if len(body) != 8 * count:
            raise CodecError("truncated dense payload")
        if length is not None and count != length:
            raise CodecError(f"dense length {count} != expected {length}")
        return np.frombuffer(body, dtype="<f8").astype(np.float64)
    if tag == SPARSE:
        if length is None:
            raise CodecError("sparse vector needs the length from its frame")
        if len(body) != 12 * count:
            raise CodecError("truncated sparse payload")
        idx = np.frombuffer(body[: 4 * count], dtype="<u4").astype(np.int64)
        vals = np.frombuffer(body[4 * count:], dtype="<f8")
        if count and (idx[-1] >= length or np.any(np.diff(idx) <= 0)):
            raise CodecError("bad sparse indices")
        out = np.zeros(length)
        out[idx] = vals
        return out
    raise CodecError(f"bad vector tag {tag}")


def encode_frame(kind, meta, vectors=()):
    meta = dict(meta)
    meta["vectors"] = [name for name, _ in vectors]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [_FRAME.pack(MAGIC, kind, len(blob)), blob]
    for _, vec in vectors:
        enc = encode_vector(vec)
        parts.append(_LEN.pack(len(enc)))
        parts.append(enc)
    return b"".join(parts)


def decode_frame(buf):
    if len(buf) < _FRAME.size:
        raise CodecError("truncated frame")
    magic, kind, mlen = _FRAME.unpack_from(buf, 0)
    if magic != MAGIC:
        raise CodecError("bad frame magic")
    pos = _FRAME.size
    meta = json.loads(bytes(buf[pos:pos + mlen]).decode("utf-8"))
    pos += mlen
    length = meta.get("d")
    vectors = {}
    for name in meta.pop("vectors"):
        (vlen,) = _LEN.unpack_from(buf, pos)
        pos += _LEN.size
        vectors[name] = decode_vector(buf[pos:pos + vlen], meta.get(f"len_{name}", length))
        pos += vlen
    if pos != len(buf):
        raise CodecError("trailing bytes in frame")
    return kind, meta, vectors


@dataclass
class RoundBroadcast:
    round: int
    delta_v_tilde: np.ndarray
    kappa: float = 0.0
    y_version: int = 0
    step: bool = True
    evaluate: bool = True

    def encode(self):
        meta = {
            "round": self.round,
            "d": int(self.delta_v_tilde.size),
            "kappa": self.kappa,
            "y_version": self.y_version,
            "evaluate": self.evaluate,
        }
        return encode_frame(STEP if self.step else EVAL, meta, [("delta_v_tilde", self.delta_v_tilde)])

    @classmethod
    def decode(cls, buf):
        kind, meta, vecs = decode_frame(buf)
        if kind not in (STEP, EVAL):
            raise CodecError(f"frame kind {kind} is not a broadcast")
        return cls(meta["round"], vecs["delta_v_tilde"], meta["kappa"], meta["y_version"], kind == STEP, meta["evaluate"])


@dataclass
class RoundResult:
    worker_id: int
    round: int
    delta_v: np.ndarray
    loss_sum: float
    conj_sum: float
    n_ell: int
    batch: int = 0
    v_local_raw: np.ndarray = None  # only sent when diagnostics are on

    def encode(self):
        meta = {
            "worker_id": self.worker_id,
            "round": self.round,
            "d": int(self.delta_v.size),
            "loss_sum": self.loss_sum,
            "conj_sum": self.conj_sum,
            "n_ell": self.n_ell,
            "batch": self.batch,
        }
        vectors = [("delta_v", self.delta_v)]
        if self.v_local_raw is not None:
            vectors.append(("v_local_raw", self.v_local_raw))
        return encode_frame(RESULT, meta, vectors)

    @classmethod
    def decode(cls, buf):
        kind, meta, vecs = decode_frame(buf)
        if kind == ERROR:
            raise WorkerFailure(meta["worker_id"], meta["detail"])
        if kind != RESULT:
            raise CodecError(f"frame kind {kind} is not a round result")
        return cls(meta["worker_id"], meta["round"], vecs["delta_v"], meta["loss_sum"], meta["conj_sum"],
                   meta["n_ell"], meta["batch"], vecs.get("v_local_raw"))


def error_frame(worker_id, detail):
    return encode_frame(ERROR, {"worker_id": worker_id, "detail": detail})


def control_frame(kind, **meta):
    return encode_frame(kind, meta)


@dataclass
class CommStats:
    rounds: int = 0
    bytes_up: int = 0
    bytes_down: int = 0
    messages_up: int = 0
    messages_down: int = 0
    control_messages: int = 0
    wall_time: dict = field(default_factory=dict)

    def add_time(self, phase, seconds):
        self.wall_time[phase] = self.wall_time.get(phase, 0.0) + seconds


class Transport:
    """Ordered broadcast/gather between one coordinator and ``m`` worker handlers.

    Each handler maps a request frame to a reply frame.  Every round is one
    :meth:`broadcast` followed by one :meth:`gather`; anything else raises
    :class:`ProtocolError`.  Control requests (snapshots, rollback, stop)
    are only legal between rounds and are counted separately.
    """

    def __init__(self, handlers, timeout=None):
        self.m = len(handlers)
        self.timeout = timeout
        self.stats = CommStats()
        self._pending = None

    def broadcast(self, msg):
        if self._pending is not None:
            raise ProtocolError(f"broadcast for round {msg.round} before gathering round {self._pending}")
        payload = msg.encode()
        t0 = time.perf_counter()
        self._send_all(payload)
        self.stats.add_time("broadcast", time.perf_counter() - t0)
        self.stats.bytes_down += len(payload) * self.m
        self.stats.messages_down += self.m
        self._pending = msg.round

    def gather(self, round_):
        if self._pending != round_:
            raise ProtocolError(f"gather for round {round_} without a matching broadcast")
        t0 = time.perf_counter()
        replies = self._collect()
        self.stats.add_time("gather", time.perf_counter() - t0)
        results = [None] * self.m
        for wid, buf in replies:
            self.stats.bytes_up += len(buf)
            res = RoundResult.decode(buf)
            if res.round != round_:
                raise ProtocolError(f"worker {wid} answered round {res.round}, expected {round_}")
            results[wid] = res
        self.stats.messages_up += self.m
        self.stats.rounds += 1
        self._pending = None
        return results

    def request(self, kind, **meta):
        """Send a control frame to every worker; returns decoded replies in worker order."""
        if self._pending is not None:
            raise ProtocolError("control request in the middle of a round")
        self._send_all(control_frame(kind, **meta))
        out = [None] * self.m
        for wid, buf in self._collect():
            k, rmeta, vecs = decode_frame(buf)
            if k == ERROR:
                raise WorkerFailure(rmeta["worker_id"], rmeta["detail"])
            out[wid] = (rmeta, vecs)
        self.stats.control_messages += 2 * self.m
        return out

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _send_all(self, payload):
        raise NotImplementedError

    def _collect(self):
        raise NotImplementedError


class InlineTransport(Transport):
    """Runs each handler synchronously in the caller's thread, in worker order."""

    def __init__(self, handlers, timeout=None):
        super().__init__(handlers, timeout)
        self._handlers = list(handlers)
        self._replies = []

    def _send_all(self, payload):
        replies = []
        for wid, handler in enumerate(self._handlers):
            try:
                replies.append((wid, handler(payload)))
            except Exception as exc:  # surfaced as a worker failure
                replies.append((wid, error_frame(wid, f"{type(exc).__name__}: {exc}")))
        self._replies = replies

    def _collect(self):
        out, self._replies = self._replies, []
        return out


class ThreadTransport(Transport):
    """One thread per worker; frames travel through queues.

    Arrival order is arbitrary, so replies are slotted by worker id before
    anything is reduced.
    """

    def __init__(self, handlers, timeout=60.0):
        super().__init__(handlers, timeout)
        self._inboxes = [queue.Queue() for _ in handlers]
        self._outbox = queue.Queue()
        self._threads = []
        for wid, handler in enumerate(handlers):
            t = threading.Thread(target=self._serve, args=(wid, handler), name=f"dadm-worker-{wid}", daemon=True)
            t.start()
            self._threads.append(t)

    def _serve(self, wid, handler):
        inbox = self._inboxes[wid]
        while True:
            payload = inbox.get()
            if payload is None:
                return
            try:
                reply = handler(payload)
            except Exception as exc:
                reply = error_frame(wid, f"{type(exc).__name__}: {exc}")
            self._outbox.put((wid, reply))

    def _send_all(self, payload):
        for box in self._inboxes:
            box.put(payload)

    def _collect(self):
        replies = []
        deadline = None if self.timeout is None else time.monotonic() + self.timeout
        while len(replies) < self.m:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            try:
                replies.append(self._outbox.get(timeout=remaining))
            except queue.Empty:
                seen = {wid for wid, _ in replies}
                missing = [w for w in range(self.m) if w not in seen]
                raise CommTimeout(f"no reply from workers {missing} within {self.timeout}s") from None
        return replies

    def close(self):
        for box in self._inboxes:
            box.put(None)
        for t in self._threads:
            t.join(timeout=5.0)
        self._threads = []


TRANSPORTS = {"inline": InlineTransport, "threads": ThreadTransport}


def make_transport(name, handlers, timeout=60.0):
    try:
        cls = TRANSPORTS[name]
    except KeyError:
        raise ValueError(f"unknown transport {name!r}") from None
    return cls(handlers, timeout=timeout)
