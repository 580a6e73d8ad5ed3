"""Binary wire protocol, loopback and TCP transports, and service proxies.

Frame layout (all integers big-endian)::

    length:u32 | opcode:u8 | request_id:u64 | fields...

``length`` counts everything after itself (opcode included). Field types:
``id`` is 16 raw bytes, ``bytes``/``str`` are u32-length-prefixed, lists are
a u32 count followed by the items. Replies reuse the request's opcode and
request id; failures come back as opcode 127 carrying ``code:u16 message:str``.
See ``PROTOCOL.md`` for the per-opcode field tables.
"""

from __future__ import annotations

import itertools
import logging
import socket
import socketserver
import struct
import threading
from concurrent.futures import Future
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass
from typing import Optional

from . import errors
from .errors import BlobError, ConnectionFailed, Malformed, Timeout, UnknownOpcode

log = logging.getLogger(__name__)

MAX_FRAME = 16 * 1024 * 1024
DEFAULT_CALL_TIMEOUT = 60.0
NO_OFFSET = 2**64 - 1

PUT_PAGE = 1
GET_PAGE = 2
USAGE = 3
PUT_NODE = 4
GET_NODE = 5
REGISTER = 6
ALLOCATE = 7
REPORT = 8
CREATE_BLOB = 9
ASSIGN_VERSION = 10
NOTIFY_SUCCESS = 11
GET_RECENT = 12
GET_SIZE = 13
WAIT_PUBLISHED = 14
BRANCH = 15
BLOB_INFO = 16
TOPOLOGY = 17
ERROR = 127

_TICKET_ENTRY = ("tuple", ("u64", "u64", "u64", "u64"))

REQUESTS = {
    PUT_PAGE: ("id", "bytes"),
    GET_PAGE: ("id", "u64", "u64"),
    USAGE: (),
    PUT_NODE: ("bytes", "bytes"),
    GET_NODE: ("bytes",),
    REGISTER: ("str",),
    ALLOCATE: ("u32",),
    REPORT: ("str", "u64"),
    CREATE_BLOB: ("u32",),
    ASSIGN_VERSION: ("id", "u8", "u64", "u64"),
    NOTIFY_SUCCESS: ("id", "u64"),
    GET_RECENT: ("id",),
    GET_SIZE: ("id", "u64"),
    WAIT_PUBLISHED: ("id", "u64", "u32"),
    BRANCH: ("id", "u64"),
    BLOB_INFO: ("id",),
    TOPOLOGY: (),
    ERROR: ("u16", "str"),
}

REPLIES = {
    PUT_PAGE: (),
    GET_PAGE: ("bytes",),
    USAGE: ("u64", "u64"),
    PUT_NODE: (),
    GET_NODE: ("bytes",),
    REGISTER: (),
    ALLOCATE: (("list", "str"),),
    REPORT: (),
    CREATE_BLOB: ("id",),
    ASSIGN_VERSION: ("u64", "u64", "u64", "u64", "u64", ("list", _TICKET_ENTRY), "u64"),
    NOTIFY_SUCCESS: (),
    GET_RECENT: ("u64",),
    GET_SIZE: ("u64",),
    WAIT_PUBLISHED: (),
    BRANCH: ("id",),
    BLOB_INFO: ("u32", ("list", ("tuple", ("id", "u64")))),
    TOPOLOGY: ("str", ("list", "str")),
    ERROR: ("u16", "str"),
}

_INTS = {"u8": struct.Struct(">B"), "u16": struct.Struct(">H"), "u32": struct.Struct(">I"), "u64": struct.Struct(">Q")}
_LEN = _INTS["u32"]
_HEAD = struct.Struct(">IBQ")


@dataclass(frozen=True)
class Message:
    opcode: int
    req_id: int
    fields: tuple
    reply: bool = False


# -- codec -----------------------------------------------------------------


def _pack(kind, value, out: list) -> None:
    if isinstance(kind, tuple):
        if kind[0] == "list":
            out.append(_LEN.pack(len(value)))
            for item in value:
                _pack(kind[1], item, out)
        else:
            for k, v in zip(kind[1], value, strict=True):
                _pack(k, v, out)
    elif kind in _INTS:
        out.append(_INTS[kind].pack(value))
    elif kind == "id":
        if len(value) != 16:
            raise ValueError("ids are 16 bytes")
        out.append(bytes(value))
    elif kind == "bytes":
        out.append(_LEN.pack(len(value)))
        out.append(bytes(value))
    elif kind == "str":
        data = value.encode()
        out.append(_LEN.pack(len(data)))
        out.append(data)
    else:
        raise ValueError(f"unknown field kind {kind!r}")


def _unpack(kind, buf: memoryview, pos: int):
    if isinstance(kind, tuple):
        if kind[0] == "list":
            count, pos = _unpack("u32", buf, pos)
            if count > len(buf) - pos:
                raise Malformed("list count exceeds frame")
            items = []
            for _ in range(count):
                item, pos = _unpack(kind[1], buf, pos)
                items.append(item)
            return tuple(items), pos
        items = []
        for k in kind[1]:
            item, pos = _unpack(k, buf, pos)
            items.append(item)
        return tuple(items), pos
    if kind in _INTS:
        st = _INTS[kind]
        if pos + st.size > len(buf):
            raise Malformed("truncated integer")
        return st.unpack_from(buf, pos)[0], pos + st.size
    if kind == "id":
        if pos + 16 > len(buf):
            raise Malformed("truncated id")
        return bytes(buf[pos : pos + 16]), pos + 16
    n, pos = _unpack("u32", buf, pos)
    if pos + n > len(buf):
        raise Malformed("truncated byte string")
    data = bytes(buf[pos : pos + n])
    if kind == "str":
        try:
            return data.decode(), pos + n
        except UnicodeDecodeError:
            raise Malformed("string is not utf-8") from None
    return data, pos + n


def encode(msg: Message) -> bytes:
    schema = (REPLIES if msg.reply else REQUESTS)[msg.opcode]
    out = []
    for kind, value in zip(schema, msg.fields, strict=True):
        _pack(kind, value, out)
    body = b"".join(out)
    if len(body) + 9 > MAX_FRAME:
        raise Malformed("frame exceeds the 16 MiB limit")
    return _HEAD.pack(len(body) + 9, msg.opcode, msg.req_id) + body


def decode(frame: bytes, reply: bool = False) -> Message:
    """Inverse of :func:`encode`; raises ``Malformed`` on any invalid input."""
    buf = memoryview(frame)
    if len(buf) < _HEAD.size:
        raise Malformed("frame shorter than its header")
    length, opcode, req_id = _HEAD.unpack_from(buf, 0)
    if length != len(buf) - 4:
        raise Malformed(f"length field {length} does not match frame of {len(buf)} bytes")
    if length > MAX_FRAME:
        raise Malformed("frame exceeds the 16 MiB limit")
    schema = (REPLIES if reply else REQUESTS).get(opcode)
    if schema is None:
        raise UnknownOpcode(f"unknown opcode {opcode}")
    pos = _HEAD.size
    fields = []
    for kind in schema:
        value, pos = _unpack(kind, buf, pos)
        fields.append(value)
    if pos != len(buf):
        raise Malformed("trailing bytes in frame")
    return Message(opcode, req_id, tuple(fields), reply)


def error_frame(req_id: int, exc: BlobError) -> bytes:
    return encode(Message(ERROR, req_id, (exc.code, str(exc)[:4096]), reply=True))


def peek_req_id(frame: bytes) -> int:
    if len(frame) >= _HEAD.size:
        return _HEAD.unpack_from(frame, 0)[2]
    return 0


# -- dispatch --------------------------------------------------------------


class Dispatcher:
    """Routes decoded requests to whichever service objects this node hosts."""

    def __init__(self, pages=None, meta=None, allocator=None, versioner=None, topology=None):
        self.handlers = {}
        if pages is not None:
            self.handlers[PUT_PAGE] = lambda pid, data: pages.put_page(pid, data) or ()
            self.handlers[GET_PAGE] = lambda pid, off, n: (pages.get_page(pid, off, n),)
            self.handlers[USAGE] = lambda: tuple(pages.usage())
        if meta is not None:
            self.handlers[PUT_NODE] = lambda key, node: meta.put_node(key, node) or ()
            self.handlers[GET_NODE] = lambda key: (meta.get_node(key),)
        if allocator is not None:
            self.handlers[REGISTER] = lambda addr: allocator.register(addr) or ()
            self.handlers[ALLOCATE] = lambda n: (tuple(allocator.allocate(n)),)
            self.handlers[REPORT] = lambda addr, n: allocator.report(addr, n) or ()
        if versioner is not None:
            self._add_versioner(versioner)
        if topology is not None:
            self.handlers[TOPOLOGY] = lambda: (topology[0], tuple(topology[1]))

    def _add_versioner(self, vm):
        from .versioner import UpdateKind

        def assign(blob, kind, offset, size):
            t = vm.assign_version(blob, UpdateKind(kind), None if offset == NO_OFFSET else offset, size)
            return (t.vw, t.effective_offset, t.prev_size, t.vp, t.vp_size, tuple(tuple(c) for c in t.concurrent), t.size)

        def wait(blob, v, timeout_ms):
            vm.wait_published(blob, v, timeout_ms / 1000 if timeout_ms else None)
            return ()

        def info(blob):
            i = vm.blob_info(blob)
            return (i.psize, i.ancestry)

        self.handlers.update({
            CREATE_BLOB: lambda psize: (vm.create_blob(psize),),
            ASSIGN_VERSION: assign,
            NOTIFY_SUCCESS: lambda blob, v: vm.notify_success(blob, v) or (),
            GET_RECENT: lambda blob: (vm.get_recent(blob),),
            GET_SIZE: lambda blob, v: (vm.get_size(blob, v),),
            WAIT_PUBLISHED: wait,
            BRANCH: lambda blob, v: (vm.branch(blob, v),),
            BLOB_INFO: info,
        })

    def handle_frame(self, frame: bytes) -> bytes:
        """Turn one request frame into one reply frame. Never raises."""
        req_id = peek_req_id(frame)
        try:
            msg = decode(frame)
            handler = self.handlers.get(msg.opcode)
            if handler is None:
                raise UnknownOpcode(f"opcode {msg.opcode} is not served here")
            result = handler(*msg.fields)
            return encode(Message(msg.opcode, req_id, result, reply=True))
        except BlobError as exc:
            return error_frame(req_id, exc)
        except (ValueError, TypeError, OverflowError) as exc:
            return error_frame(req_id, Malformed(str(exc)))
        except Exception as exc:  # keep the connection alive on service bugs
            log.exception("handler failed")
            return error_frame(req_id, BlobError(repr(exc)))


def _reply_fields(frame: bytes, expect_opcode: int) -> tuple:
    msg = decode(frame, reply=True)
    if msg.opcode == ERROR:
        code, text = msg.fields
        raise errors.from_code(code, text)
    if msg.opcode != expect_opcode:
        raise Malformed(f"reply opcode {msg.opcode} for request {expect_opcode}")
    return msg.fields


# -- transports ------------------------------------------------------------


class LoopbackEndpoint:
    """In-process transport; every call still goes through the byte codec."""

    def __init__(self, dispatcher: Dispatcher):
        self.dispatcher = dispatcher
        self._ids = itertools.count(1)

    def call(self, opcode: int, *fields, timeout: Optional[float] = DEFAULT_CALL_TIMEOUT) -> tuple:
        frame = encode(Message(opcode, next(self._ids), fields))
        return _reply_fields(self.dispatcher.handle_frame(frame), opcode)

    def close(self):
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        chunk = sock.recv(min(n, 1 << 20))
        if not chunk:
            raise ConnectionFailed("connection closed")
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> bytes:
    head = _recv_exact(sock, 4)
    (length,) = _LEN.unpack(head)
    if length < 1 or length > MAX_FRAME:
        raise Malformed(f"bad frame length {length}")
    return head + _recv_exact(sock, length)


class TcpEndpoint:
    """One multiplexed TCP connection; replies are matched by request id."""

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ConnectionFailed(f"cannot connect to {host}:{port}: {exc}") from None
        self.sock.settimeout(None)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._ids = itertools.count(1)
        self._pending: dict[int, Future] = {}
        self._lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._closed = False
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self):
        try:
            while True:
                frame = read_frame(self.sock)
                with self._lock:
                    fut = self._pending.pop(peek_req_id(frame), None)
                if fut is not None:
                    fut.set_result(frame)
        except (BlobError, OSError) as exc:
            with self._lock:
                self._closed = True
                pending, self._pending = self._pending, {}
            for fut in pending.values():
                fut.set_exception(ConnectionFailed(f"connection lost: {exc}"))

    def call(self, opcode: int, *fields, timeout: Optional[float] = DEFAULT_CALL_TIMEOUT) -> tuple:
        req_id = next(self._ids)
        frame = encode(Message(opcode, req_id, fields))
        fut = Future()
        with self._lock:
            if self._closed:
                raise ConnectionFailed("connection is closed")
            self._pending[req_id] = fut
        try:
            with self._send_lock:
                self.sock.sendall(frame)
        except OSError as exc:
            with self._lock:
                self._pending.pop(req_id, None)
            raise ConnectionFailed(str(exc)) from None
        try:
            reply = fut.result(timeout)
        except FutureTimeout:
            with self._lock:
                self._pending.pop(req_id, None)
            raise Timeout(f"no reply to opcode {opcode} within {timeout}s") from None
        return _reply_fields(reply, opcode)

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        send_lock = threading.Lock()
        dispatcher = self.server.dispatcher

        def serve_one(frame):
            reply = dispatcher.handle_frame(frame)
            with send_lock:
                try:
                    sock.sendall(reply)
                except OSError:
                    pass

        while True:
            try:
                frame = read_frame(sock)
            except (BlobError, OSError):
                return
            threading.Thread(target=serve_one, args=(frame,), daemon=True).start()


class TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, dispatcher: Dispatcher, host: str = "127.0.0.1", port: int = 0):
        self.dispatcher = dispatcher
        super().__init__((host, port), _Handler)
        self._thread = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"tcp://{host}:{port}"

    def start(self) -> TcpServer:
        self._thread = threading.Thread(target=self.serve_forever, args=(0.02,), daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()


# -- addressing ------------------------------------------------------------


def parse_tcp(addr: str) -> tuple[str, int]:
    rest = addr[len("tcp://"):] if addr.startswith("tcp://") else addr
    host, _, port = rest.rpartition(":")
    return host or "127.0.0.1", int(port)


class Network:
    """Resolves provider/service addresses to endpoints, caching connections.

    ``loop://name`` addresses resolve through ``register``; ``tcp://host:port``
    addresses open a TCP connection on first use.
    """

    def __init__(self):
        self._loop: dict[str, Dispatcher] = {}
        self._endpoints: dict[str, object] = {}
        self._lock = threading.Lock()

    def register(self, name: str, dispatcher: Dispatcher) -> str:
        addr = f"loop://{name}"
        self._loop[addr] = dispatcher
        return addr

    def endpoint(self, addr: str):
        ep = self._endpoints.get(addr)
        if ep is not None:
            return ep
        with self._lock:
            ep = self._endpoints.get(addr)
            if ep is None:
                if addr.startswith("loop://"):
                    try:
                        ep = LoopbackEndpoint(self._loop[addr])
                    except KeyError:
                        raise ConnectionFailed(f"no loopback service at {addr}") from None
                else:
                    ep = TcpEndpoint(*parse_tcp(addr))
                self._endpoints[addr] = ep
            return ep

    def close(self):
        with self._lock:
            for ep in self._endpoints.values():
                ep.close()
            self._endpoints.clear()


# -- proxies ----------------------------------------------------------------


class RemotePageStore:
    def __init__(self, endpoint):
        self.ep = endpoint

    def put_page(self, pid, data):
        self.ep.call(PUT_PAGE, pid, data)

    def get_page(self, pid, off, length):
        return self.ep.call(GET_PAGE, pid, off, length)[0]

    def usage(self):
        return self.ep.call(USAGE)


class RemoteMetaStore:
    def __init__(self, endpoint):
        self.ep = endpoint

    def put_node(self, key, payload):
        self.ep.call(PUT_NODE, key, payload)

    def get_node(self, key):
        return self.ep.call(GET_NODE, key)[0]


class RemoteAllocator:
    def __init__(self, endpoint):
        self.ep = endpoint

    def register(self, addr):
        self.ep.call(REGISTER, addr)

    def allocate(self, n):
        return list(self.ep.call(ALLOCATE, n)[0])

    def report(self, addr, pages):
        self.ep.call(REPORT, addr, pages)


class RemoteVersioner:
    def __init__(self, endpoint):
        self.ep = endpoint

    def create_blob(self, psize):
        return self.ep.call(CREATE_BLOB, psize)[0]

    def assign_version(self, blob, kind, offset, size):
        from .versioner import ConcurrentUpdate, WriteTicket

        off = NO_OFFSET if offset is None else offset
        vw, eff, prev, vp, vp_size, conc, sz = self.ep.call(ASSIGN_VERSION, blob, int(kind), off, size)
        return WriteTicket(vw, eff, prev, vp, vp_size, tuple(ConcurrentUpdate(*c) for c in conc), sz)

    def notify_success(self, blob, v):
        self.ep.call(NOTIFY_SUCCESS, blob, v)

    def get_recent(self, blob):
        return self.ep.call(GET_RECENT, blob)[0]

    def get_size(self, blob, v):
        return self.ep.call(GET_SIZE, blob, v)[0]

    def wait_published(self, blob, v, timeout=None):
        ms = 0 if timeout is None else max(1, int(timeout * 1000))
        self.ep.call(WAIT_PUBLISHED, blob, v, ms, timeout=None if timeout is None else timeout + 5)

    def branch(self, blob, v):
        return self.ep.call(BRANCH, blob, v)[0]

    def blob_info(self, blob):
        from .versioner import BlobInfo

        psize, chain = self.ep.call(BLOB_INFO, blob)
        return BlobInfo(psize, tuple(chain))

    def topology(self):
        allocator, metas = self.ep.call(TOPOLOGY)
        return allocator, list(metas)
