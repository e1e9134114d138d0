"""Round-synchronous message exchange between the three parties.

Two interchangeable backends: an in-process mesh of queues (the local
harness) and framed TCP between real processes. Either way, every
message is a vector of ring values stamped with a per-directed-pair
round tag; receivers consume tags strictly in order and a mismatch
aborts the run.

Wire frame (normative for interop):

    u32 LE  payload byte length
    u64 LE  round tag
    payload raw little-endian uint64 ring values

Given fixed seeds, a protocol produces byte-identical transcripts on
both backends; tests rely on this.
"""
from __future__ import annotations

import hashlib
import os
import queue
import socket
import struct
import threading
import time
from typing import Callable, Sequence

import numpy as np

from .errors import DesyncError, HarnessError, TransportError
from .sharing import pred, succ  # re-exported party-id helpers

__all__ = [
    "Links",
    "LocalMesh",
    "connect_tcp_links",
    "run_three_party_local",
    "succ",
    "pred",
]

_U64 = np.uint64
_HEADER = struct.Struct("<IQ")

_ABORT = object()  # local-mesh sentinel pushed when a sibling party fails


class Links:
    """One party's endpoint: tagged sends/receives to the two peers.

    Subclasses implement _push/_pull. Tracks per-direction round tags,
    traffic counters, and (optionally) a running transcript hash of the
    canonical frame bytes.
    """

    def __init__(self, party: int, timeout: float = 60.0, record_transcript: bool = False):
        self.party = party
        self.timeout = timeout
        self.record = record_transcript
        self._send_tags = {p: 0 for p in (1, 2, 3) if p != party}
        self._recv_tags = {p: 0 for p in (1, 2, 3) if p != party}
        self._hash = hashlib.blake2b(digest_size=16)
        self.sent_words = 0
        self.sent_messages = 0
        self.recv_words = 0

    def send(self, to: int, words: np.ndarray) -> None:
        words = np.ascontiguousarray(words, dtype=_U64)
        tag = self._send_tags[to]
        self._send_tags[to] = tag + 1
        self.sent_words += words.size
        self.sent_messages += 1
        if self.record:
            self._hash.update(b"S%d" % to)
            self._hash.update(_HEADER.pack(words.nbytes, tag))
            self._hash.update(words.tobytes())
        self._push(to, tag, words)

    def recv(self, frm: int) -> np.ndarray:
        expected = self._recv_tags[frm]
        tag, words = self._pull(frm)
        if tag != expected:
            raise DesyncError(
                f"party {self.party}: expected round tag {expected} from {frm}, got {tag}"
            )
        self._recv_tags[frm] = expected + 1
        self.recv_words += words.size
        if self.record:
            self._hash.update(b"R%d" % frm)
            self._hash.update(_HEADER.pack(words.nbytes, tag))
            self._hash.update(words.tobytes())
        return words

    def transcript_digest(self) -> str:
        return self._hash.hexdigest()

    def close(self) -> None:  # pragma: no cover - overridden where needed
        pass

    # backend hooks
    def _push(self, to: int, tag: int, words: np.ndarray) -> None:
        raise NotImplementedError

    def _pull(self, frm: int) -> tuple[int, np.ndarray]:
        raise NotImplementedError


class LocalMesh:
    """In-memory channels for running all three parties in one process."""

    def __init__(self, timeout: float = 60.0, record_transcript: bool = False):
        self.timeout = timeout
        self.record = record_transcript
        self._queues = {
            (i, j): queue.SimpleQueue()
            for i in (1, 2, 3) for j in (1, 2, 3) if i != j
        }

    def links(self, party: int) -> "LocalLinks":
        return LocalLinks(party, self)

    def abort_all(self, reason: str) -> None:
        """Unblock every pending receive after one party has failed."""
        for q in self._queues.values():
            q.put((_ABORT, reason))


class LocalLinks(Links):
    def __init__(self, party: int, mesh: LocalMesh):
        super().__init__(party, mesh.timeout, mesh.record)
        self._mesh = mesh

    def _push(self, to: int, tag: int, words: np.ndarray) -> None:
        self._mesh._queues[(self.party, to)].put((tag, words))

    def _pull(self, frm: int) -> tuple[int, np.ndarray]:
        try:
            item = self._mesh._queues[(frm, self.party)].get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(
                f"party {self.party}: timed out waiting for round tag "
                f"{self._recv_tags[frm]} from party {frm}"
            ) from None
        if item[0] is _ABORT:
            raise TransportError(f"party {self.party}: peer aborted ({item[1]})")
        tag, words = item
        # The sender keeps its array; hand the receiver its own copy.
        return tag, words.copy()


def run_three_party_local(
    protocol: Callable[..., object],
    args_per_party: Sequence[tuple],
    timeout: float = 60.0,
    record_transcript: bool = False,
) -> list:
    """Execute `protocol(links, party, *args)` for all three parties on threads.

    Returns the three results in party order. The first party failure is
    re-raised after siblings have been unblocked.
    """
    mesh = LocalMesh(timeout=timeout, record_transcript=record_transcript)
    results: list = [None, None, None]
    errors: list = [None, None, None]

    def runner(party: int) -> None:
        links = mesh.links(party)
        try:
            results[party - 1] = protocol(links, party, *args_per_party[party - 1])
        except BaseException as exc:  # noqa: BLE001 - propagated below
            errors[party - 1] = exc
            mesh.abort_all(f"party {party}: {exc}")

    threads = [threading.Thread(target=runner, args=(p,), daemon=True) for p in (1, 2, 3)]
    for t in threads:
        t.start()
    deadline = time.monotonic() + timeout * 4
    for t in threads:
        t.join(max(0.0, deadline - time.monotonic()))
    if any(t.is_alive() for t in threads):
        raise HarnessError("three-party harness did not terminate (deadlock?)")
    for err in errors:
        if err is not None:
            if isinstance(err, TransportError) and any(
                e is not None and not isinstance(e, TransportError) for e in errors
            ):
                continue  # prefer the root cause over cascading aborts
            raise err
    return results


# --- TCP backend -----------------------------------------------------------


class TcpLinks(Links):
    """Framed TCP channels to both peers, with per-peer I/O threads.

    Writer threads drain per-peer queues so that the ring-shaped
    all-send-then-receive pattern cannot deadlock on full socket buffers.
    """

    def __init__(self, party: int, socks: dict[int, socket.socket],
                 timeout: float = 60.0, record_transcript: bool = False):
        super().__init__(party, timeout, record_transcript)
        self._socks = socks
        self._in: dict[int, queue.SimpleQueue] = {p: queue.SimpleQueue() for p in socks}
        self._out: dict[int, queue.SimpleQueue] = {p: queue.SimpleQueue() for p in socks}
        self._writers: list[threading.Thread] = []
        self._closed = False
        for peer, sock in socks.items():
            sock.settimeout(timeout)
            r = threading.Thread(target=self._reader, args=(peer, sock), daemon=True)
            w = threading.Thread(target=self._writer, args=(peer, sock), daemon=True)
            self._writers.append(w)
            r.start()
            w.start()

    def _reader(self, peer: int, sock: socket.socket) -> None:
        try:
            while True:
                header = self._read_exact(sock, _HEADER.size)
                if header is None:
                    self._in[peer].put(("eof", None))
                    return
                nbytes, tag = _HEADER.unpack(header)
                payload = self._read_exact(sock, nbytes)
                if payload is None:
                    self._in[peer].put(("eof", None))
                    return
                words = np.frombuffer(payload, dtype="<u8").astype(_U64)
                self._in[peer].put((tag, words))
        except (OSError, ValueError) as exc:
            self._in[peer].put(("error", str(exc)))

    @staticmethod
    def _read_exact(sock: socket.socket, n: int) -> bytes | None:
        buf = bytearray()
        while len(buf) < n:
            chunk = sock.recv(n - len(buf))
            if not chunk:
                return None
            buf.extend(chunk)
        return bytes(buf)

    def _writer(self, peer: int, sock: socket.socket) -> None:
        while True:
            item = self._out[peer].get()
            if item is None:
                return
            tag, words = item
            try:
                sock.sendall(_HEADER.pack(words.nbytes, tag) + words.tobytes())
            except OSError:
                return  # reader side will surface the failure

    def _push(self, to: int, tag: int, words: np.ndarray) -> None:
        self._out[to].put((tag, words))

    def _pull(self, frm: int) -> tuple[int, np.ndarray]:
        try:
            tag, words = self._in[frm].get(timeout=self.timeout)
        except queue.Empty:
            raise TransportError(
                f"party {self.party}: timed out waiting for round tag "
                f"{self._recv_tags[frm]} from party {frm}"
            ) from None
        if tag == "eof":
            raise TransportError(f"party {self.party}: party {frm} disconnected")
        if tag == "error":
            raise TransportError(f"party {self.party}: channel to {frm} failed: {words}")
        return tag, words

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        for q in self._out.values():
            q.put(None)
        for w in self._writers:  # flush pending frames before tearing down
            w.join(self.timeout)
        for sock in self._socks.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


def connect_tcp_links(
    party: int,
    endpoints: dict[int, tuple[str, int]],
    timeout: float = 60.0,
    record_transcript: bool = False,
    listener: socket.socket | None = None,
) -> TcpLinks:
    """Establish the two peer connections for `party` and return its links.

    Party i accepts connections from higher-numbered parties on its own
    endpoint and dials lower-numbered ones (with retries while peers come
    up). A one-byte hello identifies the dialing party. The environment
    variable SGSYNTH_BIND overrides the local bind address.
    """
    socks: dict[int, socket.socket] = {}
    expect_inbound = [p for p in (1, 2, 3) if p > party]
    dial = [p for p in (1, 2, 3) if p < party]

    own_listener = listener
    if expect_inbound and own_listener is None:
        host, port = endpoints[party]
        host = os.environ.get("SGSYNTH_BIND", host)
        own_listener = socket.create_server((host, port), backlog=2)
    try:
        if own_listener is not None:
            own_listener.settimeout(timeout)
            for _ in expect_inbound:
                conn, _addr = own_listener.accept()
                hello = conn.recv(1)
                if not hello or hello[0] not in (1, 2, 3):
                    conn.close()
                    raise TransportError(f"party {party}: bad hello byte {hello!r}")
                socks[hello[0]] = conn
        for peer in dial:
            host, port = endpoints[peer]
            deadline = time.monotonic() + timeout
            while True:
                try:
                    conn = socket.create_connection((host, port), timeout=timeout)
                    break
                except OSError:
                    if time.monotonic() >= deadline:
                        raise TransportError(
                            f"party {party}: cannot reach party {peer} at {host}:{port}"
                        ) from None
                    time.sleep(0.05)
            conn.sendall(bytes([party]))
            socks[peer] = conn
    except socket.timeout:
        raise TransportError(f"party {party}: connection setup timed out") from None
    finally:
        if own_listener is not None and listener is None:
            own_listener.close()
    for sock in socks.values():
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpLinks(party, socks, timeout=timeout, record_transcript=record_transcript)
