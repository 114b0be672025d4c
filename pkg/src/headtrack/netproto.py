"""Remote-alignment wire protocol, client and server.

Transport is a reliable ordered byte stream (TCP). Every message is a
little-endian frame prefixed with a u32 byte count of everything after the
prefix. One request is in flight per connection (stop-and-wait).

Request frame:
    u32  length
    u8   protocol_version (= 1)
    u64  frame_id
    u64  acquisition_time (microseconds)
    f32  crop scale, rotation (radians), tx, ty   (patch -> full-frame)
    f32  init landmarks, L x (u, v) in patch coordinates [0, 112)
    u8   patch, 112 x 112 grayscale, row-major (12544 bytes)

Response frame:
    u32  length
    u8   protocol_version (= 1)
    u64  frame_id
    u8   valid
    f32  confidence in [0, 1]
    f32  landmarks, L x (u, v) in patch coordinates

The landmark count is implied by the frame length; for L = 51 a request is
12 989 bytes on the wire, i.e. 3.117 Mbit/s at 30 fps.
"""

from __future__ import annotations

import math
import socket
import struct
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    BackendUnavailable,
    HeadTrackError,
    SizeMismatch,
    TruncatedFrame,
    VersionMismatch,
)
from .pipeline import AlignResult, Frame

PROTOCOL_VERSION = 1
PATCH_SIDE = 112
PATCH_BYTES = PATCH_SIDE * PATCH_SIDE

_REQ_HEAD = struct.Struct("<BQQ4f")   # version, frame_id, time_us, crop
_RESP_HEAD = struct.Struct("<BQBf")   # version, frame_id, valid, confidence
_LEN = struct.Struct("<I")


@dataclass(frozen=True)
class CropTransform:
    """Similarity transform mapping patch coordinates to full-frame pixels:
    full = scale * Rot(rotation) @ p + (tx, ty)."""

    scale: float
    rotation: float
    tx: float
    ty: float

    def patch_to_full(self, points):
        p = np.asarray(points, dtype=np.float64)
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        u = self.scale * (c * p[..., 0] - s * p[..., 1]) + self.tx
        v = self.scale * (s * p[..., 0] + c * p[..., 1]) + self.ty
        return np.stack([u, v], axis=-1)

    def full_to_patch(self, points):
        p = np.asarray(points, dtype=np.float64)
        du = p[..., 0] - self.tx
        dv = p[..., 1] - self.ty
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        u = (c * du + s * dv) / self.scale
        v = (-s * du + c * dv) / self.scale
        return np.stack([u, v], axis=-1)

    @staticmethod
    def from_landmarks(landmarks, expand: float = 1.4) -> "CropTransform":
        """Axis-aligned square crop around a landmark set, padded by
        `expand` so mapped points sit well inside the patch."""
        lms = np.asarray(landmarks, dtype=np.float64)
        lo = lms.min(axis=0)
        hi = lms.max(axis=0)
        side = max(float((hi - lo).max()) * expand, 8.0)
        center = (lo + hi) / 2.0
        scale = side / PATCH_SIDE
        return CropTransform(
            scale, 0.0, float(center[0] - side / 2.0), float(center[1] - side / 2.0)
        )


@dataclass(frozen=True)
class AlignRequest:
    frame_id: int
    acquisition_time_us: int
    crop: CropTransform
    init_landmarks: np.ndarray   # (L, 2) float32, patch coords
    patch: np.ndarray            # (112, 112) uint8
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        lms = np.ascontiguousarray(self.init_landmarks, dtype=np.float32)
        if lms.ndim != 2 or lms.shape[1] != 2:
            raise ValueError("init_landmarks must be (L, 2)")
        if np.any(lms < 0) or np.any(lms >= PATCH_SIDE):
            raise ValueError("init landmark coordinates must lie in [0, 112)")
        patch = np.ascontiguousarray(self.patch, dtype=np.uint8)
        if patch.shape != (PATCH_SIDE, PATCH_SIDE):
            raise SizeMismatch(f"patch must be {PATCH_SIDE}x{PATCH_SIDE}")
        object.__setattr__(self, "init_landmarks", lms)
        object.__setattr__(self, "patch", patch)


@dataclass(frozen=True)
class AlignResponse:
    frame_id: int
    valid: bool
    confidence: float
    landmarks: np.ndarray        # (L, 2) float32, patch coords
    protocol_version: int = PROTOCOL_VERSION

    def __post_init__(self):
        lms = np.ascontiguousarray(self.landmarks, dtype=np.float32)
        if lms.ndim != 2 or lms.shape[1] != 2:
            raise ValueError("landmarks must be (L, 2)")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be within [0, 1]")
        object.__setattr__(self, "landmarks", lms)


def encode_request(req: AlignRequest) -> bytes:
    body = (
        _REQ_HEAD.pack(
            req.protocol_version,
            req.frame_id,
            req.acquisition_time_us,
            req.crop.scale,
            req.crop.rotation,
            req.crop.tx,
            req.crop.ty,
        )
        + req.init_landmarks.astype("<f4").tobytes()
        + req.patch.tobytes()
    )
    return _LEN.pack(len(body)) + body


def encode_response(resp: AlignResponse) -> bytes:
    body = _RESP_HEAD.pack(
        resp.protocol_version,
        resp.frame_id,
        1 if resp.valid else 0,
        resp.confidence,
    ) + resp.landmarks.astype("<f4").tobytes()
    return _LEN.pack(len(body)) + body


def _split_frame(buf: bytes) -> bytes:
    if len(buf) < _LEN.size:
        raise TruncatedFrame(f"frame shorter than the length prefix ({len(buf)} bytes)")
    (declared,) = _LEN.unpack_from(buf)
    if len(buf) - _LEN.size < declared:
        raise TruncatedFrame(
            f"declared {declared} payload bytes, got {len(buf) - _LEN.size}"
        )
    if len(buf) - _LEN.size > declared:
        raise SizeMismatch("trailing bytes after the declared frame length")
    return buf[_LEN.size :]


def decode_request(buf: bytes) -> AlignRequest:
    body = _split_frame(buf)
    if len(body) < _REQ_HEAD.size:
        raise TruncatedFrame("request body shorter than its fixed header")
    version, frame_id, t_us, scale, rot, tx, ty = _REQ_HEAD.unpack_from(body)
    if version != PROTOCOL_VERSION:
        raise VersionMismatch(f"protocol version {version}")
    rest = len(body) - _REQ_HEAD.size - PATCH_BYTES
    if rest < 0 or rest % 8:
        raise SizeMismatch(
            f"request length does not decompose into landmarks + {PATCH_BYTES}-byte patch"
        )
    n = rest // 8
    lms = np.frombuffer(body, dtype="<f4", count=2 * n, offset=_REQ_HEAD.size)
    patch = np.frombuffer(
        body, dtype=np.uint8, count=PATCH_BYTES, offset=_REQ_HEAD.size + rest
    )
    return AlignRequest(
        frame_id=frame_id,
        acquisition_time_us=t_us,
        crop=CropTransform(scale, rot, tx, ty),
        init_landmarks=lms.reshape(n, 2).copy(),
        patch=patch.reshape(PATCH_SIDE, PATCH_SIDE).copy(),
        protocol_version=version,
    )


def decode_response(buf: bytes) -> AlignResponse:
    body = _split_frame(buf)
    if len(body) < _RESP_HEAD.size:
        raise TruncatedFrame("response body shorter than its fixed header")
    version, frame_id, valid, confidence = _RESP_HEAD.unpack_from(body)
    if version != PROTOCOL_VERSION:
        raise VersionMismatch(f"protocol version {version}")
    rest = len(body) - _RESP_HEAD.size
    if rest % 8:
        raise SizeMismatch("response landmark block is not a whole number of points")
    n = rest // 8
    lms = np.frombuffer(body, dtype="<f4", count=2 * n, offset=_RESP_HEAD.size)
    return AlignResponse(
        frame_id=frame_id,
        valid=bool(valid),
        confidence=float(confidence),
        landmarks=lms.reshape(n, 2).copy(),
        protocol_version=version,
    )


def request_wire_size(landmark_count: int) -> int:
    return _LEN.size + _REQ_HEAD.size + 8 * landmark_count + PATCH_BYTES


# --- socket plumbing ---------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int, deadline=None) -> bytes:
    chunks = []
    got = 0
    while got < n:
        if deadline is not None:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise TimeoutError("protocol read deadline exceeded")
            sock.settimeout(remaining)
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket, deadline=None) -> bytes:
    """One length-prefixed frame, including the prefix."""
    head = _recv_exact(sock, _LEN.size, deadline)
    (declared,) = _LEN.unpack(head)
    return head + _recv_exact(sock, declared, deadline)


def client_align(sock: socket.socket, req: AlignRequest, timeout: float) -> AlignResponse:
    """Send one request and wait for its matching response.

    Stale responses (frame_id below the request's) are discarded. Every
    network or protocol fault is mapped to BackendUnavailable.
    """
    deadline = time.monotonic() + timeout
    try:
        sock.sendall(encode_request(req))
        while True:
            resp = decode_response(read_frame(sock, deadline))
            if resp.frame_id == req.frame_id:
                return resp
            # stale response from an earlier request: drop and keep reading
    except (OSError, TimeoutError, ConnectionError, HeadTrackError, ValueError) as e:
        raise BackendUnavailable(f"remote alignment failed: {e}") from e


class RemoteAlignmentBackend:
    """AlignmentBackend speaking the wire protocol to a remote server.

    A fault marks the backend unhealthy; available() goes true again once
    retry_interval has elapsed, so the next pipeline step probes the server
    and re-selects it if it answers.
    """

    def __init__(self, host: str, port: int, timeout: float = 0.1, retry_interval: float = 1.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.retry_interval = retry_interval
        self._sock = None
        self._healthy = False
        self._last_attempt = -math.inf
        self._next_frame_id = 0

    @property
    def healthy(self) -> bool:
        return self._healthy

    def available(self) -> bool:
        if self._healthy:
            return True
        return time.monotonic() - self._last_attempt >= self.retry_interval

    def close(self):
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None
        self._healthy = False

    def _fail(self, exc) -> None:
        self.close()
        self._last_attempt = time.monotonic()
        raise BackendUnavailable(str(exc)) from exc

    def _connect(self):
        if self._sock is not None:
            return
        self._last_attempt = time.monotonic()
        try:
            self._sock = socket.create_connection(
                (self.host, self.port), timeout=self.timeout
            )
            self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._healthy = True
        except OSError as e:
            self._fail(e)

    def align(self, frame: Frame, init_landmarks) -> AlignResult:
        self._connect()
        crop = CropTransform.from_landmarks(init_landmarks)
        init_patch = np.clip(
            crop.full_to_patch(init_landmarks), 0.0, np.nextafter(PATCH_SIDE, 0.0)
        )
        patch = extract_patch(frame.image, crop)
        req = AlignRequest(
            frame_id=self._next_frame_id,
            acquisition_time_us=int(round(frame.acquisition_time * 1e6)),
            crop=crop,
            init_landmarks=init_patch,
            patch=patch,
        )
        self._next_frame_id += 1
        try:
            resp = client_align(self._sock, req, self.timeout)
        except BackendUnavailable as e:
            self._fail(e)
        full = crop.patch_to_full(resp.landmarks.astype(np.float64))
        return AlignResult(full, resp.valid, float(resp.confidence))


def extract_patch(image, crop: CropTransform) -> np.ndarray:
    """Nearest-neighbour resample of the crop window; zeros when the frame
    carries no image (landmark-only simulation)."""
    if image is None:
        return np.zeros((PATCH_SIDE, PATCH_SIDE), dtype=np.uint8)
    grid = np.indices((PATCH_SIDE, PATCH_SIDE), dtype=np.float64)
    pts = np.stack([grid[1].ravel(), grid[0].ravel()], axis=-1)  # (u, v)
    full = crop.patch_to_full(pts)
    h, w = image.shape
    cols = np.clip(np.round(full[:, 0]).astype(int), 0, w - 1)
    rows = np.clip(np.round(full[:, 1]).astype(int), 0, h - 1)
    return image[rows, cols].reshape(PATCH_SIDE, PATCH_SIDE).astype(np.uint8)


class AlignServer:
    """Serves any AlignmentBackend over the wire protocol.

    Connections are handled on their own threads; requests within one
    connection are sequential (stop-and-wait). Backend calls are serialized
    with a lock unless serialize_backend=False (for thread-safe backends).
    A malformed frame closes only that connection.
    """

    def __init__(self, backend, host: str = "127.0.0.1", port: int = 0,
                 serialize_backend: bool = True):
        self.backend = backend
        self._lock = threading.Lock() if serialize_backend else None
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._stop = threading.Event()
        self._threads = []
        self._accept_thread = None

    def start(self) -> "AlignServer":
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        for t in self._threads:
            t.join(timeout=2.0)

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            t = threading.Thread(target=self._serve_connection, args=(conn,), daemon=True)
            t.start()
            self._threads.append(t)

    def _serve_connection(self, conn: socket.socket):
        with conn:
            while not self._stop.is_set():
                try:
                    req = decode_request(read_frame(conn))
                except (ConnectionError, OSError):
                    return
                except HeadTrackError:
                    return  # malformed frame: drop this connection only
                try:
                    conn.sendall(encode_response(self._handle(req)))
                except OSError:
                    return

    def _handle(self, req: AlignRequest) -> AlignResponse:
        frame = Frame(
            ctx=None,
            acquisition_time=req.acquisition_time_us / 1e6,
            image=req.patch,
        )
        init_full = req.crop.patch_to_full(req.init_landmarks.astype(np.float64))
        try:
            if self._lock is not None:
                with self._lock:
                    result = self.backend.align(frame, init_full)
            else:
                result = self.backend.align(frame, init_full)
        except HeadTrackError:
            return AlignResponse(
                frame_id=req.frame_id,
                valid=False,
                confidence=0.0,
                landmarks=req.init_landmarks.copy(),
            )
        patch_lms = req.crop.full_to_patch(np.asarray(result.landmarks, dtype=np.float64))
        return AlignResponse(
            frame_id=req.frame_id,
            valid=bool(result.valid),
            confidence=float(np.clip(result.confidence, 0.0, 1.0)),
            landmarks=patch_lms,
        )


def serve(backend, host: str = "127.0.0.1", port: int = 0) -> AlignServer:
    """Start an AlignServer and return it (caller stops it)."""
    return AlignServer(backend, host, port).start()
