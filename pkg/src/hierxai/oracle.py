"""Classifier access: toy in-process oracles and a subprocess wire client.

Every oracle answers ``hello() -> OracleInfo`` and ``logits(batch) ->
float64 array (N, n_classes)``.  The wire protocol is newline-delimited
JSON over the child's stdio, one object per line, UTF-8:

    request   {"id": u64, "op": "hello"}
              {"id": u64, "op": "logits", "shape": [N, C, H, W],
               "dtype": "f32", "data": "<base64 LE float32>"}
    response  {"id": u64, "ok": true, "classes": K, "input": [C, H, W]}
              {"id": u64, "ok": true, "logits": [[...K floats] x N]}
              {"id": u64, "ok": false, "error": "msg"}

Image payloads travel base64-encoded so no precision is lost to decimal
formatting.  Responses are matched to requests by id, which lets several
threads share one client.
"""

from __future__ import annotations

import base64
import hashlib
import json
import subprocess
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .image import Image

__all__ = [
    "OracleInfo",
    "OracleError",
    "ConstantOracle",
    "LinearOracle",
    "PlantedPatchOracle",
    "make_toy_oracle",
    "WireOracle",
    "CachedOracle",
    "encode_logits_request",
    "decode_request",
    "encode_response",
]


class OracleError(RuntimeError):
    """Raised when the classifier cannot produce logits for a request."""


@dataclass(frozen=True)
class OracleInfo:
    n_classes: int
    input_shape: tuple[int, int, int]  # (C, H, W)
    name: str

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("an oracle needs at least two classes")
        if any(d <= 0 for d in self.input_shape):
            raise ValueError("input shape dimensions must be positive")


def _as_batch(batch: Sequence[Image] | np.ndarray, shape: tuple[int, int, int]) -> np.ndarray:
    """Stack Images (or accept an (N,C,H,W) array) and check the shape."""
    if isinstance(batch, np.ndarray):
        arr = np.ascontiguousarray(batch, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
    else:
        arr = np.stack([img.data for img in batch]).astype(np.float32)
    if arr.shape[1:] != shape:
        raise OracleError(f"batch shape {arr.shape[1:]} does not match oracle input {shape}")
    return arr


class ConstantOracle:
    """Ignores the input and always returns the same logit vector."""

    def __init__(self, values, input_shape: tuple[int, int, int], name: str = "toy-constant"):
        self.values = np.asarray(values, dtype=np.float32).reshape(-1)
        self._info = OracleInfo(len(self.values), tuple(input_shape), name)

    def hello(self) -> OracleInfo:
        return self._info

    def logits(self, batch) -> np.ndarray:
        arr = _as_batch(batch, self._info.input_shape)
        return np.tile(self.values.astype(np.float64), (arr.shape[0], 1))


class LinearOracle:
    """Class-c logit = dot(weight image c, pixels); weights shape (K, C, H, W)."""

    def __init__(self, weights, name: str = "toy-linear"):
        self.weights = np.ascontiguousarray(weights, dtype=np.float32)
        if self.weights.ndim != 4:
            raise ValueError("weights must be (K, C, H, W)")
        k = self.weights.shape[0]
        self._info = OracleInfo(k, tuple(self.weights.shape[1:]), name)

    def hello(self) -> OracleInfo:
        return self._info

    def logits(self, batch) -> np.ndarray:
        arr = _as_batch(batch, self._info.input_shape)
        flat = arr.reshape(arr.shape[0], -1).astype(np.float64)
        wflat = self.weights.reshape(self.weights.shape[0], -1).astype(np.float64).T
        # row-at-a-time keeps results bitwise identical across batch sizes
        out = np.empty((arr.shape[0], self._info.n_classes), dtype=np.float64)
        for i in range(arr.shape[0]):
            out[i] = flat[i] @ wflat
        return out


class PlantedPatchOracle:
    """Two-class toy keyed to one rectangle: logit 1 = gain * mean inside the
    rectangle (over all channels), logit 0 = a fixed margin.  Occluding the
    rectangle with zeros flips the prediction whenever gain * mean > margin.
    """

    def __init__(self, rect: tuple[int, int, int, int],
                 input_shape: tuple[int, int, int],
                 gain: float = 4.0, margin: float = 1.0,
                 name: str = "toy-planted-patch"):
        y0, x0, y1, x1 = rect
        c, h, w = input_shape
        if not (0 <= y0 < y1 <= h and 0 <= x0 < x1 <= w):
            raise ValueError(f"rect {rect} does not fit inside {h}x{w}")
        self.rect = (y0, x0, y1, x1)
        self.gain = float(gain)
        self.margin = float(margin)
        self._info = OracleInfo(2, tuple(input_shape), name)

    def hello(self) -> OracleInfo:
        return self._info

    def logits(self, batch) -> np.ndarray:
        arr = _as_batch(batch, self._info.input_shape)
        y0, x0, y1, x1 = self.rect
        patch_mean = arr[:, :, y0:y1, x0:x1].mean(axis=(1, 2, 3), dtype=np.float64)
        out = np.empty((arr.shape[0], 2), dtype=np.float64)
        out[:, 0] = self.margin
        out[:, 1] = self.gain * patch_mean
        return out


def make_toy_oracle(spec: dict):
    """Build a toy oracle from a plain dict spec.

    kinds: {"kind": "constant", "values": [...], "input_shape": [C,H,W]},
    {"kind": "linear", "weights": array-like (K,C,H,W)}, or
    {"kind": "planted_patch", "rect": [y0,x0,y1,x1], "input_shape": [C,H,W],
     "gain": g, "margin": m}.
    """
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantOracle(spec["values"], tuple(spec["input_shape"]))
    if kind == "linear":
        return LinearOracle(np.asarray(spec["weights"], dtype=np.float32))
    if kind == "planted_patch":
        return PlantedPatchOracle(
            tuple(spec["rect"]), tuple(spec["input_shape"]),
            gain=spec.get("gain", 4.0), margin=spec.get("margin", 1.0))
    raise ValueError(f"unknown toy oracle kind {kind!r}")


# --- wire protocol helpers (shared by client, tests and any server) ---

def encode_logits_request(request_id: int, batch: np.ndarray) -> str:
    payload = base64.b64encode(
        np.ascontiguousarray(batch, dtype="<f4").tobytes()).decode("ascii")
    return json.dumps({
        "id": request_id,
        "op": "logits",
        "shape": list(batch.shape),
        "dtype": "f32",
        "data": payload,
    }, separators=(",", ":"))


def decode_request(line: str) -> dict:
    """Parse one request line; returns the dict with a decoded "batch" array
    for logits requests.  Raises ValueError on malformed input."""
    msg = json.loads(line)
    if not isinstance(msg, dict) or "op" not in msg or "id" not in msg:
        raise ValueError("request must be an object with 'id' and 'op'")
    if msg["op"] == "hello":
        return msg
    if msg["op"] == "logits":
        if msg.get("dtype") != "f32":
            raise ValueError(f"unsupported dtype {msg.get('dtype')!r}")
        shape = tuple(int(d) for d in msg["shape"])
        if len(shape) != 4 or any(d <= 0 for d in shape):
            raise ValueError(f"bad shape {shape}")
        raw = base64.b64decode(msg["data"], validate=True)
        expected = int(np.prod(shape)) * 4
        if len(raw) != expected:
            raise ValueError(f"payload holds {len(raw)} bytes, shape needs {expected}")
        msg["batch"] = np.frombuffer(raw, dtype="<f4").reshape(shape)
        return msg
    raise ValueError(f"unknown op {msg['op']!r}")


def encode_response(request_id: int, *, info: OracleInfo | None = None,
                    logits: np.ndarray | None = None,
                    error: str | None = None) -> str:
    if error is not None:
        body = {"id": request_id, "ok": False, "error": error}
    elif info is not None:
        body = {"id": request_id, "ok": True, "classes": info.n_classes,
                "input": list(info.input_shape)}
    elif logits is not None:
        body = {"id": request_id, "ok": True,
                "logits": [[float(v) for v in row] for row in logits]}
    else:
        raise ValueError("one of info/logits/error is required")
    return json.dumps(body, separators=(",", ":"))


class WireOracle:
    """Client for an oracle subprocess speaking the stdio protocol.

    A background reader matches response lines to request ids, so multiple
    threads may call logits() concurrently; writes are serialized.
    """

    def __init__(self, command: Sequence[str], timeout: float = 120.0, name: str | None = None):
        self.command = list(command)
        self.timeout = timeout
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            text=True, bufsize=1)
        self._write_lock = threading.Lock()
        self._cond = threading.Condition()
        self._replies: dict[int, dict] = {}
        self._next_id = 0
        self._dead: str | None = None
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._name = name or " ".join(self.command)
        self._info: OracleInfo | None = None

    def _read_loop(self):
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    continue  # not protocol output; ignore
                with self._cond:
                    self._replies[msg.get("id")] = msg
                    self._cond.notify_all()
        finally:
            with self._cond:
                self._dead = "oracle process closed its output"
                self._cond.notify_all()

    def _roundtrip(self, request_id: int, line: str) -> dict:
        with self._write_lock:
            if self._proc.poll() is not None:
                raise OracleError("oracle process has exited")
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        with self._cond:
            ok = self._cond.wait_for(
                lambda: request_id in self._replies or self._dead is not None,
                timeout=self.timeout)
            if request_id in self._replies:
                reply = self._replies.pop(request_id)
            elif not ok:
                raise OracleError(f"oracle timed out after {self.timeout}s (request {request_id})")
            else:
                raise OracleError(f"{self._dead} (request {request_id})")
        if not reply.get("ok", False):
            raise OracleError(f"oracle error (request {request_id}): {reply.get('error', 'unknown')}")
        return reply

    def _claim_id(self) -> int:
        with self._write_lock:
            self._next_id += 1
            return self._next_id

    def hello(self) -> OracleInfo:
        if self._info is None:
            rid = self._claim_id()
            reply = self._roundtrip(rid, json.dumps({"id": rid, "op": "hello"},
                                                    separators=(",", ":")))
            try:
                self._info = OracleInfo(int(reply["classes"]),
                                        tuple(int(d) for d in reply["input"]),
                                        self._name)
            except (KeyError, TypeError, ValueError) as exc:
                raise OracleError(f"malformed hello reply: {exc}") from exc
        return self._info

    def logits(self, batch) -> np.ndarray:
        info = self.hello()
        arr = _as_batch(batch, info.input_shape)
        rid = self._claim_id()
        reply = self._roundtrip(rid, encode_logits_request(rid, arr))
        out = np.asarray(reply.get("logits"), dtype=np.float64)
        if out.ndim != 2 or out.shape != (arr.shape[0], info.n_classes):
            raise OracleError(f"oracle returned logits of shape {out.shape}, "
                              f"expected {(arr.shape[0], info.n_classes)}")
        if not np.all(np.isfinite(out)):
            raise OracleError("oracle returned non-finite logits")
        return out

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class CachedOracle:
    """LRU logits cache keyed by (image bytes, oracle identity); transparent:
    cached results are bitwise identical to direct calls."""

    def __init__(self, inner, capacity: int = 4096):
        self.inner = inner
        self.capacity = capacity
        self._cache: OrderedDict[bytes, np.ndarray] = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def hello(self) -> OracleInfo:
        return self.inner.hello()

    def _key(self, row: np.ndarray) -> bytes:
        digest = hashlib.sha1(row.tobytes())
        digest.update(str(row.shape).encode())
        digest.update(self.inner.hello().name.encode())
        return digest.digest()

    def logits(self, batch) -> np.ndarray:
        arr = _as_batch(batch, self.inner.hello().input_shape)
        keys = [self._key(arr[i]) for i in range(arr.shape[0])]
        out: list[np.ndarray | None] = []
        missing: list[int] = []
        with self._lock:
            for i, key in enumerate(keys):
                hit = self._cache.get(key)
                if hit is not None:
                    self._cache.move_to_end(key)
                    self.hits += 1
                    out.append(hit)
                else:
                    self.misses += 1
                    out.append(None)
                    missing.append(i)
        if missing:
            fresh = self.inner.logits(arr[missing])
            with self._lock:
                for j, i in enumerate(missing):
                    row = np.ascontiguousarray(fresh[j])
                    row.flags.writeable = False
                    self._cache[keys[i]] = row
                    out[i] = row
                while len(self._cache) > self.capacity:
                    self._cache.popitem(last=False)
        return np.stack(out)

    def close(self):
        if hasattr(self.inner, "close"):
            self.inner.close()
