"""Stdio request loop speaking the oracle wire protocol.

One JSON object per line, UTF-8.  Requests:

    {"id": u64, "op": "hello"}
    {"id": u64, "op": "logits", "shape": [N, C, H, W], "dtype": "f32",
     "data": "<base64 little-endian float32>"}

Replies mirror the id; malformed input produces {"id": ..., "ok": false,
"error": "..."} and the loop keeps running.
"""

from __future__ import annotations

import base64
import json
import sys

import numpy as np
import torch

from .models import AdapterConfig, build_model


def _decode_batch(msg: dict) -> np.ndarray:
    if msg.get("dtype") != "f32":
        raise ValueError(f"unsupported dtype {msg.get('dtype')!r}")
    shape = tuple(int(d) for d in msg["shape"])
    if len(shape) != 4 or any(d <= 0 for d in shape):
        raise ValueError(f"bad shape {shape}")
    raw = base64.b64decode(msg["data"], validate=True)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise ValueError(f"payload holds {len(raw)} bytes, shape needs {expected}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape)


def serve(cfg: AdapterConfig, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    model = build_model(cfg)
    info = {"classes": cfg.n_classes, "input": list(cfg.input_size)}

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        request_id = 0
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("request must be a JSON object")
            request_id = int(msg.get("id", 0))
            op = msg.get("op")
            if op == "hello":
                reply = {"id": request_id, "ok": True, **info}
            elif op == "logits":
                batch = _decode_batch(msg)
                if batch.shape[1:] != cfg.input_size:
                    raise ValueError(
                        f"batch shape {batch.shape[1:]} != model input {cfg.input_size}")
                with torch.no_grad():
                    out = model(torch.from_numpy(batch.copy()).to(cfg.device))
                reply = {"id": request_id, "ok": True,
                         "logits": [[float(v) for v in row] for row in out.cpu()]}
            else:
                raise ValueError(f"unknown op {op!r}")
        except Exception as exc:  # any bad request: reply, stay alive
            reply = {"id": request_id, "ok": False, "error": str(exc)}
        stdout.write(json.dumps(reply, separators=(",", ":")) + "\n")
        stdout.flush()
