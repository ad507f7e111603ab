"""Subprocess predictor speaking newline-delimited JSON over stdin/stdout.

Wire protocol, bit-exact:
  handshake   -> {"hello": 1}          expects {"hello": 1}
  request     -> {"id": n, "cols": [...], "rows": [[...], ...]}
  response    <- {"id": n, "preds": [...]}   one number per row, in order
  error       <- {"id": n, "error": "msg"}   aborts the run with msg
Categorical cells travel as level strings, numeric cells as numbers. A dead
child or an unparseable line raises PredictionError.

A pool of size w runs w identical children; batches are chunked and assigned
round-robin, and results are reassembled in request order, so the predictor
stays a pure function of its batch regardless of pool size.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .dataset import NUMERIC
from .predictor import PredictionError, Predictor


class _Child:
    """One handshaken child process plus a lock serializing its exchanges."""

    def __init__(self, argv):
        self.proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
            bufsize=1,
        )
        self.lock = threading.Lock()
        reply = self.exchange({"hello": 1})
        if reply.get("hello") != 1:
            raise PredictionError(f"bad handshake reply: {reply!r}")

    def exchange(self, message: dict) -> dict:
        with self.lock:
            try:
                self.proc.stdin.write(json.dumps(message) + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise PredictionError(f"external predictor died: {exc}") from exc
            line = self.proc.stdout.readline()
        if line == "":
            code = self.proc.poll()
            raise PredictionError(f"external predictor exited (code {code})")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PredictionError(f"malformed line from external predictor: {line!r}") from exc
        if "error" in reply:
            raise PredictionError(f"external predictor error: {reply['error']}")
        return reply

    def close(self):
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass
            try:
                self.proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()


class ExternalPredictor(Predictor):
    """Predictor backed by a command launched once and queried over pipes."""

    kind = "external_subprocess"

    def __init__(self, command, feature_names, feature_schemas=None, pool=1, chunk_rows=5000):
        if pool < 1:
            raise ValueError("pool must be >= 1")
        self.command = command
        self.feature_names = tuple(feature_names)
        self.feature_schemas = tuple(feature_schemas) if feature_schemas else None
        self.pool = int(pool)
        self.chunk_rows = int(chunk_rows)
        self._argv = shlex.split(command) if isinstance(command, str) else list(command)
        self._children: list[_Child] | None = None
        self._next_id = 0
        self._id_lock = threading.Lock()

    def _ensure_started(self):
        if self._children is None:
            self._children = [_Child(self._argv) for _ in range(self.pool)]
        return self._children

    def _take_id(self) -> int:
        with self._id_lock:
            self._next_id += 1
            return self._next_id

    def _decode_rows(self, X):
        if self.feature_schemas is None:
            return [[float(v) for v in row] for row in X]
        rows = []
        for row in X:
            out = []
            for schema, v in zip(self.feature_schemas, row):
                if schema.kind == NUMERIC:
                    out.append(float(v))
                else:
                    out.append(schema.levels[int(v)])
            rows.append(out)
        return rows

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        children = self._ensure_started()
        cols = list(self.feature_names)
        chunks = [
            (k, X[lo : lo + self.chunk_rows])
            for k, lo in enumerate(range(0, max(X.shape[0], 1), self.chunk_rows))
        ]

        def run(chunk):
            k, part = chunk
            child = children[k % len(children)]
            request = {
                "id": self._take_id(),
                "cols": cols,
                "rows": self._decode_rows(part),
            }
            reply = child.exchange(request)
            if reply.get("id") != request["id"]:
                raise PredictionError(
                    f"response id {reply.get('id')!r} does not match request {request['id']}"
                )
            preds = reply.get("preds")
            if not isinstance(preds, list) or len(preds) != len(part):
                raise PredictionError(
                    f"expected {len(part)} predictions, got {preds!r:.80s}"
                )
            return k, np.asarray(preds, dtype=np.float64)

        if len(children) == 1:
            results = [run(c) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=len(children)) as pool:
                results = list(pool.map(run, chunks))
        results.sort(key=lambda t: t[0])
        return np.concatenate([r for _, r in results]) if results else np.empty(0)

    def close(self):
        if self._children is not None:
            for child in self._children:
                child.close()
            self._children = None

    def __enter__(self):
        self._ensure_started()
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):  # best-effort cleanup
        try:
            self.close()
        except Exception:
            pass
