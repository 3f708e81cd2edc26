"""Wire protocol for benchmarking external forecasters as black boxes.

Adapters are child processes exchanging newline-delimited JSON messages over
stdin/stdout. Every message is one object: ``{"msg_type": ..., "id": ...,
"payload": {...}}``. The lifecycle is hello -> capabilities, then any number
of forecast_request -> forecast_response (or error) exchanges correlated by
id, then shutdown. Numbers are serialized with full round-trip precision; a
parsed double is bit-identical to the one serialized.

The harness enforces a per-request timeout and restarts the adapter after a
timeout; malformed messages raise ProtocolViolationError carrying the raw
payload. This module is the harness side; any language can implement the
adapter side (see the message schema in docs/adapter_protocol.md and the
reference implementation under adapter/).
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .errors import (
    AdapterTimeoutError,
    ChaosBenchError,
    ProtocolViolationError,
)
from .forecasters import Forecast, ForecastTask, naive_forecast

__all__ = [
    "PROTOCOL_VERSION",
    "AdapterRequestError",
    "AdapterClient",
    "AdapterForecaster",
    "serve_check",
    "ConformanceResult",
]

PROTOCOL_VERSION = 1
MSG_TYPES = ("hello", "capabilities", "forecast_request", "forecast_response", "error", "shutdown")


class AdapterRequestError(ChaosBenchError):
    """The adapter answered a request with an error message (process alive)."""


class _LineReader:
    """Background reader so blocking stdout reads can honor timeouts."""

    def __init__(self, stream):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._pump, args=(stream,), daemon=True)
        self._thread.start()

    def _pump(self, stream):
        for line in stream:
            self._queue.put(line)
        self._queue.put(None)  # EOF marker

    def readline(self, timeout: float) -> str | None:
        try:
            return self._queue.get(timeout=timeout)
        except queue.Empty:
            raise AdapterTimeoutError(f"no adapter message within {timeout:.0f}s")


class AdapterClient:
    """Harness-side protocol endpoint for one adapter process."""

    def __init__(self, command: str | list, timeout: float = 300.0, handshake_timeout: float = 5.0):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.handshake_timeout = handshake_timeout
        self.capabilities: dict = {}
        self._proc: subprocess.Popen | None = None
        self._reader: _LineReader | None = None
        self._next_id = 0

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> dict:
        """Spawn the adapter and perform the hello/capabilities handshake."""
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._reader = _LineReader(self._proc.stdout)
        reply = self._exchange(
            "hello",
            {"protocol_version": PROTOCOL_VERSION, "harness_version": __version__},
            timeout=self.handshake_timeout,
        )
        if reply["msg_type"] != "capabilities":
            raise ProtocolViolationError(
                f"expected capabilities, got {reply['msg_type']!r}", raw=json.dumps(reply)
            )
        self.capabilities = reply.get("payload", {})
        return self.capabilities

    def shutdown(self, grace: float = 5.0):
        if self._proc is None:
            return
        try:
            if self._proc.poll() is None:
                self._send("shutdown", {})
                self._proc.wait(timeout=grace)
        except (BrokenPipeError, subprocess.TimeoutExpired, OSError):
            self._proc.kill()
        finally:
            self._proc = None
            self._reader = None

    def restart(self) -> dict:
        self.shutdown()
        return self.start()

    @property
    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    # -- messaging ----------------------------------------------------------

    def _send(self, msg_type: str, payload: dict, msg_id: str | None = None) -> str:
        if self._proc is None or self._proc.stdin is None:
            raise ProtocolViolationError("adapter process is not running")
        if msg_id is None:
            self._next_id += 1
            msg_id = f"m{self._next_id}"
        line = json.dumps({"msg_type": msg_type, "id": msg_id, "payload": payload})
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ProtocolViolationError(f"adapter pipe closed: {exc}") from exc
        return msg_id

    def _recv(self, timeout: float) -> dict:
        assert self._reader is not None
        line = self._reader.readline(timeout)
        if line is None:
            code = self._proc.poll() if self._proc else None
            raise ProtocolViolationError(f"adapter closed its stream (exit code {code})")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolationError(f"unparseable adapter message: {exc}", raw=line) from exc
        if not isinstance(msg, dict) or msg.get("msg_type") not in MSG_TYPES:
            raise ProtocolViolationError("message missing a valid msg_type", raw=line)
        return msg

    def _exchange(self, msg_type: str, payload: dict, timeout: float) -> dict:
        msg_id = self._send(msg_type, payload)
        reply = self._recv(timeout)
        if reply.get("id") != msg_id:
            raise ProtocolViolationError(
                f"response id {reply.get('id')!r} does not match request {msg_id!r}",
                raw=json.dumps(reply),
            )
        return reply

    # -- forecasting --------------------------------------------------------

    def forecast(
        self,
        context,
        horizon: int,
        channel_index: int = 0,
        dt_lyap: float = 1.0 / 30.0,
    ) -> Forecast:
        """One forecast_request/forecast_response exchange."""
        context = np.asarray(context, dtype=float).ravel()
        payload = {
            "context": context.tolist(),
            "horizon": int(horizon),
            "channel_index": int(channel_index),
            "dt_lyap": float(dt_lyap),
        }
        t0 = time.perf_counter()
        reply = self._exchange("forecast_request", payload, timeout=self.timeout)
        wall = time.perf_counter() - t0
        if reply["msg_type"] == "error":
            raise AdapterRequestError(str(reply.get("payload", {}).get("message", "adapter error")))
        if reply["msg_type"] != "forecast_response":
            raise ProtocolViolationError(
                f"expected forecast_response, got {reply['msg_type']!r}",
                raw=json.dumps(reply),
            )
        body = reply.get("payload", {})
        values = body.get("values")
        if not isinstance(values, list) or len(values) != horizon:
            raise ProtocolViolationError(
                f"forecast_response carries {0 if values is None else len(values)} values, "
                f"expected {horizon}",
                raw=json.dumps(reply),
            )
        return Forecast(
            np.asarray(values, dtype=float),
            model_id=str(self.capabilities.get("model_id", "adapter")),
            inference_walltime=float(body.get("inference_walltime", wall)),
            metadata={"adapter": True, "quantiles": body.get("quantiles")},
        )

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.shutdown()


class AdapterForecaster:
    """forecast_multichannel-compatible wrapper over an AdapterClient.

    A timed-out adapter is restarted before the error propagates, so the next
    task starts from a clean process.
    """

    supports_multivariate = False

    def __init__(self, client: AdapterClient, model_id: str | None = None):
        self.client = client
        self.model_id = model_id or str(client.capabilities.get("model_id", "adapter"))

    def forecast_channel(self, task: ForecastTask) -> Forecast:
        if not self.client.alive:
            self.client.restart()
        try:
            return self.client.forecast(
                task.context, task.horizon, task.channel_index, task.dt_lyap
            )
        except AdapterTimeoutError:
            self.client.restart()
            raise


# ---------------------------------------------------------------------------
# conformance suite
# ---------------------------------------------------------------------------

@dataclass
class ConformanceResult:
    name: str
    passed: bool
    detail: str = ""


def _check(results, name, fn):
    try:
        detail = fn() or ""
        results.append(ConformanceResult(name, True, str(detail)))
    except Exception as exc:
        results.append(ConformanceResult(name, False, f"{type(exc).__name__}: {exc}"))


def serve_check(command: str | list, timeout: float = 30.0, n_naive_tasks: int = 100) -> list[ConformanceResult]:
    """Run the protocol conformance suite against an adapter command.

    Checks the handshake budget, response correlation and lengths, number
    round-tripping, error handling on a bad request, naive-reference
    equivalence (when the adapter declares ``reference_naive``), and clean
    shutdown. Returns one result per check; callers decide the exit code.
    """
    results: list[ConformanceResult] = []
    rng = np.random.default_rng(20240)
    client = AdapterClient(command, timeout=timeout)

    def handshake():
        t0 = time.perf_counter()
        caps = client.start()
        dt = time.perf_counter() - t0
        if dt > 5.0:
            raise AdapterTimeoutError(f"handshake took {dt:.1f}s (budget 5s)")
        if "model_id" not in caps:
            raise ProtocolViolationError("capabilities payload lacks model_id")
        return f"model_id={caps['model_id']} in {dt * 1000:.0f}ms"

    _check(results, "handshake", handshake)
    if not results[0].passed:
        return results

    def basic_forecast():
        ctx = rng.normal(size=64)
        forecast = client.forecast(ctx, horizon=10)
        if not np.all(np.isfinite(forecast.values)):
            raise ProtocolViolationError("non-finite forecast values")
        return "10-step forecast ok"

    _check(results, "forecast_basic", basic_forecast)

    def long_horizon():
        ctx = rng.normal(size=128)
        forecast = client.forecast(ctx, horizon=300)
        if len(forecast.values) != 300:
            raise ProtocolViolationError(f"got {len(forecast.values)} values")
        return "horizon 300 ok"

    _check(results, "forecast_horizon_300", long_horizon)

    def number_roundtrip():
        # awkward doubles must survive serialize -> parse bit-exactly
        ctx = np.array([0.1, 1 / 3, 1e-300, 1e300, -2.5e-17, 12345.6789, 5.0, 5.0])
        blob = json.dumps({"values": ctx.tolist()})
        back = np.asarray(json.loads(blob)["values"])
        if not all(a == b for a, b in zip(ctx, back)):
            raise ProtocolViolationError("wire format loses float precision")
        forecast = client.forecast(ctx, horizon=3)
        if len(forecast.values) != 3:
            raise ProtocolViolationError("short-horizon forecast length wrong")
        return "floats round-trip bit-exactly"

    _check(results, "number_roundtrip", number_roundtrip)

    def error_handling():
        reply = client._exchange(
            "forecast_request", {"context": [1.0, 2.0], "horizon": -5}, timeout=client.timeout
        )
        if reply["msg_type"] != "error":
            raise ProtocolViolationError(f"bad request answered with {reply['msg_type']!r}")
        follow_up = client.forecast(rng.normal(size=32), horizon=5)
        if len(follow_up.values) != 5:
            raise ProtocolViolationError("adapter unusable after error reply")
        return "bad request -> error, process stays alive"

    _check(results, "error_handling", error_handling)

    if client.capabilities.get("reference_naive"):

        def naive_equivalence():
            for i in range(n_naive_tasks):
                ctx = rng.normal(size=int(rng.integers(8, 256)))
                horizon = int(rng.integers(1, 64))
                task = ForecastTask(context=ctx, horizon=horizon)
                ours = naive_forecast(task).values
                theirs = client.forecast(ctx, horizon).values
                if not np.array_equal(ours, theirs):
                    raise ProtocolViolationError(f"naive mismatch on task {i}")
            return f"{n_naive_tasks} tasks bit-identical to in-core naive"

        _check(results, "naive_equivalence", naive_equivalence)

    def clean_shutdown():
        client.shutdown()
        if client.alive:
            raise ProtocolViolationError("adapter still alive after shutdown")
        return "exited cleanly"

    _check(results, "shutdown", clean_shutdown)
    return results
