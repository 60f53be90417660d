"""Minimal node-resource-manager daemon and synthetic workload client.

The daemon accepts one workload client over a local stream socket speaking
newline-delimited JSON.  The client reports heartbeats; at each control
interval boundary the daemon computes the windowed median progress, queries
its controller, and sends back a `pcap_set`.  Message types:

  client -> daemon   hello {dt_s, total_heartbeats, seed}
                     heartbeat {timestamp_s, n}
                     shutdown {reason}
  daemon -> client   ack | error {message}        (exactly one per line read)
                     progress_report {window_end_s, progress_hz}
                     pcap_set {pcap_w}             (one per elapsed interval)

Timekeeping is simulated by default: control ticks are driven by the client's
heartbeat timestamps, so a daemon+client run is deterministic and reproduces
a pure simulator episode field for field.  The client places each window's
last heartbeat exactly on the interval boundary; that arrival both completes
the window and carries ordinary progress information (the windowed median is
robust to the one boundary-spanning gap).  An opt-in wall-clock mode drives
ticks from a real timer instead.

This wire schema is an original stand-in; it is not the Argo NRM protocol.
"""

from __future__ import annotations

import json
import math
import os
import socket
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams
from .progress import HeartbeatRecord, ProgressSample, compute_progress
from .simenv import RewardWeights
from .controllers import ControllerSpec, build_controller


def send_line(fh, payload: dict) -> None:
    fh.write(json.dumps(payload) + "\n")
    fh.flush()


@dataclass
class EpisodeLog:
    t_s: list = field(default_factory=list)
    pcap_w: list = field(default_factory=list)
    progress_hz: list = field(default_factory=list)
    power_w: list = field(default_factory=list)
    reward: list = field(default_factory=list)

    def append(self, t, pcap, progress, power, reward):
        self.t_s.append(t)
        self.pcap_w.append(pcap)
        self.progress_hz.append(progress)
        self.power_w.append(power)
        self.reward.append(reward)


class Daemon:
    """Single-client control daemon; serve() handles one episode."""

    def __init__(self, controller_spec: ControllerSpec, model: ModelParams,
                 weights: RewardWeights, dt: float = 1.0,
                 time_mode: str = "simulated",
                 trace_path=None, summary_path=None):
        if time_mode not in ("simulated", "wallclock"):
            raise ValueError("time_mode must be 'simulated' or 'wallclock'")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.model = model
        self.weights = weights
        self.dt = dt
        self.time_mode = time_mode
        self.trace_path = trace_path
        self.summary_path = summary_path
        self.controller = build_controller(controller_spec, model, dt)
        self.ready = threading.Event()
        self._lock = threading.Lock()
        self._reset_episode()

    def _reset_episode(self):
        self.window_index = 0
        self.buffer: list[HeartbeatRecord] = []
        self.prev_arrival: HeartbeatRecord | None = None
        self.last_ts: float | None = None
        self.last_action: float | None = None
        self.started = False
        self.client_seed = None
        self.log = EpisodeLog()
        self.complete = False

    # -- control ticks --------------------------------------------------------

    def _initial_action(self, out) -> None:
        # episode start: the node is idle, so the first action is computed
        # from a true zero observation, matching the simulator's reset state
        obs = ProgressSample(window_end=0.0, value=0.0, empty=False)
        action = self.controller.next_action(obs)
        self.last_action = action
        send_line(out, {"type": "pcap_set", "pcap_w": action})

    def _close_window(self, out) -> None:
        w_start = self.window_index * self.dt
        w_end = (self.window_index + 1) * self.dt
        trace = ([self.prev_arrival] if self.prev_arrival is not None else []) + self.buffer
        sample = compute_progress(trace, w_start, w_end)
        action_applied = self.last_action
        power = self.model.physical_power(action_applied)
        surrogate = self.model.measured_power_reward(action_applied)
        reward = (-self.weights.c1 * action_applied
                  + self.weights.c2 * sample.value / surrogate)
        self.log.append(w_end, action_applied, sample.value, power, reward)

        next_action = self.controller.next_action(sample)
        self.last_action = next_action
        if self.buffer:
            self.prev_arrival = self.buffer[-1]
        self.buffer = []
        self.window_index += 1
        send_line(out, {"type": "progress_report", "window_end_s": w_end,
                        "progress_hz": sample.value})
        send_line(out, {"type": "pcap_set", "pcap_w": next_action})

    def _tick_simulated(self, out) -> None:
        # the client's timestamps are strictly increasing, so once the latest
        # arrival reaches a boundary that window can receive nothing more
        while self.last_ts is not None and \
                self.last_ts >= (self.window_index + 1) * self.dt:
            self._close_window(out)

    # -- message handling -------------------------------------------------------

    def _handle(self, line: str, out) -> None:
        """One reply (ack or error) per received line, then any tick output."""
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("message must be a JSON object")
            mtype = msg.get("type")
            if mtype == "hello":
                if self.started:
                    raise ValueError("session already started")
                dt_s = float(msg.get("dt_s", self.dt))
                if abs(dt_s - self.dt) > 1e-9:
                    raise ValueError(f"client dt {dt_s} disagrees with daemon dt {self.dt}")
                self.client_seed = msg.get("seed")
                self.started = True
                send_line(out, {"type": "ack"})
                self._initial_action(out)
            elif mtype == "heartbeat":
                if not self.started:
                    raise ValueError("heartbeat before hello")
                ts = float(msg["timestamp_s"])
                n = int(msg["n"])
                if n < 1:
                    raise ValueError("batch count must be >= 1")
                if self.last_ts is not None and ts <= self.last_ts:
                    raise ValueError("timestamps must be strictly increasing")
                self.buffer.append(HeartbeatRecord(ts, n))
                self.last_ts = ts
                send_line(out, {"type": "ack"})
                if self.time_mode == "simulated":
                    self._tick_simulated(out)
            elif mtype == "shutdown":
                self.complete = msg.get("reason") == "complete"
                send_line(out, {"type": "ack"})
                raise _SessionOver
            else:
                raise ValueError(f"unknown message type {mtype!r}")
        except _SessionOver:
            raise
        except Exception as exc:
            send_line(out, {"type": "error", "message": str(exc)})

    def _flush_outputs(self):
        if self.trace_path is not None:
            import csv
            with open(self.trace_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["t_s", "pcap_w", "progress_hz", "power_w", "reward"])
                for row in zip(self.log.t_s, self.log.pcap_w, self.log.progress_hz,
                               self.log.power_w, self.log.reward):
                    writer.writerow([repr(v) for v in row])
        summary = self.summary()
        if self.summary_path is not None:
            with open(self.summary_path, "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2, sort_keys=True)
                fh.write("\n")
        return summary

    def summary(self) -> dict:
        return {
            "execution_time_s": self.log.t_s[-1] if self.log.t_s else 0.0,
            "energy_kj": sum(p * self.dt for p in self.log.power_w) / 1000.0,
            "truncated": not self.complete,
            "seed": self.client_seed,
            "weights": {"c1": self.weights.c1, "c2": self.weights.c2},
            "power_accounting": "physical",
            "intervals": len(self.log.t_s),
        }

    # -- serving -------------------------------------------------------------------

    def serve(self, socket_path) -> dict:
        """Listen on a Unix stream socket, handle one client, return summary."""
        if os.path.exists(socket_path):
            os.unlink(socket_path)
        server = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        try:
            server.bind(str(socket_path))
            server.listen(1)
            self.ready.set()
            conn, _ = server.accept()
            with conn:
                inp = conn.makefile("r", encoding="utf-8")
                out = conn.makefile("w", encoding="utf-8")
                timer = None
                if self.time_mode == "wallclock":
                    timer = _WallClockTicker(self, out)
                    timer.start()
                try:
                    for line in inp:
                        if not line.strip():
                            with self._lock:
                                send_line(out, {"type": "error", "message": "empty line"})
                            continue
                        with self._lock:
                            try:
                                self._handle(line, out)
                            except _SessionOver:
                                break
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    if timer is not None:
                        timer.stop()
            return self._flush_outputs()
        finally:
            server.close()
            if os.path.exists(socket_path):
                os.unlink(socket_path)


class _SessionOver(Exception):
    pass


class _WallClockTicker(threading.Thread):
    """Real-time control ticks: one window close per dt of wall time."""

    def __init__(self, daemon: Daemon, out):
        super().__init__(daemon=True)
        self.ctl = daemon
        self.out = out
        self._stop = threading.Event()

    def run(self):
        next_tick = time.monotonic() + self.ctl.dt
        while not self._stop.is_set():
            delay = next_tick - time.monotonic()
            if delay > 0 and self._stop.wait(delay):
                break
            next_tick += self.ctl.dt
            with self.ctl._lock:
                if not self.ctl.started:
                    continue
                try:
                    self.ctl._close_window(self.out)
                except (BrokenPipeError, ConnectionResetError, ValueError):
                    break

    def stop(self):
        self._stop.set()


def serve(socket_path, controller_spec: ControllerSpec, model: ModelParams,
          weights: RewardWeights, dt: float = 1.0, time_mode: str = "simulated",
          trace_path=None, summary_path=None) -> dict:
    daemon = Daemon(controller_spec, model, weights, dt=dt, time_mode=time_mode,
                    trace_path=trace_path, summary_path=summary_path)
    return daemon.serve(socket_path)


# -- workload client -------------------------------------------------------------

class DaemonUnreachable(ConnectionError):
    pass


class _ClientLink:
    def __init__(self, sock):
        self.inp = sock.makefile("r", encoding="utf-8")
        self.out = sock.makefile("w", encoding="utf-8")
        self.pcap_sets = 0
        self.current_pcap = None

    def send(self, payload):
        send_line(self.out, payload)

    def read_msg(self) -> dict:
        line = self.inp.readline()
        if not line:
            raise ConnectionError("daemon closed the connection")
        msg = json.loads(line)
        if msg.get("type") == "error":
            raise RuntimeError(f"daemon error: {msg.get('message')}")
        if msg.get("type") == "pcap_set":
            self.pcap_sets += 1
            self.current_pcap = float(msg["pcap_w"])
        return msg

    def drain_until_pcap_sets(self, count: int):
        while self.pcap_sets < count:
            self.read_msg()


def _window_heartbeats(w_start: float, w_end: float, progress: float, count: int,
                       exact_gaps: bool) -> list[float]:
    """Heartbeat times for one window, the last exactly on the boundary so it
    completes the window at the daemon.

    With exact_gaps the first count-1 arrivals sit at 1/progress spacing, so
    every rate in the window except the boundary one equals the progress
    value and the median reproduces it exactly (count >= 3).  Otherwise the
    arrivals are spread evenly across the window.
    """
    if exact_gaps:
        times = [w_start + j / progress for j in range(1, count)]
    else:
        times = [w_start + j * (w_end - w_start) / count for j in range(1, count)]
    times.append(w_end)
    return times


def workload_client(socket_path, model: ModelParams, total_heartbeats: int,
                    seed: int = 0, dt: float = 1.0, noise_sd: float = 0.0,
                    emission: str = "uniform", horizon_cap: int = 100_000) -> dict:
    """Synthetic iterative workload: integrates the node dynamics under the
    daemon's latest cap and reports one heartbeat per completed iteration.

    Deterministic given (seed, daemon controller); `emission="poisson"` draws
    the per-window heartbeat count from a Poisson law instead of the exact
    fractional carry (progress estimates then carry sampling noise).
    """
    if emission not in ("uniform", "poisson"):
        raise ValueError("emission must be 'uniform' or 'poisson'")
    rng = np.random.default_rng(seed)
    sock = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    try:
        sock.connect(str(socket_path))
    except OSError as exc:
        sock.close()
        raise DaemonUnreachable(f"cannot reach daemon at {socket_path}: {exc}") from exc

    link = _ClientLink(sock)
    link.send({"type": "hello", "dt_s": dt, "total_heartbeats": total_heartbeats,
               "seed": seed})

    progress = 0.0
    carry = 0.0
    sent = 0
    window = 0
    expected_pcap_sets = 1  # the initial action
    truncated = True
    try:
        while sent < total_heartbeats and window < horizon_cap:
            link.drain_until_pcap_sets(expected_pcap_sets)
            pcap = link.current_pcap
            progress = model.linear_step(progress, model.linearize_pcap(pcap), dt)
            if noise_sd > 0:
                progress += rng.normal(0.0, noise_sd)
            progress = max(0.0, progress)

            w_start = window * dt
            w_end = (window + 1) * dt
            if emission == "poisson":
                count = int(rng.poisson(progress * dt))
            else:
                carry += progress * dt
                count = math.floor(carry)
                carry -= count
            count = min(count, total_heartbeats - sent)
            if count > 0 and progress > 0:
                for ts in _window_heartbeats(w_start, w_end, progress, count,
                                             exact_gaps=emission == "uniform"):
                    link.send({"type": "heartbeat", "timestamp_s": ts, "n": 1})
                sent += count
                expected_pcap_sets = window + 2
            window += 1
        if sent >= total_heartbeats:
            link.drain_until_pcap_sets(expected_pcap_sets)
            truncated = False
        link.send({"type": "shutdown",
                   "reason": "complete" if not truncated else "abort"})
        while link.read_msg().get("type") != "ack":
            pass
    finally:
        sock.close()
    return {
        "execution_time_s": window * dt,
        "heartbeats_sent": sent,
        "truncated": truncated,
        "seed": seed,
    }
