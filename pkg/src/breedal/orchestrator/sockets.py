"""Socket transport: clients stream frames to the server over TCP.

The server accepts one connection per client.  A rejected sample is retried
by the connection's handler after ``poll_interval`` seconds; while it waits it
stops reading, so TCP backpressure pauses the client.  A connection that
sends ``JOB_QUERY`` gets a ``JOB_STATUS`` reply and from then on also
receives a ``PARAM_UPDATE`` frame for every steered simulation.

Run order is not deterministic in this mode.
"""
from __future__ import annotations

import logging
import multiprocessing
import socket
import socketserver
import threading
import time

import numpy as np

from ..errors import BreedalError
from ..heatpde import SolverConfig, trajectory
from . import protocol
from .jobs import launcher_tick
from .protocol import Tag
from .server import RunSession, RunSummary, server_ingest

log = logging.getLogger(__name__)


def run_client(address, sim_id: int, params, solver: SolverConfig) -> int:
    """Solve one trajectory and stream it; returns the number of samples sent."""
    sent = 0
    with socket.create_connection(address) as sock:
        sock.sendall(protocol.encode(protocol.hello(sim_id)))
        for t, field in enumerate(trajectory(np.asarray(params), solver)):
            sock.sendall(protocol.encode(protocol.sample(sim_id, t, field)))
            sent += 1
        sock.sendall(protocol.encode(protocol.done(sim_id)))
        sock.shutdown(socket.SHUT_WR)
        sock.recv(1)  # wait for the server to close after DONE
    return sent


def query_status(address) -> protocol.Message:
    with socket.create_connection(address) as sock:
        sock.sendall(protocol.encode(protocol.job_query()))
        return protocol.read_message(sock.makefile("rb"))


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        owner: TrainingServer = self.server.owner
        while True:
            try:
                msg = protocol.read_message(self.rfile)
            except BreedalError as exc:
                owner.record_error(exc)
                return
            if msg is None:
                return
            if msg.tag == Tag.JOB_QUERY:
                owner.subscribe(self.wfile)
                owner.send(self.wfile, owner.status_message())
                continue
            try:
                while not owner.ingest(msg):
                    time.sleep(owner.poll_interval)
            except BreedalError as exc:
                owner.record_error(exc)
                return
            if msg.tag == Tag.DONE:
                return


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class TrainingServer:
    """Socket front-end around a :class:`RunSession`."""

    def __init__(self, session: RunSession, host: str = "127.0.0.1", port: int = 0):
        self.session = session
        self.poll_interval = session.cfg.poll_interval
        self._ingest_lock = threading.Lock()
        self._subscribers: list = []
        self._send_lock = threading.Lock()
        self.errors: list[Exception] = []
        self._tcp = _TCPServer((host, port), _Handler)
        self._tcp.owner = self
        session.server.on_steer = self._broadcast_updates

    @property
    def address(self):
        return self._tcp.server_address

    def ingest(self, msg) -> bool:
        with self._ingest_lock:
            return server_ingest(self.session.server, msg)

    def record_error(self, exc: Exception) -> None:
        log.error("client connection failed: %s", exc)
        self.errors.append(exc)

    def status_message(self) -> protocol.Message:
        table = self.session.table
        with table.lock:
            return protocol.job_status(table.k, table.in_flight())

    def subscribe(self, wfile) -> None:
        with self._send_lock:
            if wfile not in self._subscribers:
                self._subscribers.append(wfile)

    def send(self, wfile, msg) -> None:
        with self._send_lock:
            try:
                wfile.write(protocol.encode(msg))
                wfile.flush()
            except OSError:
                if wfile in self._subscribers:
                    self._subscribers.remove(wfile)

    def _broadcast_updates(self, ids, params) -> None:
        for wfile in list(self._subscribers):
            for j, p in zip(ids, params):
                self.send(wfile, protocol.param_update(j, p))

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self._tcp.serve_forever, kwargs={"poll_interval": 0.05},
                                  daemon=True, name="breedal-server")
        thread.start()
        return thread

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()


def _spawn_client(address, sim_id, params, solver, use_processes: bool):
    args = (address, sim_id, np.asarray(params).tolist(), solver)
    if use_processes:
        proc = multiprocessing.get_context("spawn").Process(target=run_client, args=args, daemon=True)
    else:
        proc = threading.Thread(target=run_client, args=args, daemon=True, name=f"client-{sim_id}")
    proc.start()
    return proc


def run_socket(cfg, validation=None, output_dir=None, use_processes: bool = False,
               timeout: float = 3600.0) -> RunSummary:
    """Same experiment as :func:`server.run` with clients talking over TCP."""
    session = RunSession(cfg, validation, output_dir)
    front = TrainingServer(session)
    front.serve_in_background()
    table = session.table
    stop = threading.Event()
    workers = []

    def launcher():
        while not stop.is_set() and not table.all_done():
            with table.lock:
                launched = [(j, table.params[j].copy()) for j in launcher_tick(table)]
            for j, p in launched:
                workers.append(_spawn_client(front.address, j, p, session.server.solver, use_processes))
            stop.wait(cfg.poll_interval)

    launch_thread = threading.Thread(target=launcher, daemon=True, name="launcher")
    launch_thread.start()
    deadline = time.monotonic() + timeout
    try:
        while not session.finished():
            if front.errors:
                raise front.errors[0]
            if time.monotonic() > deadline:
                raise TimeoutError("socket run exceeded its timeout")
            trained = False
            if session.training_wanted():
                for _ in range(cfg.train_iters_per_tick):
                    if session.train_once() is None:
                        break
                    trained = True
            if not trained:
                time.sleep(cfg.poll_interval)
    finally:
        stop.set()
        launch_thread.join(timeout=5)
        for w in workers:
            w.join(timeout=5)
        front.shutdown()
        session.close_sinks()
    return session.finish(transport="socket", client_mode="process" if use_processes else "thread")
