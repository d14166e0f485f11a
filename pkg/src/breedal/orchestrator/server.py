"""Training server: ingestion, training cadence and steering triggers.

:func:`run` drives a whole experiment in-process on a deterministic schedule.
Each tick the launcher fills free slots, every running client delivers its
next message (a client whose sample is rejected by the full reservoir stays
paused on that message), and the trainer performs ``train_iters_per_tick``
iterations once the reservoir is ready.  Identical configs give identical
artifacts.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Optional

import numpy as np

from .. import breed
from ..breed import BreedConfig, DeviationLedger
from ..errors import ConfigError, MalformedMessage, UnknownSim
from ..harness import config as hconfig
from ..harness.metrics import SAMPLE_COLUMNS, CsvSink, MetricsRow, MetricsSink, write_simulations
from ..harness.validation import gen_validation, load_validation, save_validation
from ..heatpde import SolverConfig, trajectory
from ..nn import Network, TrainRecord, evaluate, normalize, normalize_field, train_step
from ..reservoir import Reservoir, ReservoirEntry
from . import protocol
from .jobs import PENDING, RUNNING, SUBMITTED, JobTable, launcher_tick
from .protocol import Message, Tag

log = logging.getLogger(__name__)

SMOOTHING_WINDOW = 40


@dataclass
class ServerState:
    reservoir: Reservoir
    network: Network
    ledger: DeviationLedger
    table: JobTable
    solver: SolverConfig
    breed_cfg: BreedConfig
    rng: np.random.Generator
    steering: bool = True
    i: int = 0
    s: int = 0
    ingested: int = 0
    metrics: object = None
    samples: object = None
    sample_log_period: int = 0
    last_record: Optional[TrainRecord] = None
    on_steer: Optional[Callable] = None  # called with (ids, params) after each overwrite

    @property
    def period(self) -> int:
        return self.breed_cfg.period

    @property
    def bounds(self):
        return self.breed_cfg.bounds

    def current_r(self) -> float:
        return breed.r_value(self.s, self.breed_cfg)


def server_ingest(server: ServerState, msg: Message) -> bool:
    """Apply one client message.  Returns False when a sample must be retried."""
    table = server.table
    if not 0 <= msg.sim_id < table.budget:
        raise UnknownSim(f"message for unknown simulation {msg.sim_id}")
    state = table.states[msg.sim_id]
    if msg.tag == Tag.HELLO:
        table.mark_running(msg.sim_id)
        return True
    if msg.tag == Tag.DONE:
        if state not in (SUBMITTED, RUNNING):
            raise MalformedMessage(f"DONE for sim {msg.sim_id} in state {state}")
        table.mark_done(msg.sim_id)
        return True
    if msg.tag != Tag.SAMPLE:
        raise MalformedMessage(f"server cannot ingest {msg.tag.name}")
    if state not in (SUBMITTED, RUNNING):
        raise MalformedMessage(f"SAMPLE for sim {msg.sim_id} in state {state}")
    M2 = server.solver.M ** 2
    if msg.field is None or msg.field.size != M2 or not 0 <= msg.t <= server.solver.T_steps:
        raise MalformedMessage(f"SAMPLE for sim {msg.sim_id} has bad t or field size")
    if state == SUBMITTED:
        table.mark_running(msg.sim_id)
    target = normalize_field(msg.field, server.bounds).astype(np.float32)
    entry = ReservoirEntry(msg.sim_id, int(msg.t), table.params[msg.sim_id].copy(), target)
    accepted = server.reservoir.put(entry)
    if accepted:
        server.ingested += 1
    return accepted


def steering_trigger(server: ServerState) -> int:
    """Resample every steerable pending simulation; returns how many changed."""
    table = server.table
    if server.ledger.n_completed == 0:
        return 0
    with table.lock:
        ids = table.steerable_ids()
        if not ids:
            return 0
        mix = breed.breed_resample(server.ledger, table.params, len(ids), server.s,
                                   server.breed_cfg, server.rng)
        table.overwrite(ids, mix.params, mix.provenance, generation=server.s + 1)
        if server.on_steer is not None:
            server.on_steer(ids, mix.params)
    server.s += 1
    log.debug("trigger %d at iteration %d: %d sims resampled (r=%.3f)",
              server.s, server.i, len(ids), mix.r)
    return len(ids)


def batch_arrays(entries, server: ServerState):
    params = np.stack([e.params for e in entries])
    ts = np.array([e.t for e in entries], dtype=np.int64)
    inputs = normalize(params, ts, server.bounds, server.solver.T_steps).astype(server.network.dtype)
    targets = np.stack([e.target for e in entries])
    sims = np.array([e.sim_id for e in entries], dtype=np.int64)
    return inputs, targets, sims, ts


def train_iteration(server: ServerState) -> Optional[TrainRecord]:
    """Draw a batch, take one Adam step, update the ledger, maybe steer."""
    if not server.reservoir.is_ready():
        return None
    entries = server.reservoir.draw_batch()
    inputs, targets, sims, ts = batch_arrays(entries, server)
    record = train_step(server.network, inputs, targets, sims, ts, iteration=server.i + 1)
    server.i += 1
    server.ledger.record_batch(record)
    server.last_record = record
    if server.samples is not None and server.sample_log_period and server.i % server.sample_log_period == 0:
        dev = breed.deviation(record.losses, record.mu, record.sigma)
        server.samples.write_many(
            [server.i, int(j), int(t), repr(float(l)), repr(record.mu), repr(record.sigma), repr(float(d))]
            for j, t, l, d in zip(sims, ts, record.losses, np.atleast_1d(dev)))
    if server.steering and server.i % server.period == 0:
        steering_trigger(server)
    return record


class InprocClient:
    """A solver run delivering HELLO, one SAMPLE per timestep, then DONE."""

    def __init__(self, sim_id: int, params, solver: SolverConfig):
        self.sim_id = sim_id
        self._messages = self._produce(np.asarray(params), solver)
        self._pending: Optional[Message] = None
        self.finished = False

    def _produce(self, params, solver) -> Iterator[Message]:
        yield protocol.hello(self.sim_id)
        for t, f in enumerate(trajectory(params, solver)):
            yield protocol.sample(self.sim_id, t, f)
        yield protocol.done(self.sim_id)

    def advance(self, server: ServerState) -> None:
        """Deliver messages until one sample lands, the reservoir pushes back, or DONE."""
        while not self.finished:
            if self._pending is None:
                self._pending = next(self._messages)
            msg = self._pending
            if not server_ingest(server, msg):
                return  # paused until the next tick
            self._pending = None
            if msg.tag == Tag.DONE:
                self.finished = True
            if msg.tag == Tag.SAMPLE:
                return


@dataclass
class RunSummary:
    iterations: int
    resamplings: int
    sims_done: int
    samples_ingested: int
    rejected_puts: int
    overwrites: int
    ticks: int
    final_train_loss: Optional[float]
    final_val_loss: Optional[float]
    train_val_gap: Optional[float]
    elapsed_seconds: float = 0.0
    output_dir: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def build_server(cfg, table: JobTable, metrics=None, samples=None) -> ServerState:
    solver = cfg.solver_config()
    return ServerState(
        reservoir=Reservoir(cfg.reservoir_config()),
        network=Network(cfg.mlp_config()),
        ledger=DeviationLedger(cfg.budget, cfg.T_steps),
        table=table,
        solver=solver,
        breed_cfg=cfg.breed_config(),
        rng=hconfig.rng_for(cfg.seed, "breed"),
        steering=cfg.mode == "breed",
        metrics=metrics,
        samples=samples,
        sample_log_period=cfg.sample_log_period,
    )


class RunSession:
    """Artifacts and bookkeeping shared by every transport of one run."""

    def __init__(self, cfg, validation=None, output_dir=None):
        self.cfg = cfg
        self.started = time.perf_counter()
        self.out = Path(output_dir or cfg.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.txt").write_text(hconfig.dump_config(cfg))
        if validation is None:
            if cfg.validation_path:
                validation = load_validation(cfg.validation_path)
            else:
                validation = gen_validation(cfg.validation_size, cfg.bounds, cfg.solver_config())
                save_validation(validation, self.out / "validation.bin")
        if validation.M != cfg.M or validation.T_steps != cfg.T_steps:
            raise ConfigError(
                f"validation set is M={validation.M}, T_steps={validation.T_steps}; "
                f"run needs M={cfg.M}, T_steps={cfg.T_steps}")
        self.val_inputs, self.val_targets = validation.normalized(cfg.bounds)
        self.table = JobTable(hconfig.initial_params(cfg), cfg.m)
        self.metrics = MetricsSink(self.out / "metrics.csv")
        self.samples = CsvSink(self.out / "samples.csv", SAMPLE_COLUMNS) if cfg.sample_log_period else None
        self.server = build_server(cfg, self.table, self.metrics, self.samples)
        self.last_val: Optional[float] = None
        self.train_curve: list[float] = []

    def training_wanted(self) -> bool:
        return not (self.table.all_done() and self.server.i >= self.cfg.iteration_cap)

    def finished(self) -> bool:
        return self.table.all_done() and (
            self.server.i >= self.cfg.iteration_cap or not self.server.reservoir.is_ready())

    def train_once(self) -> Optional[TrainRecord]:
        server = self.server
        record = train_iteration(server)
        if record is None:
            return None
        val = None
        if server.i % self.cfg.eval_period == 0:
            val = self.last_val = evaluate(server.network, self.val_inputs, self.val_targets)
        self.train_curve.append(record.mu)
        self.metrics.add(MetricsRow(server.i, record.mu, val, record.mu, record.sigma,
                                    server.s, server.current_r(), len(server.reservoir)))
        return record

    def close_sinks(self) -> None:
        self.metrics.close()
        if self.samples is not None:
            self.samples.close()

    def finish(self, ticks: int = 0, **extra) -> RunSummary:
        server, table = self.server, self.table
        self.close_sinks()
        if server.i and server.i % self.cfg.eval_period != 0:
            self.last_val = evaluate(server.network, self.val_inputs, self.val_targets)
        write_simulations(self.out / "simulations.csv", table.params, table.provenance,
                          table.generation, server.ledger.Q, server.ledger.q_iteration)
        final_train = float(np.mean(self.train_curve[-SMOOTHING_WINDOW:])) if self.train_curve else None
        gap = None
        if final_train is not None and self.last_val is not None:
            gap = abs(final_train - self.last_val)
        summary = RunSummary(
            iterations=server.i, resamplings=server.s, sims_done=table.n_done(),
            samples_ingested=server.ingested, rejected_puts=server.reservoir.rejected,
            overwrites=table.overwrites, ticks=ticks, final_train_loss=final_train,
            final_val_loss=self.last_val, train_val_gap=gap,
            elapsed_seconds=time.perf_counter() - self.started, output_dir=str(self.out),
            extra={"mode": self.cfg.mode, "seed": self.cfg.seed,
                   "pending_left": sum(1 for s in table.states if s == PENDING), **extra},
        )
        (self.out / "summary.json").write_text(summary.to_json())
        return summary


def run(cfg, validation=None, output_dir=None) -> RunSummary:
    """Run one full experiment and write its artifacts to ``output_dir``."""
    if getattr(cfg, "transport", "inproc") == "socket":
        from .sockets import run_socket

        return run_socket(cfg, validation, output_dir)
    session = RunSession(cfg, validation, output_dir)
    server, table = session.server, session.table
    clients: dict[int, InprocClient] = {}
    ticks = 0
    try:
        while True:
            ticks += 1
            for sim_id in launcher_tick(table):
                clients[sim_id] = InprocClient(sim_id, table.params[sim_id], server.solver)
            for sim_id in sorted(clients):
                clients[sim_id].advance(server)
            for sim_id in [j for j, c in clients.items() if c.finished]:
                del clients[sim_id]
            for _ in range(cfg.train_iters_per_tick):
                if not session.training_wanted() or session.train_once() is None:
                    break
            if session.finished():
                break
    finally:
        session.close_sinks()
    return session.finish(ticks=ticks, transport="inproc")
