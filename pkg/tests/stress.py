"""Randomized interleaving of launcher, clients and steering triggers.

Shared by the orchestrator tests and the acceptance suite.  The audit is
independent of the JobTable's own assertion: it replays the event log and
checks every overwrite against the submissions that preceded it.
"""
from dataclasses import dataclass, field

import numpy as np

from breedal.breed import BreedConfig, DeviationLedger
from breedal.orchestrator import protocol
from breedal.orchestrator.jobs import JobTable, launcher_tick
from breedal.orchestrator.server import ServerState, server_ingest, steering_trigger


class _CountingReservoir:
    def __init__(self):
        self.n = 0

    def put(self, entry):
        self.n += 1
        return True


@dataclass
class StressResult:
    budget: int
    done: int
    overwrites: int
    unsafe: list = field(default_factory=list)
    stale_submissions: list = field(default_factory=list)
    samples: int = 0
    triggers: int = 0


def stress_run(seed: int, S: int, m: int, T_steps: int = 2, p_trigger: float = 0.2) -> StressResult:
    rng = np.random.default_rng(seed)
    bounds = (100.0, 500.0)
    table = JobTable(rng.uniform(*bounds, size=(S, 5)), m)
    ledger = DeviationLedger(S, T_steps)
    from breedal.heatpde import SolverConfig

    server = ServerState(reservoir=_CountingReservoir(), network=None, ledger=ledger, table=table,
                         solver=SolverConfig(M=3, T_steps=T_steps),
                         breed_cfg=BreedConfig(budget=S, window=S, period=1),
                         rng=np.random.default_rng(seed + 1))
    log = []  # ("submit", id, params) | ("overwrite", ids, params, k)
    progress = {}  # sim -> next timestep to send, -1 before HELLO
    result = StressResult(budget=S, done=0, overwrites=0)
    field_ = np.zeros(9, dtype=np.float32)

    def on_steer(ids, params):
        log.append(("overwrite", list(ids), np.array(params), table.k))
    server.on_steer = on_steer

    while not table.all_done():
        action = rng.random()
        if action < 0.25:
            for j in launcher_tick(table):
                log.append(("submit", j, table.params[j].copy()))
                progress[j] = -1
        elif action < 0.25 + p_trigger:
            result.triggers += 1
            steering_trigger(server)
        elif progress:
            j = int(rng.choice(sorted(progress)))
            step = progress[j]
            if step == -1:
                server_ingest(server, protocol.hello(j))
            elif step <= T_steps:
                server_ingest(server, protocol.sample(j, step, field_))
                result.samples += 1
                ledger.record_deviations([j], [step], [rng.exponential()], len(log))
            else:
                server_ingest(server, protocol.done(j))
                del progress[j]
                continue
            progress[j] = step + 1

    submitted = set()
    last_params = {}
    for event in log:
        if event[0] == "submit":
            _, j, p = event
            submitted.add(j)
            if j in last_params and not np.array_equal(last_params[j], p):
                result.stale_submissions.append(j)
        else:
            _, ids, params, k = event
            for j, p in zip(ids, params):
                result.overwrites += 1
                if j in submitted or j < k + m:
                    result.unsafe.append((j, k))
                last_params[j] = p
    result.done = table.n_done()
    return result
