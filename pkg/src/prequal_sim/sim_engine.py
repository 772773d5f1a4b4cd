"""Deterministic discrete-event testbed: machines, replicas, clients, wires.

One server replica runs per machine, sharing it with a synthetic antagonist
whose demand varies over time.  Queries execute under egalitarian processor
sharing at a rate set by the machine's spare capacity; when the machine is
saturated, isolation caps the replica at its allocation (optionally scaled by
a hobble penalty).  Probes and queries cross simulated wires with uniform
random latency.  Event ordering is total — (time, kind rank, sequence) — so
identical configs and seeds produce identical traces.

Internal units: integer microseconds for time, float core-microseconds for
CPU work.
"""
from __future__ import annotations

import math
import random
from heapq import heappop, heappush

from .config import RunConfig, SimConfig
from .errors import InvariantError
from .metrics import SegmentMetrics
from .probe_pool import PrequalConfig, ProbePool, compute_reuse_budget
from .selection import (
    POOL_POLICIES,
    C3State,
    ClientPolicyState,
    WrrState,
    YarpState,
    baseline_select,
    pool_select,
)
from .signals import US_PER_S, ProbeResponse, ServerLoadTracker
from .workload import Step, arrival_gap_us, draw_query_work

# Event kinds; the numeric value is also the tie-break rank at equal times.
EV_FINISH = 0
EV_ARRIVAL = 1
EV_DEADLINE = 2
EV_PROBE_ARRIVAL = 3
EV_PROBE_RESPONSE = 4
EV_RESPONSE = 5
EV_SEND = 6
EV_ANTAGONIST = 7
EV_YARP_POLL = 8
EV_WRR = 9
EV_IDLE_PROBE = 10
EV_METRIC = 11
EV_WARMUP = 12
EV_STEP = 13

_WORK_EPS = 1e-6  # core-µs; below this a query counts as finished


class Query:
    __slots__ = (
        "qid",
        "client",
        "replica",
        "work",
        "remaining",
        "sent_at",
        "server_arrival",
        "arrival_rif",
    )

    def __init__(self, qid: int, client: int, replica: int, work: float, sent_at: int):
        self.qid = qid
        self.client = client
        self.replica = replica
        self.work = work  # core-µs
        self.remaining = work
        self.sent_at = sent_at
        self.server_arrival = -1
        self.arrival_rif = -1


def replica_service_rate(
    capacity: float,
    antagonist: float,
    allocation: float,
    demand: float,
    hobble_penalty: float = 1.0,
) -> float:
    """CPU rate (cores) granted to a replica demanding ``demand`` cores.

    The replica may spill beyond its allocation only into the machine's spare
    capacity.  On a saturated machine (no spare) isolation caps it at its
    allocation times the hobble penalty.
    """
    spare = capacity - antagonist - allocation
    if spare > 0:
        return min(demand, allocation + spare)
    return min(demand, allocation * hobble_penalty)


class Replica:
    """A server replica and the machine it lives on."""

    __slots__ = (
        "rid",
        "capacity",
        "allocation",
        "penalty",
        "threads_cap",
        "tracker",
        "antagonist_demand",
        "ant_base",
        "ant_bursting",
        "ant_level",
        "active",
        "by_qid",
        "rate",
        "last_advance",
        "overhead",
        "finish_gen",
        "consumed_total",
        "consumed_by_second",
        "arrivals_total",
    )

    def __init__(self, rid: int, sim_cfg: SimConfig):
        self.rid = rid
        self.capacity = sim_cfg.machine.capacity
        self.allocation = sim_cfg.machine.allocation
        self.penalty = sim_cfg.machine.hobble_penalty
        self.threads_cap = sim_cfg.threads_cap
        self.tracker = ServerLoadTracker()
        self.antagonist_demand = 0.0
        self.ant_base = 0.0
        self.ant_bursting = False
        self.ant_level = 0.0
        self.active: list[Query] = []
        self.by_qid: dict[int, Query] = {}
        self.rate = 0.0
        self.last_advance = 0
        self.overhead = 0.0  # core-µs of probe work pending ahead of queries
        self.finish_gen = 0
        self.consumed_total = 0.0  # core-µs
        self.consumed_by_second: dict[int, float] = {}
        self.arrivals_total = 0

    def recompute_rate(self) -> None:
        k = len(self.active)
        if k == 0:
            self.rate = 0.0
            return
        demand = float(min(k, self.threads_cap))
        self.rate = replica_service_rate(
            self.capacity, self.antagonist_demand, self.allocation, demand, self.penalty
        )

    def advance(self, now: int) -> None:
        """Apply processor-sharing progress over the span since last advance.

        The rate and the active set are constant between events, so each of
        the k active queries receives rate/k cores; pending probe overhead is
        served ahead of query work.
        """
        dt = now - self.last_advance
        if dt <= 0:
            return
        start = self.last_advance
        self.last_advance = now
        active = self.active
        if not active:
            return
        gross = self.rate * dt
        consumed = 0.0
        if self.overhead > 0.0:
            served = self.overhead if self.overhead < gross else gross
            self.overhead -= served
            gross -= served
            consumed += served
        if gross > 0.0:
            per = gross / len(active)
            for q in active:
                dec = per if per < q.remaining else q.remaining
                q.remaining -= dec
                consumed += dec
        if consumed > 0.0:
            self._account(start, now, consumed)

    def account_direct(self, now: int, amount: float) -> None:
        """Charge CPU work consumed instantaneously (idle-time probe cost)."""
        self.consumed_total += amount
        second = now // US_PER_S
        self.consumed_by_second[second] = (
            self.consumed_by_second.get(second, 0.0) + amount
        )

    def _account(self, start: int, end: int, consumed: float) -> None:
        self.consumed_total += consumed
        s0 = start // US_PER_S
        s1 = (end - 1) // US_PER_S
        buckets = self.consumed_by_second
        if s0 == s1:
            buckets[s0] = buckets.get(s0, 0.0) + consumed
            return
        span = end - start
        for sec in range(s0, s1 + 1):
            lo = max(start, sec * US_PER_S)
            hi = min(end, (sec + 1) * US_PER_S)
            share = consumed * (hi - lo) / span
            buckets[sec] = buckets.get(sec, 0.0) + share

    def finish_eta_us(self) -> int | None:
        """Microseconds until the lowest-remaining query completes, or None."""
        if not self.active or self.rate <= 0.0:
            return None
        min_rem = min(q.remaining for q in self.active)
        need = self.overhead + min_rem * len(self.active)
        return max(1, math.ceil(need / self.rate))


class Client:
    """One client replica: policy state, probe pool, and RNG streams."""

    __slots__ = (
        "cid",
        "state",
        "pool",
        "pool_cfg",
        "budget",
        "rng_policy",
        "rng_arrival",
        "rate_per_client",
        "client_rif",
        "last_probe_at",
    )

    def __init__(self, cid: int, seed_base: str):
        self.cid = cid
        self.state: ClientPolicyState | None = None
        self.pool: ProbePool | None = None
        self.pool_cfg: PrequalConfig | None = None
        self.budget = 1.0
        self.rng_policy = random.Random(f"{seed_base}:pol:{cid}")
        self.rng_arrival = random.Random(f"{seed_base}:arr:{cid}")
        self.rate_per_client = 0.0
        self.client_rif: dict[int, int] = {}
        self.last_probe_at = 0


class WrrController:
    """Recomputes shared WRR weights from trailing server-side statistics."""

    def __init__(self, cfg: SimConfig, state: WrrState):
        self.cfg = cfg
        self.state = state
        self.snapshots: list[tuple[int, list[int], list[float]]] = []

    def snapshot(self, now: int, replicas: list[Replica]) -> None:
        arrivals = [r.arrivals_total for r in replicas]
        consumed = [r.consumed_total for r in replicas]
        self.snapshots.append((now, arrivals, consumed))
        horizon = now - self.cfg.wrr_window_us - self.cfg.wrr_recompute_us
        while len(self.snapshots) > 2 and self.snapshots[1][0] <= horizon:
            self.snapshots.pop(0)

    def recompute(self, now: int, replicas: list[Replica]) -> None:
        self.snapshot(now, replicas)
        base = None
        for snap in self.snapshots:
            if snap[0] >= now - self.cfg.wrr_window_us:
                base = snap
                break
        if base is None or base[0] >= now:
            return
        t0, arr0, cons0 = base
        dt_s = (now - t0) / US_PER_S
        alloc = self.cfg.machine.allocation
        weights = []
        any_traffic = False
        for rid, rep in enumerate(replicas):
            qps = (rep.arrivals_total - arr0[rid]) / dt_s
            util = (rep.consumed_total - cons0[rid]) / US_PER_S / (alloc * dt_s)
            if qps > 0:
                any_traffic = True
            weights.append(max(qps, 0.01) / max(util, self.cfg.wrr_min_util))
        if not any_traffic:
            weights = [1.0] * len(replicas)
        self.state.weights = weights
        self.state.rebuild()


class Simulation:
    """Single-threaded event loop executing one run of a step schedule."""

    def __init__(self, cfg: RunConfig, steps: list[Step], run_index: int = 0):
        if not steps:
            raise InvariantError("simulation requires at least one step")
        self.cfg = cfg
        self.sim_cfg = cfg.sim
        self.steps = steps
        self.run_index = run_index
        seed_base = f"{cfg.master_seed}:{run_index}"
        self.rng_wire = random.Random(f"{seed_base}:wire")
        self.rng_work = random.Random(f"{seed_base}:work")
        self.rng_ant = random.Random(f"{seed_base}:ant")
        self.replicas = [Replica(i, cfg.sim) for i in range(cfg.sim.n_servers)]
        self.replica_ids = list(range(cfg.sim.n_servers))
        self.clients = [Client(i, seed_base) for i in range(cfg.sim.n_clients)]
        self.heap: list[tuple[int, int, int, tuple]] = []
        self.seq = 0
        self.now = 0
        self.qid = 0
        self.measuring = False
        self.segment: SegmentMetrics | None = None
        self.segments: list[SegmentMetrics] = []
        self.step_idx = -1
        self.step_start = 0
        self.measure_start = 0
        self.consumed_at_measure: list[float] = []
        self.wrr_controller: WrrController | None = None
        self.wrr_state: WrrState | None = None
        self.active_policy = ""
        self.pool_cfg: PrequalConfig | None = None
        # audit counters for the work-conservation invariant
        self.audit_completed = 0.0
        self.audit_aborted = 0.0
        self.audit_overhead = 0.0
        self.invariant_check_every = 0
        self._events_processed = 0
        self._ant_p_off = min(
            1.0, cfg.sim.antagonist.step_us / cfg.sim.antagonist.mean_burst_us
        )
        frac = cfg.sim.antagonist.burst_fraction
        self._ant_p_on = self._ant_p_off * frac / (1.0 - frac) if frac > 0 else 0.0
        self._handlers = [
            self._on_finish,
            self._on_arrival,
            self._on_deadline,
            self._on_probe_arrival,
            self._on_probe_response,
            self._on_response,
            self._on_send,
            self._on_antagonist,
            self._on_yarp_poll,
            self._on_wrr,
            self._on_idle_probe,
            self._on_metric,
            self._on_warmup,
            self._on_step,
        ]

    # -- scheduling helpers --------------------------------------------------

    def push(self, time: int, kind: int, payload: tuple) -> None:
        self.seq += 1
        heappush(self.heap, (time, kind, self.seq, payload))

    def wire_us(self) -> int:
        return self.rng_wire.randint(self.sim_cfg.wire_min_us, self.sim_cfg.wire_max_us)

    # -- lifecycle -------------------------------------------------------------

    def run(self) -> list[SegmentMetrics]:
        self._init_antagonists()
        self._start_step(0)
        n = len(self.clients)
        for client in self.clients:
            gap = arrival_gap_us(self.cfg.workload, client.rate_per_client,
                                 client.rng_arrival)
            if self.cfg.workload.arrival_process == "uniform":
                # Stagger deterministic arrivals so clients do not fire in
                # lockstep from t=0.
                gap = max(1, round(gap * (client.cid + 1) / n))
            self.push(gap, EV_SEND, (client.cid,))
        self.push(self.sim_cfg.metric_tick_us, EV_METRIC, ())
        end_time = sum(s.duration_us for s in self.steps)
        heap = self.heap
        handlers = self._handlers
        while heap:
            time, kind, _seq, payload = heappop(heap)
            if time > end_time:
                break
            self.now = time
            handlers[kind](payload)
            if self.invariant_check_every:
                self._events_processed += 1
                if self._events_processed % self.invariant_check_every == 0:
                    self.check_invariants()
        return self.segments

    def _init_antagonists(self) -> None:
        ant = self.sim_cfg.antagonist
        for rep in self.replicas:
            rep.ant_base = self.rng_ant.uniform(ant.base_low, ant.base_high)
            rep.ant_bursting = self.rng_ant.random() < ant.burst_fraction
            if rep.ant_bursting:
                rep.ant_level = self._draw_burst_level(rep)
            self._set_antagonist_demand(rep)
            self.push(ant.step_us, EV_ANTAGONIST, (rep.rid,))

    def _draw_burst_level(self, rep: Replica) -> float:
        hi = rep.capacity - rep.ant_base - rep.allocation + self.sim_cfg.antagonist.headroom
        return self.rng_ant.uniform(0.0, max(0.0, hi))

    def _set_antagonist_demand(self, rep: Replica) -> None:
        demand = rep.ant_base + (rep.ant_level if rep.ant_bursting else 0.0)
        cap = rep.capacity - self.sim_cfg.antagonist.cap_epsilon
        rep.antagonist_demand = min(max(demand, 0.0), cap)

    # -- step management -------------------------------------------------------

    def _start_step(self, index: int) -> None:
        step = self.steps[index]
        self.step_idx = index
        self.step_start = self.now
        policy_changed = step.policy != self.active_policy
        self.active_policy = step.policy
        self._configure_policy(step, policy_changed)
        per_client = step.qps / self.sim_cfg.n_clients
        for client in self.clients:
            client.rate_per_client = per_client
        self.segment = SegmentMetrics(
            step=step.step_index,
            policy=step.policy,
            param_name=step.param_name,
            param_value=step.param_value,
        )
        self.measuring = False
        self.measure_start = self.now + self.cfg.warmup_us
        self.push(self.measure_start, EV_WARMUP, ())
        self.push(self.now + step.duration_us, EV_STEP, ())

    def _configure_policy(self, step: Step, policy_changed: bool) -> None:
        cfg = self.cfg
        policy = step.policy
        settings = cfg.prequal
        pool_cfg = PrequalConfig(
            n=self.sim_cfg.n_servers,
            r_probe=settings.r_probe,
            r_remove=settings.r_remove,
            delta=settings.delta,
            m=settings.m,
            q_rif=settings.q_rif,
            age_limit=settings.age_limit_us,
            min_occupancy=settings.min_occupancy,
            idle_probe_interval=settings.idle_probe_interval_us,
            rif_window=settings.rif_window,
        )
        for key, value in step.prequal_overrides.items():
            setattr(pool_cfg, key, value)
        pool_cfg.validate()
        self.pool_cfg = pool_cfg
        budget = compute_reuse_budget(pool_cfg)
        if policy == "wrr" and (policy_changed or self.wrr_state is None):
            self.wrr_state = WrrState(weights=[1.0] * self.sim_cfg.n_servers)
            self.wrr_controller = WrrController(self.sim_cfg, self.wrr_state)
            self.wrr_controller.snapshot(self.now, self.replicas)
            self.push(self.now + self.sim_cfg.wrr_recompute_us, EV_WRR, ())
        n = self.sim_cfg.n_servers
        for client in self.clients:
            client.pool_cfg = pool_cfg
            client.budget = budget
            if not policy_changed and client.state is not None:
                # Parameter-only change: keep the warm pool and state.
                if step.linear_lambda is not None:
                    client.state.linear_lambda = step.linear_lambda
                continue
            state = ClientPolicyState(policy=policy, n_replicas=n)
            state.client_rif = client.client_rif  # physical, survives resets
            if policy in ("round_robin", "least_loaded"):
                state.last_chosen = client.rng_policy.randrange(n)
            if policy == "wrr":
                state.wrr = self.wrr_state
            elif policy == "yarp_po2c":
                state.yarp = YarpState(last_rif=[0] * n)
                first = self.now + client.rng_policy.randrange(self.sim_cfg.yarp_poll_us)
                self.push(first, EV_YARP_POLL, (client.cid,))
            elif policy == "c3":
                state.c3 = C3State(n_clients=self.sim_cfg.n_clients)
            if step.linear_lambda is not None:
                state.linear_lambda = step.linear_lambda
            client.state = state
            if policy in POOL_POLICIES:
                client.pool = ProbePool(pool_cfg)
                if pool_cfg.idle_probe_interval:
                    self.push(
                        self.now + pool_cfg.idle_probe_interval,
                        EV_IDLE_PROBE,
                        (client.cid,),
                    )
            else:
                client.pool = None

    def _flush_segment(self) -> None:
        seg = self.segment
        seg.measured_s = (self.now - self.measure_start) / US_PER_S
        first_sec = (self.measure_start + US_PER_S - 1) // US_PER_S
        last_sec = self.now // US_PER_S  # exclusive
        alloc = self.sim_cfg.machine.allocation
        alloc_us = alloc * US_PER_S
        for rep in self.replicas:
            buckets = rep.consumed_by_second
            for sec in range(first_sec, last_sec):
                seg.util_1s.append(buckets.get(sec, 0.0) / alloc_us)
        if self.measuring:
            for rep in self.replicas:
                consumed_s = (
                    rep.consumed_total - self.consumed_at_measure[rep.rid]
                ) / US_PER_S
                if rep.rid % 2 == 0:
                    seg.util_even_sum += consumed_s
                    seg.even_alloc_s += alloc * seg.measured_s
                else:
                    seg.util_odd_sum += consumed_s
                    seg.odd_alloc_s += alloc * seg.measured_s
        self.segments.append(seg)
        self.measuring = False

    # -- event handlers --------------------------------------------------------

    def _on_send(self, payload: tuple) -> None:
        (cid,) = payload
        client = self.clients[cid]
        now = self.now
        replica = self._select_replica(client, now)
        client.client_rif[replica] = client.client_rif.get(replica, 0) + 1
        work_s = draw_query_work(self.cfg.workload, self.rng_work, replica)
        self.qid += 1
        query = Query(self.qid, cid, replica, work_s * US_PER_S, now)
        self.push(now + self.wire_us(), EV_ARRIVAL, (query,))
        if client.pool is not None:
            count = client.pool.probes_for_query(client.pool_cfg)
            if count:
                targets = client.pool.pick_probe_targets(
                    count, self.replica_ids, client.rng_policy
                )
                for target in targets:
                    self.push(now + self.wire_us(), EV_PROBE_ARRIVAL, (cid, target, now))
                client.last_probe_at = now
        gap = arrival_gap_us(self.cfg.workload, client.rate_per_client, client.rng_arrival)
        self.push(now + gap, EV_SEND, (cid,))

    def _select_replica(self, client: Client, now: int) -> int:
        state = client.state
        if client.pool is not None:
            pool = client.pool
            cfg = client.pool_cfg
            pool.expire_and_maintain(now, cfg)
            theta = pool.rif_threshold(cfg)
            choice = pool_select(state, pool, cfg, theta, client.rng_policy)
            pool.on_query_sent(choice, cfg, client.rng_policy, theta)
            return choice
        return baseline_select(state, self.replica_ids, client.rng_policy)

    def _on_arrival(self, payload: tuple) -> None:
        (query,) = payload
        rep = self.replicas[query.replica]
        rep.advance(self.now)
        query.server_arrival = self.now
        query.arrival_rif = rep.tracker.on_query_arrive(self.now)
        rep.active.append(query)
        rep.by_qid[query.qid] = query
        rep.arrivals_total += 1
        if self.measuring:
            self.segment.arrivals += 1
        rep.recompute_rate()
        self._reschedule_finish(rep)
        self.push(self.now + self.sim_cfg.query_deadline_us, EV_DEADLINE,
                  (query.replica, query.qid))

    def _reschedule_finish(self, rep: Replica) -> None:
        rep.finish_gen += 1
        eta = rep.finish_eta_us()
        if eta is not None:
            self.push(self.now + eta, EV_FINISH, (rep.rid, rep.finish_gen))

    def _on_finish(self, payload: tuple) -> None:
        rid, gen = payload
        rep = self.replicas[rid]
        if gen != rep.finish_gen:
            return  # superseded by a later arrival or rate change
        rep.advance(self.now)
        still_active = []
        for q in rep.active:
            if q.remaining <= _WORK_EPS:
                self._complete(rep, q)
            else:
                still_active.append(q)
        rep.active = still_active
        rep.recompute_rate()
        self._reschedule_finish(rep)

    def _complete(self, rep: Replica, query: Query) -> None:
        latency = self.now - query.server_arrival
        rep.tracker.on_query_finish(query.arrival_rif, latency, self.now)
        del rep.by_qid[query.qid]
        self.audit_completed += query.work
        if self.measuring:
            seg = self.segment
            seg.completions += 1
            seg.latency.record(latency)
        self.push(self.now + self.wire_us(), EV_RESPONSE,
                  (query.client, query.replica, True, query.sent_at))

    def _on_deadline(self, payload: tuple) -> None:
        rid, qid = payload
        rep = self.replicas[rid]
        query = rep.by_qid.get(qid)
        if query is None:
            return  # finished in time
        rep.advance(self.now)
        if query.remaining <= _WORK_EPS:
            # Completed at this exact instant; let it count as a finish.
            rep.active.remove(query)
            self._complete(rep, query)
        else:
            rep.active.remove(query)
            del rep.by_qid[qid]
            rep.tracker.on_query_abort(self.now)
            self.audit_aborted += query.work - query.remaining
            if self.measuring:
                seg = self.segment
                seg.errors += 1
                seg.latency.record(self.sim_cfg.query_deadline_us)
            self.push(self.now + self.wire_us(), EV_RESPONSE,
                      (query.client, query.replica, False, query.sent_at))
        rep.recompute_rate()
        self._reschedule_finish(rep)

    def _on_probe_arrival(self, payload: tuple) -> None:
        cid, rid, sent_at = payload
        rep = self.replicas[rid]
        cost = self.sim_cfg.probe_cpu_cost * US_PER_S  # core-µs
        if cost > 0.0:
            self.audit_overhead += cost
            if rep.active:
                rep.advance(self.now)
                rep.overhead += cost
                self._reschedule_finish(rep)
            else:
                rep.account_direct(self.now, cost)
        rif, latency_estimate = rep.tracker.answer_probe(self.now)
        self.push(self.now + self.wire_us(), EV_PROBE_RESPONSE,
                  (cid, rid, rif, latency_estimate, sent_at))

    def _on_probe_response(self, payload: tuple) -> None:
        cid, rid, rif, latency_estimate, sent_at = payload
        if self.now - sent_at > self.sim_cfg.probe_timeout_us:
            return  # too stale to use
        client = self.clients[cid]
        if client.pool is None:
            return  # policy changed while the probe was in flight
        response = ProbeResponse(rid, rif, latency_estimate, self.now)
        client.pool.add_probe(response, client.pool_cfg, client.budget,
                              client.rng_policy)
        state = client.state
        if state.c3 is not None:
            state.c3.observe_probe(rid, rif, latency_estimate)

    def _on_response(self, payload: tuple) -> None:
        cid, rid, ok, sent_at = payload
        client = self.clients[cid]
        outstanding = client.client_rif.get(rid, 0)
        if outstanding > 0:
            client.client_rif[rid] = outstanding - 1
        state = client.state
        if ok and state is not None and state.c3 is not None:
            state.c3.observe_response(rid, float(self.now - sent_at))

    def _on_antagonist(self, payload: tuple) -> None:
        (rid,) = payload
        rep = self.replicas[rid]
        rng = self.rng_ant
        if rep.ant_bursting:
            if rng.random() < self._ant_p_off:
                rep.ant_bursting = False
        elif rng.random() < self._ant_p_on:
            rep.ant_bursting = True
            rep.ant_level = self._draw_burst_level(rep)
        rep.advance(self.now)
        self._set_antagonist_demand(rep)
        rep.recompute_rate()
        self._reschedule_finish(rep)
        self.push(self.now + self.sim_cfg.antagonist.step_us, EV_ANTAGONIST, (rid,))

    def _on_yarp_poll(self, payload: tuple) -> None:
        (cid,) = payload
        client = self.clients[cid]
        state = client.state
        if state is None or state.policy != "yarp_po2c":
            return
        last = state.yarp.last_rif
        cost = self.sim_cfg.probe_cpu_cost * US_PER_S
        for rep in self.replicas:
            last[rep.rid] = rep.tracker.rif
            if cost > 0.0:
                # Poll answers are tiny; charge the CPU without reshaping
                # in-flight query service.
                rep.account_direct(self.now, cost)
                self.audit_overhead += cost
        self.push(self.now + self.sim_cfg.yarp_poll_us, EV_YARP_POLL, (cid,))

    def _on_wrr(self, payload: tuple) -> None:
        if self.active_policy != "wrr":
            return
        self.wrr_controller.recompute(self.now, self.replicas)
        self.push(self.now + self.sim_cfg.wrr_recompute_us, EV_WRR, ())

    def _on_idle_probe(self, payload: tuple) -> None:
        (cid,) = payload
        client = self.clients[cid]
        if client.pool is None:
            return
        interval = client.pool_cfg.idle_probe_interval
        if not interval:
            return
        if self.now - client.last_probe_at >= interval:
            target = client.pool.pick_probe_targets(
                1, self.replica_ids, client.rng_policy
            )[0]
            self.push(self.now + self.wire_us(), EV_PROBE_ARRIVAL,
                      (cid, target, self.now))
            client.last_probe_at = self.now
        self.push(self.now + interval, EV_IDLE_PROBE, (cid,))

    def _on_metric(self, payload: tuple) -> None:
        if self.measuring:
            record = self.segment.rif.record
            for rep in self.replicas:
                record(rep.tracker.rif)
        self.push(self.now + self.sim_cfg.metric_tick_us, EV_METRIC, ())

    def _on_warmup(self, payload: tuple) -> None:
        self.measuring = True
        self.consumed_at_measure = [r.consumed_total for r in self.replicas]

    def _on_step(self, payload: tuple) -> None:
        self._flush_segment()
        if self.step_idx + 1 < len(self.steps):
            self._start_step(self.step_idx + 1)

    # -- invariants --------------------------------------------------------

    def check_invariants(self) -> None:
        """Assert cross-cutting structural invariants (used by tests)."""
        for rep in self.replicas:
            if rep.tracker.rif != len(rep.active):
                raise InvariantError(
                    f"replica {rep.rid}: tracker RIF {rep.tracker.rif} != "
                    f"{len(rep.active)} active queries"
                )
            if rep.rate > 0:
                total = rep.rate + rep.antagonist_demand
                if total > rep.capacity + 1e-9:
                    raise InvariantError(
                        f"replica {rep.rid}: service rate plus antagonist "
                        f"demand {total:.6f} exceeds capacity"
                    )
        consumed = sum(r.consumed_total for r in self.replicas)
        in_flight = sum(q.work - q.remaining for r in self.replicas for q in r.active)
        expected = self.audit_completed + self.audit_aborted + self.audit_overhead
        overhead_pending = sum(r.overhead for r in self.replicas)
        gap = abs(consumed + overhead_pending - in_flight - expected)
        if gap > max(1.0, 1e-9 * expected):
            raise InvariantError(f"work conservation violated by {gap} core-µs")


def simulate_run(cfg: RunConfig, steps: list[Step], run_index: int = 0):
    """Execute one seeded run of the schedule and return its segments."""
    sim = Simulation(cfg, steps, run_index)
    return sim.run()
