"""Deterministic discrete-event transport with alpha-beta priced links.

Every directed (src, dst) pair owns an independent link.  A ``b``-byte put
starts transmitting when the link is free, occupies it for ``b / beta`` and
lands ``alpha`` later; deliveries on a pair never overtake each other.  Ties
in time are broken by insertion order, so a run is a pure function of its
inputs.
"""

from __future__ import annotations

import heapq
import itertools
from collections import defaultdict
from fractions import Fraction

from ..costmodel import CostParams, exact, transfer_time
from ..errors import DeadlockError, ProtocolFault
from .core import (COUNTER_BYTES, BlockedTask, Compute, Delivery, Join, RankContext,
                   SymmetricHeap, Tier, WaitCounter, WaitFlags, is_satisfied, rank_of)


class _Task:
    __slots__ = ("gen", "gid", "name", "parent", "index", "pending", "results", "waiting")

    def __init__(self, gen, gid, name, parent=None, index=0):
        self.gen = gen
        self.gid = gid
        self.name = name
        self.parent = parent
        self.index = index
        self.pending = 0
        self.results = None
        self.waiting = None


class VirtualTransport:
    def __init__(self, topo, params: CostParams = None, signal_latency=0):
        self.topo = topo
        self.params = params or CostParams()
        self.signal_latency = exact(signal_latency)
        self.heap = SymmetricHeap(topo.world_size)
        self.clock = Fraction(0)
        self._events = []
        self._seq = itertools.count()
        self._link_free = {}
        self._last_arrival = {}
        self._waiters = defaultdict(list)
        self._live = set()
        self.trace = []
        self.issued_bytes = 0
        self.delivered_bytes = 0
        self.puts_issued = [0] * topo.world_size
        self.signals_issued = 0

    def now(self):
        return self.clock

    def _link(self, tier: Tier):
        p = self.params
        if tier is Tier.INTRA:
            return p.alpha_intra, p.beta_intra
        return p.alpha_inter, p.beta_inter

    def _schedule(self, time, fn, *args):
        heapq.heappush(self._events, (time, next(self._seq), fn, args))

    # -- transport primitives -------------------------------------------------

    def issue_put(self, src, dst, region, offset, data, tier, signal):
        alpha, beta = self._link(tier)
        pair = (src, dst)
        start = max(self.clock, self._link_free.get(pair, self.clock))
        tx_done = start + transfer_time(data.size, beta)
        self._link_free[pair] = tx_done
        arrival = max(tx_done + alpha, self._last_arrival.get(pair, tx_done))
        self._last_arrival[pair] = arrival
        self.issued_bytes += data.size
        self.puts_issued[src] += 1
        handle = next(self._seq)
        self._schedule(arrival, self._deliver, src, dst, region, offset, data, signal)
        return handle

    def issue_signal(self, src, dst, region, slot, value):
        pair = (src, dst)
        arrival = max(self.clock + self.signal_latency, self._last_arrival.get(pair, self.clock))
        self._last_arrival[pair] = arrival
        self.signals_issued += 1
        self._schedule(arrival, self._apply_signal, dst, region, slot, value)

    def snapshot(self, gid, name):
        return self.heap.memory(gid, name).copy()

    def _store_counter(self, dst, region, slot, value):
        buf = self.heap.memory(dst, region)
        start = slot * COUNTER_BYTES
        buf[start:start + COUNTER_BYTES] = memoryview(
            (int(value) & 0xFFFFFFFF).to_bytes(COUNTER_BYTES, "little"))

    def _deliver(self, src, dst, region, offset, data, signal):
        if data.size:
            self.heap.memory(dst, region)[offset:offset + data.size] = data
        self.delivered_bytes += data.size
        self.trace.append(Delivery(self.clock, src, dst, region, offset, int(data.size)))
        self._wake(dst, region)
        if signal is not None:
            sregion, slot, value = signal
            self._store_counter(dst, sregion, slot, value)
            self._wake(dst, sregion)

    def _apply_signal(self, dst, region, slot, value):
        self._store_counter(dst, region, slot, value)
        self._wake(dst, region)

    def _wake(self, gid, region):
        waiting = self._waiters.get((gid, region))
        if not waiting:
            return
        still = []
        for task in waiting:
            if is_satisfied(self.heap, gid, task.waiting):
                task.waiting = None
                self._schedule(self.clock, self._step, task, None)
            else:
                still.append(task)
        self._waiters[(gid, region)] = still

    # -- cooperative scheduling -----------------------------------------------

    def _step(self, task, value):
        while True:
            try:
                op = task.gen.send(value)
            except StopIteration as stop:
                self._finish(task, stop.value)
                return
            except ProtocolFault as fault:
                if fault.rank is None:
                    fault.rank = rank_of(self.topo, task.gid)
                raise
            value = None
            if isinstance(op, (WaitFlags, WaitCounter)):
                if is_satisfied(self.heap, task.gid, op):
                    continue
                task.waiting = op
                self._waiters[(task.gid, op.region)].append(task)
                return
            if isinstance(op, Join):
                if not op.tasks:
                    value = []
                    continue
                task.pending = len(op.tasks)
                task.results = [None] * len(op.tasks)
                for i, gen in enumerate(op.tasks):
                    child = _Task(gen, task.gid, f"{task.name}/{i}", task, i)
                    self._live.add(child)
                    self._schedule(self.clock, self._step, child, None)
                return
            if isinstance(op, Compute):
                self._schedule(self.clock + exact(op.seconds), self._step, task, None)
                return
            raise ProtocolFault(f"rank program yielded unsupported operation {op!r}",
                                rank_of(self.topo, task.gid))

    def _finish(self, task, result):
        self._live.discard(task)
        parent = task.parent
        if parent is None:
            self.results[task.gid] = result
            self.finish_times[task.gid] = self.clock
            return
        parent.results[task.index] = result
        parent.pending -= 1
        if parent.pending == 0:
            results, parent.results = parent.results, None
            self._schedule(self.clock, self._step, parent, results)

    def run(self, gens):
        """Drive one generator per global rank to completion."""
        n = self.topo.world_size
        self.results = [None] * n
        self.finish_times = [None] * n
        for gid, gen in enumerate(gens):
            task = _Task(gen, gid, "main")
            self._live.add(task)
            self._schedule(self.clock, self._step, task, None)
        while self._events:
            time, _, fn, args = heapq.heappop(self._events)
            self.clock = time
            fn(*args)
        if self._live:
            blocked = sorted(
                (BlockedTask(rank_of(self.topo, t.gid), t.name, t.waiting)
                 for t in self._live if t.waiting is not None),
                key=lambda b: (b.rank, b.task),
            )
            raise DeadlockError(
                f"deadlock at t={float(self.clock) * 1e6:.3f} us: event queue empty "
                f"with {len(blocked)} blocked task(s)", blocked)
        return self.results, self.finish_times
