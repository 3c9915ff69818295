"""Concurrent transport: one OS thread per rank (and per sub-task).

Remote writes land in the destination rank's memory under that rank's
condition lock, so a waiter that observes a flag also observes the whole
message carrying it.  An optional delay injector holds every message for a
seeded uniform ``[0, max_delay]`` seconds on a single delivery thread while
keeping per-pair FIFO order.
"""

from __future__ import annotations

import heapq
import itertools
import random
import threading
import time

from ..errors import DeadlockError, ProtocolFault
from .core import (COUNTER_BYTES, BlockedTask, Compute, Delivery, Join, RankContext,
                   SymmetricHeap, WaitCounter, WaitFlags, is_satisfied, rank_of)


class _Aborted(Exception):
    def __init__(self, blocked=None):
        super().__init__("aborted")
        self.blocked = blocked


class ThreadedTransport:
    def __init__(self, topo, max_delay: float = 0.0, seed: int = 0, timeout: float = 5.0):
        self.topo = topo
        self.max_delay = float(max_delay)
        self.timeout = float(timeout)
        self.heap = SymmetricHeap(topo.world_size)
        self._conds = [threading.Condition() for _ in range(topo.world_size)]
        self._rng = random.Random(seed)
        self._sched = threading.Condition()
        self._pending = []
        self._seq = itertools.count()
        self._pair_due = {}
        self._abort = threading.Event()
        self._closing = False
        self._stats_lock = threading.Lock()
        self.trace = []
        self.issued_bytes = 0
        self.delivered_bytes = 0
        self.puts_issued = [0] * topo.world_size
        self.signals_issued = 0
        self._t0 = time.monotonic()

    def now(self):
        return time.monotonic() - self._t0

    # -- memory ---------------------------------------------------------------

    def _memory(self, gid, name):
        return self.heap.memory(gid, name)

    def snapshot(self, gid, name):
        with self._conds[gid]:
            return self._memory(gid, name).copy()

    # -- issue / delivery -----------------------------------------------------

    def issue_put(self, src, dst, region, offset, data, tier, signal):
        with self._stats_lock:
            self.issued_bytes += data.size
            self.puts_issued[src] += 1
        self._enqueue(src, dst, ("put", src, dst, region, offset, data, signal))
        return 0

    def issue_signal(self, src, dst, region, slot, value):
        with self._stats_lock:
            self.signals_issued += 1
        self._enqueue(src, dst, ("signal", src, dst, region, slot, value))

    def _enqueue(self, src, dst, msg):
        if self.max_delay <= 0:
            self._apply(msg)
            return
        with self._sched:
            now = time.monotonic()
            due = max(now + self._rng.uniform(0.0, self.max_delay),
                      self._pair_due.get((src, dst), now))
            self._pair_due[(src, dst)] = due
            heapq.heappush(self._pending, (due, next(self._seq), msg))
            self._sched.notify()

    def _delivery_loop(self):
        with self._sched:
            while True:
                if not self._pending:
                    if self._closing:
                        return
                    self._sched.wait()
                    continue
                due, _, msg = self._pending[0]
                delay = due - time.monotonic()
                if delay > 0:
                    self._sched.wait(delay)
                    continue
                heapq.heappop(self._pending)
                self._apply(msg)

    def _apply(self, msg):
        kind, src, dst = msg[0], msg[1], msg[2]
        cond = self._conds[dst]
        with cond:
            if kind == "put":
                _, _, _, region, offset, data, signal = msg
                if data.size:
                    self._memory(dst, region)[offset:offset + data.size] = data
                if signal is not None:
                    self._store_counter(dst, *signal)
                with self._stats_lock:
                    self.delivered_bytes += data.size
                    self.trace.append(Delivery(self.now(), src, dst, region, offset, int(data.size)))
            else:
                _, _, _, region, slot, value = msg
                self._store_counter(dst, region, slot, value)
            cond.notify_all()

    def _store_counter(self, dst, region, slot, value):
        buf = self._memory(dst, region)
        start = slot * COUNTER_BYTES
        buf[start:start + COUNTER_BYTES] = memoryview(
            (int(value) & 0xFFFFFFFF).to_bytes(COUNTER_BYTES, "little"))

    # -- execution ------------------------------------------------------------

    def _wait(self, gid, name, op):
        cond = self._conds[gid]
        deadline = time.monotonic() + self.timeout
        with cond:
            while True:
                if is_satisfied(self.heap, gid, op):
                    return
                blocked = BlockedTask(rank_of(self.topo, gid), name, op)
                if self._abort.is_set():
                    raise _Aborted(blocked)
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise DeadlockError(
                        f"no progress within {self.timeout:.3f} s timeout", [blocked])
                cond.wait(min(remaining, 0.05))

    def _drive(self, gen, gid, name):
        value = None
        while True:
            if self._abort.is_set():
                raise _Aborted()
            try:
                op = gen.send(value)
            except StopIteration as stop:
                return stop.value
            except ProtocolFault as fault:
                if fault.rank is None:
                    fault.rank = rank_of(self.topo, gid)
                raise
            value = None
            if isinstance(op, (WaitFlags, WaitCounter)):
                self._wait(gid, name, op)
            elif isinstance(op, Join):
                value = self._join(op.tasks, gid, name)
            elif isinstance(op, Compute):
                continue
            else:
                raise ProtocolFault(f"rank program yielded unsupported operation {op!r}",
                                    rank_of(self.topo, gid))

    def _join(self, gens, gid, name):
        gens = list(gens)
        results = [None] * len(gens)
        errors = []

        def work(i, g):
            try:
                results[i] = self._drive(g, gid, f"{name}/{i}")
            except BaseException as exc:  # re-raised in the joining thread
                errors.append(exc)
                self._signal_abort(exc)

        threads = [threading.Thread(target=work, args=(i, g), daemon=True)
                   for i, g in enumerate(gens)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if errors:
            raise _pick_error(errors)
        return results

    def _signal_abort(self, exc):
        if isinstance(exc, _Aborted):
            return
        self._abort.set()
        for cond in self._conds:
            with cond:
                cond.notify_all()

    def run(self, gens):
        n = self.topo.world_size
        results = [None] * n
        finish = [None] * n
        errors = []
        lock = threading.Lock()

        def work(gid, gen):
            try:
                results[gid] = self._drive(gen, gid, "main")
                finish[gid] = self.now()
            except BaseException as exc:
                with lock:
                    errors.append(exc)
                self._signal_abort(exc)

        deliverer = None
        if self.max_delay > 0:
            deliverer = threading.Thread(target=self._delivery_loop, daemon=True)
            deliverer.start()
        threads = [threading.Thread(target=work, args=(gid, gen), daemon=True)
                   for gid, gen in enumerate(gens)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if deliverer is not None:
            with self._sched:
                self._closing = True
                self._sched.notify()
            deliverer.join()
        if errors:
            raise _pick_error(errors)
        return results, finish


def _collect_blocked(errors):
    blocked = []
    for exc in errors:
        if isinstance(exc, DeadlockError):
            blocked.extend(exc.blocked)
        elif isinstance(exc, _Aborted) and exc.blocked is not None:
            blocked.append(exc.blocked)
    return sorted(set(blocked), key=lambda b: (b.rank, b.task))


def _pick_error(errors):
    """The root cause among per-thread failures; deadlocks are merged."""
    real = [e for e in errors if not isinstance(e, _Aborted)]
    if not real:
        return errors[0]
    if all(isinstance(e, DeadlockError) for e in real):
        return DeadlockError(str(real[0]).splitlines()[0], _collect_blocked(errors))
    for e in real:
        if not isinstance(e, DeadlockError):
            return e
    return real[0]
