"""Node B MAC-hs: buffer management policies, credit allocation, HARQ sender bank, Round Robin."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

from .messages import RT, CreditGrant, Pdu, TransportBlock

FIFO, TSP, ETSP = "FIFO", "TSP", "ETSP"


class MacHsQueue:
    """Per-user MAC-hs buffer.

    FIFO keeps one arrival-ordered list of capacity ``N``. TSP and ETSP keep
    RT PDUs ahead of NRT PDUs, admit at most ``R`` RT PDUs, and share the
    total capacity ``N`` between both classes.
    """

    def __init__(self, policy: str = TSP, R: int = 10, N: int = 150, L: int | None = None,
                 H: int | None = None):
        if policy not in (FIFO, TSP, ETSP):
            raise ValueError(f"unknown policy {policy!r}")
        if policy == ETSP:
            if L is None or H is None or not 0 < R <= L <= H <= N:
                raise ValueError("ETSP needs 0 < R <= L <= H <= N")
        elif policy == TSP and not 0 < R <= N:
            raise ValueError("TSP needs 0 < R <= N")
        self.policy = policy
        self.R, self.N, self.L, self.H = R, N, L, H
        self.fifo: deque[Pdu] = deque()
        self.rt_fifo: deque[Pdu] = deque()
        self.nrt_fifo: deque[Pdu] = deque()
        self.rt_count = 0
        self.nrt_count = 0
        self.drops = [0, 0]
        self.accepted = [0, 0]

    @property
    def total(self) -> int:
        return self.rt_count + self.nrt_count

    def __len__(self) -> int:
        return self.rt_count + self.nrt_count

    def enqueue(self, pdu: Pdu) -> bool:
        """Admit or tail-drop one PDU; True when accepted."""
        flow = pdu.flow
        total = self.rt_count + self.nrt_count
        if self.policy == FIFO:
            ok = total < self.N
            if ok:
                self.fifo.append(pdu)
        elif flow == RT:
            ok = self.rt_count < self.R and total < self.N
            if ok:
                self.rt_fifo.append(pdu)
        else:
            ok = total < self.N
            if ok:
                self.nrt_fifo.append(pdu)
        if ok:
            self.accepted[flow] += 1
            if flow == RT:
                self.rt_count += 1
            else:
                self.nrt_count += 1
        else:
            self.drops[flow] += 1
        return ok

    def dequeue_for_tti(self, max_pdus: int) -> list[Pdu]:
        out = []
        if max_pdus <= 0:
            return out
        if self.policy == FIFO:
            q = self.fifo
            while q and len(out) < max_pdus:
                out.append(q.popleft())
        else:
            q = self.rt_fifo
            while q and len(out) < max_pdus:
                out.append(q.popleft())
            q = self.nrt_fifo
            while q and len(out) < max_pdus:
                out.append(q.popleft())
        for p in out:
            if p.flow == RT:
                self.rt_count -= 1
            else:
                self.nrt_count -= 1
        return out

    def contents(self) -> list[Pdu]:
        if self.policy == FIFO:
            return list(self.fifo)
        return list(self.rt_fifo) + list(self.nrt_fifo)


def compute_rt_credits(lambda_rt: float, pdu_size: float, tti: float) -> float:
    """RT credits per TTI from the guaranteed bit rate."""
    if pdu_size <= 0 or tti <= 0 or lambda_rt < 0:
        raise ValueError("need pdu_size > 0, tti > 0, lambda_rt >= 0")
    return (lambda_rt / pdu_size) * tti


def compute_nrt_max(n_t: int, L: int, H: int, k: float, lambda_prime: float, pdu_size: float,
                    tti: float) -> float:
    """Upper bound on NRT credits per TTI given the total queue occupancy ``n_t``."""
    if n_t > H:
        return 0.0
    base = (lambda_prime / pdu_size) * tti
    if n_t < L:
        return base
    return k * base


def compute_nrt_credits(c_nrt_max: float, ubs_nrt: float) -> float:
    return min(c_nrt_max, ubs_nrt)


@dataclass
class RateEstimator:
    """Exponentially weighted estimate of the NRT rate the scheduler allocates to a user (bits/s)."""

    alpha: float = 0.7
    lambda_prime_nrt: float = 0.0
    last_instantaneous: float = 0.0


def ewma_update(est: RateEstimator, lambda_inst: float) -> RateEstimator:
    if lambda_inst < 0:
        raise ValueError("rate must be non-negative")
    est.lambda_prime_nrt = est.alpha * est.lambda_prime_nrt + (1.0 - est.alpha) * lambda_inst
    est.last_instantaneous = lambda_inst
    return est


class CreditAllocator:
    """Builds the per-TTI grant for a flow-controlled user and stamps its Iub latency."""

    def __init__(self, user: int, *, lambda_rt: float, pdu_size: int, tti_s: float, L: int, H: int,
                 k: float, alpha: float, lambda_seed: float, iub_delay_us: int):
        self.user = user
        self.lambda_rt = lambda_rt
        self.pdu_size = pdu_size
        self.tti_s = tti_s
        self.L, self.H, self.k = L, H, k
        self.estimator = RateEstimator(alpha, lambda_seed)
        self.iub_delay_us = iub_delay_us
        self.issued = 0

    def grant_for(self, n_t: int, ubs_nrt: int, now: int) -> CreditGrant:
        c_rt = compute_rt_credits(self.lambda_rt, self.pdu_size, self.tti_s)
        c_max = compute_nrt_max(n_t, self.L, self.H, self.k, self.estimator.lambda_prime_nrt,
                                self.pdu_size, self.tti_s)
        c_nrt = compute_nrt_credits(c_max, ubs_nrt)
        return CreditGrant(self.user, c_rt, c_nrt, now, now + self.iub_delay_us)

    def issue_grant(self, n_t: int, ubs_nrt: int, allocated_nrt_bits: int, now: int) -> CreditGrant:
        """Fold this TTI's allocated NRT bits into the estimate, then compose the grant."""
        ewma_update(self.estimator, allocated_nrt_bits / self.tti_s)
        self.issued += 1
        return self.grant_for(n_t, ubs_nrt, now)


class HarqState(enum.Enum):
    IDLE = "IDLE"
    WAITING = "WAITING"
    PENDING_RETX = "PENDING_RETX"


class HarqLogicError(RuntimeError):
    pass


class HarqProcess:
    __slots__ = ("pid", "state", "block")

    def __init__(self, pid: int):
        self.pid = pid
        self.state = HarqState.IDLE
        self.block: TransportBlock | None = None


class HarqSenderBank:
    """Stop-and-wait HARQ processes for one user."""

    def __init__(self, n_processes: int = 4, max_tx: int = 4):
        self.processes = [HarqProcess(i) for i in range(n_processes)]
        self.max_tx = max_tx
        self.n_pending_retx = 0

    def free_process(self) -> HarqProcess | None:
        for p in self.processes:
            if p.state is HarqState.IDLE:
                return p
        return None

    def has_free(self) -> bool:
        for p in self.processes:
            if p.state is HarqState.IDLE:
                return True
        return False

    def next_retx(self) -> HarqProcess | None:
        best = None
        for p in self.processes:
            if p.state is HarqState.PENDING_RETX and (best is None or p.block.tsn < best.block.tsn):
                best = p
        return best

    def load(self, proc: HarqProcess, block: TransportBlock) -> None:
        if proc.state is not HarqState.IDLE:
            raise HarqLogicError(f"process {proc.pid} is busy")
        proc.block = block
        proc.state = HarqState.WAITING
        block.tx_count = 1

    def retransmit(self, proc: HarqProcess) -> TransportBlock:
        if proc.state is not HarqState.PENDING_RETX:
            raise HarqLogicError(f"process {proc.pid} has nothing to retransmit")
        proc.state = HarqState.WAITING
        self.n_pending_retx -= 1
        proc.block.tx_count += 1
        return proc.block

    def on_feedback(self, pid: int, ack: bool) -> tuple[str, TransportBlock]:
        """Returns ``("acked" | "retx" | "dropped", block)``."""
        proc = self.processes[pid]
        if proc.state is not HarqState.WAITING:
            raise HarqLogicError(f"feedback for process {pid} in state {proc.state.value}")
        block = proc.block
        if ack:
            proc.state = HarqState.IDLE
            proc.block = None
            return "acked", block
        if block.tx_count < self.max_tx:
            proc.state = HarqState.PENDING_RETX
            self.n_pending_retx += 1
            return "retx", block
        proc.state = HarqState.IDLE
        proc.block = None
        return "dropped", block

    def blocks_in_flight(self) -> list[TransportBlock]:
        return [p.block for p in self.processes if p.block is not None]


def harq_on_feedback(bank: HarqSenderBank, process_id: int, ack: bool) -> tuple[str, TransportBlock]:
    return bank.on_feedback(process_id, ack)


class RoundRobin:
    """Cyclic scheduler serving one eligible user per TTI, resuming after the last served user."""

    def __init__(self, n_users: int):
        self.n_users = n_users
        self.last = n_users - 1
        self.served = [0] * n_users

    def select(self, eligible: Callable[[int], bool], on_skip: Callable[[int], None] | None = None) -> int | None:
        n = self.n_users
        for k in range(1, n + 1):
            u = (self.last + k) % n
            if eligible(u):
                self.last = u
                self.served[u] += 1
                return u
            if on_skip is not None:
                on_skip(u)
        return None


def rr_schedule(users: Sequence[int], backlogged: Callable[[int], bool], rr: RoundRobin) -> int | None:
    """Select the next user of ``users`` (indices into ``rr``) that ``backlogged`` accepts."""
    allowed = set(users)
    return rr.select(lambda u: u in allowed and backlogged(u))
