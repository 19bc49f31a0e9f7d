"""Iteration-level prefill scheduler simulation with KV offloading.

The simulated system has three coupled resources:

* one host-to-device transfer channel, serving requests with cached tokens
  FIFO by arrival (transfer seconds = K * kv_bytes / bandwidth);
* a VRAM pool for KV caches: a request pins (K + T) * kv_bytes from the
  moment a scheduler iteration first admits it until its prefill finishes,
  at which point the bytes free immediately;
* the accelerator, which runs batched iterations: compute seconds =
  scheduled_tokens * flops_per_token / compute_throughput.

Event-loop semantics: arrivals enqueue (requests with no cached tokens are
ready immediately); at each iteration boundary the policy selects ready or
partially-run requests subject to the per-iteration token budget and free
VRAM; iteration boundaries are compute-synchronous, so transfers completing
mid-iteration mark requests ready for the next boundary. ``overlap_alpha``
throttles the channel while compute is active: 0 freezes transfers during
compute (fully serialized resources), 1 lets them proceed at full rate.
When nothing is schedulable, time skips to the next arrival or transfer
completion. Requests whose footprint exceeds the whole pool are rejected at
admission and reported.

VRAM is accounted in integer token-equivalents (K + T per request) so that
pool arithmetic is exact; byte figures in reports are scaled back through
kv_bytes_per_token.

The loop is single-threaded and deterministic: identical inputs produce
identical reports. Independent simulations may run concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .analytics import RequestShape
from .catalog import HardwareSpec, ModelSpec, flops_per_token, kv_bytes_per_token
from .errors import SimulationError
from .workload import RequestRecord, nearest_rank_percentile

ITERATION_CSV_COLUMNS = [
    "iter",
    "t_start",
    "t_end",
    "scheduled_tokens",
    "vram_used_bytes",
    "queue_depth",
    "busy",
]

REPORT_PERCENTILES = (50, 90, 99)


class RequestState(Enum):
    QUEUED = "queued"
    TRANSFERRING = "transferring"
    READY = "ready"
    RUNNING = "running"
    DONE = "done"
    REJECTED = "rejected"


@dataclass
class SimRequest:
    id: str
    arrival_time: float
    cached_tokens: int
    prefill_tokens: int
    order: int = 0
    state: RequestState = RequestState.QUEUED
    remaining_prefill: int = field(init=False)
    ready_time: Optional[float] = None
    ttft: Optional[float] = None

    def __post_init__(self) -> None:
        self.remaining_prefill = self.prefill_tokens

    @property
    def vram_tokens(self) -> int:
        return self.cached_tokens + self.prefill_tokens


@dataclass(frozen=True)
class AgingCredits:
    """Wait-time priority boost for the utilization-aware policy."""

    credit_per_second: float = 1.0
    credit_weight: float = 1.0


@dataclass(frozen=True)
class SimConfig:
    model: ModelSpec
    hardware: HardwareSpec
    bandwidth_mode: str = "sustained"  # "peak" | "sustained"
    token_budget: int = 4000
    overlap_alpha: float = 0.0
    allow_chunked_prefill: bool = True
    idle_watts: Optional[float] = None
    peak_watts: Optional[float] = None

    def __post_init__(self) -> None:
        if self.bandwidth_mode not in ("peak", "sustained"):
            raise SimulationError(f"bandwidth_mode must be 'peak' or 'sustained', got {self.bandwidth_mode!r}")
        if self.token_budget < 1:
            raise SimulationError("token_budget must be >= 1")
        if not 0.0 <= self.overlap_alpha <= 1.0:
            raise SimulationError("overlap_alpha must be in [0, 1]")
        if (
            self.idle_watts is not None
            and self.peak_watts is not None
            and self.peak_watts < self.idle_watts
        ):
            raise SimulationError("peak_watts must be >= idle_watts")


@dataclass(frozen=True)
class IterationStats:
    index: int
    t_start: float
    t_end: float
    scheduled_tokens: int
    vram_used: float  # bytes held during the iteration
    busy: bool
    queue_depth: int  # requests known but not yet running at the boundary


@dataclass(frozen=True)
class RejectedRequest:
    id: str
    vram_bytes: float


@dataclass
class SimReport:
    iterations: list[IterationStats]
    request_ttft: dict[str, float]
    rejected: list[RejectedRequest]
    mean_scheduled_tokens: float
    scheduled_token_percentiles: dict[int, float]
    compute_busy_fraction: float
    transfer_busy_fraction: float
    simulated_seconds: float
    completed: int
    mean_power_watts: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "completed": self.completed,
            "rejected": [{"id": r.id, "vram_bytes": r.vram_bytes} for r in self.rejected],
            "iterations": len(self.iterations),
            "mean_scheduled_tokens": self.mean_scheduled_tokens,
            "scheduled_token_percentiles": {
                str(k): v for k, v in sorted(self.scheduled_token_percentiles.items())
            },
            "compute_busy_fraction": self.compute_busy_fraction,
            "transfer_busy_fraction": self.transfer_busy_fraction,
            "simulated_seconds": self.simulated_seconds,
            "mean_power_watts": self.mean_power_watts,
            "request_ttft": dict(sorted(self.request_ttft.items())),
        }

    def iteration_rows(self) -> list[list]:
        return [
            [
                s.index,
                repr(s.t_start),
                repr(s.t_end),
                s.scheduled_tokens,
                repr(s.vram_used),
                s.queue_depth,
                int(s.busy),
            ]
            for s in self.iterations
        ]


@dataclass(frozen=True)
class ScheduleCandidate:
    """What a policy sees about one schedulable request at a boundary.

    ``resident`` requests already hold their VRAM (mid-prefill leftovers);
    admitting a non-resident costs ``vram_tokens`` from the free pool.
    """

    request: SimRequest
    remaining: int
    vram_tokens: int
    resident: bool
    wait_seconds: float

    @property
    def arrival_key(self) -> tuple[float, int]:
        return (self.request.arrival_time, self.request.order)


Selection = list[tuple[SimRequest, int]]


def schedule_fifo(
    queue: Sequence[ScheduleCandidate],
    token_budget: int,
    vram_free_tokens: float,
    allow_chunking: bool = True,
) -> Selection:
    """Arrival-order admission with head-of-line blocking.

    Partially-run residents continue first (they already hold VRAM); then
    ready requests are admitted in arrival order until the budget or the
    pool blocks. Only the last admitted request may be chunked, and a
    request that does not fit VRAM stops the scan rather than being
    skipped.
    """
    picks: Selection = []
    budget = token_budget
    for cand in sorted((c for c in queue if c.resident), key=lambda c: c.arrival_key):
        if budget <= 0:
            return picks
        n = min(cand.remaining, budget)
        if n < cand.remaining and not allow_chunking:
            return picks
        picks.append((cand.request, n))
        budget -= n
    free = vram_free_tokens
    for cand in sorted((c for c in queue if not c.resident), key=lambda c: c.arrival_key):
        if budget <= 0:
            break
        if cand.vram_tokens > free:
            break
        if cand.remaining <= budget:
            n = cand.remaining
        elif allow_chunking:
            n = budget
        else:
            break
        picks.append((cand.request, n))
        free -= cand.vram_tokens
        budget -= n
        if n < cand.remaining:
            break
    return picks


def _credit(cand: ScheduleCandidate, aging: AgingCredits) -> float:
    return cand.wait_seconds * aging.credit_per_second * aging.credit_weight


def _best_subset_fill(
    cands: list[ScheduleCandidate],
    budget: int,
    vram_free: float,
    allow_chunking: bool,
) -> Selection:
    """Exhaustive token-maximizing selection over a small candidate list.

    Enumerates whole-request subsets within budget and VRAM, optionally
    topping up the leftover budget by chunking one more request. Ties are
    broken toward the earliest-arriving selection.
    """
    n = len(cands)
    tokens = [c.remaining for c in cands]
    vram = [c.vram_tokens for c in cands]
    order = {i: cands[i].arrival_key for i in range(n)}
    best_key = None
    best_pick: Selection = []
    for mask in range(1 << n):
        tok = 0
        vr = 0
        members = []
        ok = True
        for i in range(n):
            if mask >> i & 1:
                tok += tokens[i]
                vr += vram[i]
                if tok > budget or vr > vram_free:
                    ok = False
                    break
                members.append(i)
        if not ok:
            continue
        chunk: Optional[tuple[int, int]] = None
        if allow_chunking and tok < budget:
            leftover = budget - tok
            best_gain = 0
            for i in range(n):
                if mask >> i & 1:
                    continue
                if vr + vram[i] > vram_free:
                    continue
                gain = min(leftover, tokens[i])
                if gain > best_gain or (gain == best_gain and chunk and order[i] < order[chunk[0]]):
                    best_gain = gain
                    chunk = (i, gain)
            if chunk and chunk[1] == 0:
                chunk = None
        total = tok + (chunk[1] if chunk else 0)
        ranks = tuple(sorted([order[i] for i in members] + ([order[chunk[0]]] if chunk else [])))
        key = (-total, ranks)
        if best_key is None or key < best_key:
            best_key = key
            picked = [(cands[i].request, tokens[i]) for i in members]
            if chunk:
                picked.append((cands[chunk[0]].request, chunk[1]))
            best_pick = picked
    return best_pick


def schedule_utilization_aware(
    queue: Sequence[ScheduleCandidate],
    token_budget: int,
    vram_free_tokens: float,
    aging: AgingCredits = AgingCredits(),
    allow_chunking: bool = True,
    exact_search_limit: int = 12,
) -> Selection:
    """Token-budget-maximizing admission with aging credits.

    Residents continue first. Candidates carrying a positive aging credit
    are admitted whole in credit order (ties by arrival) while they fit.
    Whatever budget remains is packed with the remaining candidates: an
    exhaustive search when few are left, otherwise greedy largest-first,
    finally chunking one more request into any leftover budget.
    """
    picks: Selection = []
    budget = token_budget
    free = vram_free_tokens
    for cand in sorted((c for c in queue if c.resident), key=lambda c: c.arrival_key):
        if budget <= 0:
            return picks
        n = min(cand.remaining, budget)
        if n < cand.remaining and not allow_chunking:
            return picks
        picks.append((cand.request, n))
        budget -= n
    pending = [c for c in queue if not c.resident and c.remaining > 0]
    credited = [c for c in pending if _credit(c, aging) > 0]
    credited.sort(key=lambda c: (-_credit(c, aging),) + c.arrival_key)
    admitted: set[int] = set()
    for cand in credited:
        if cand.remaining <= budget and cand.vram_tokens <= free:
            picks.append((cand.request, cand.remaining))
            budget -= cand.remaining
            free -= cand.vram_tokens
            admitted.add(id(cand))
    rest = [c for c in pending if id(c) not in admitted]
    if budget > 0 and rest:
        if len(rest) <= exact_search_limit:
            fill = _best_subset_fill(rest, budget, free, allow_chunking)
            picks.extend(fill)
        else:
            taken: set[int] = set()
            for cand in sorted(rest, key=lambda c: (-c.remaining,) + c.arrival_key):
                if cand.remaining <= budget and cand.vram_tokens <= free:
                    picks.append((cand.request, cand.remaining))
                    budget -= cand.remaining
                    free -= cand.vram_tokens
                    taken.add(id(cand))
            if allow_chunking and budget > 0:
                for cand in sorted(rest, key=lambda c: c.arrival_key):
                    if id(cand) in taken:
                        continue
                    if cand.vram_tokens <= free:
                        picks.append((cand.request, min(budget, cand.remaining)))
                        break
    return picks


_POLICIES: dict[str, Callable] = {}


def _policy_fn(name: str, aging: AgingCredits, chunking: bool):
    if name == "fifo":
        return lambda cands, budget, free: schedule_fifo(cands, budget, free, chunking)
    if name in ("utilization", "utilization-aware", "ua"):
        return lambda cands, budget, free: schedule_utilization_aware(
            cands, budget, free, aging, chunking
        )
    raise SimulationError(f"unknown policy '{name}' (expected 'fifo' or 'utilization')")


def run_sim(
    config: SimConfig,
    requests: Sequence[RequestRecord],
    policy: str = "fifo",
    aging: AgingCredits = AgingCredits(),
) -> SimReport:
    """Replay a timed request stream through the scheduler.

    ``requests`` must be sorted by arrival time and carry arrival times.
    """
    select = _policy_fn(policy, aging, config.allow_chunked_prefill)
    model = config.model
    hw = config.hardware
    b_kv = kv_bytes_per_token(model)
    f_pf = flops_per_token(model)
    bw = hw.bandwidth(config.bandwidth_mode == "sustained")
    c_eff = hw.compute_throughput
    capacity_tokens = hw.vram_effective / b_kv
    alpha = config.overlap_alpha
    budget = config.token_budget

    sim_requests: list[SimRequest] = []
    prev = -math.inf
    for i, rec in enumerate(requests):
        if rec.arrival_time is None:
            raise SimulationError(f"request '{rec.source_id}' has no arrival_time")
        if rec.arrival_time < prev:
            raise SimulationError("requests must be sorted by arrival time")
        prev = rec.arrival_time
        sim_requests.append(
            SimRequest(
                id=rec.source_id,
                arrival_time=float(rec.arrival_time),
                cached_tokens=rec.cached_tokens,
                prefill_tokens=rec.prefill_tokens,
                order=i,
            )
        )

    rejected: list[RejectedRequest] = []
    accepted: list[SimRequest] = []
    for r in sim_requests:
        if r.vram_tokens > capacity_tokens:
            r.state = RequestState.REJECTED
            rejected.append(RejectedRequest(id=r.id, vram_bytes=r.vram_tokens * b_kv))
        else:
            accepted.append(r)

    iterations: list[IterationStats] = []
    ttfts: dict[str, float] = {}
    if not accepted:
        return SimReport(
            iterations=[],
            request_ttft={},
            rejected=rejected,
            mean_scheduled_tokens=0.0,
            scheduled_token_percentiles={p: 0.0 for p in REPORT_PERCENTILES},
            compute_busy_fraction=0.0,
            transfer_busy_fraction=0.0,
            simulated_seconds=0.0,
            completed=0,
            mean_power_watts=_maybe_power(config, 0.0),
        )

    pending = list(accepted)  # consumed front to back
    head = 0
    xwait: list[SimRequest] = []
    xhead = 0
    chan_req: Optional[SimRequest] = None
    chan_left = 0.0
    ready: list[SimRequest] = []
    partials: list[SimRequest] = []
    used_tokens = 0  # VRAM held, in token-equivalents
    t = accepted[0].arrival_time
    t_begin = t
    chan_active = 0.0
    compute_active = 0.0

    def ingest_arrivals(now: float) -> None:
        nonlocal head
        while head < len(pending) and pending[head].arrival_time <= now:
            r = pending[head]
            head += 1
            if r.cached_tokens == 0:
                r.state = RequestState.READY
                r.ready_time = r.arrival_time
                ready.append(r)
            else:
                xwait.append(r)

    def advance(until: float, rate: float) -> None:
        """Move time forward, progressing arrivals and the transfer channel.

        ``rate`` scales channel speed (0 freezes it, used while compute is
        active with overlap_alpha = 0).
        """
        nonlocal t, chan_req, chan_left, chan_active, xhead
        while True:
            ingest_arrivals(t)
            if chan_req is None and xhead < len(xwait):
                chan_req = xwait[xhead]
                xhead += 1
                chan_req.state = RequestState.TRANSFERRING
                chan_left = chan_req.cached_tokens * b_kv
            if chan_req is not None and rate > 0 and (math.isinf(bw) or chan_left <= 0.0):
                chan_req.state = RequestState.READY
                chan_req.ready_time = t
                ready.append(chan_req)
                chan_req = None
                chan_left = 0.0
                continue
            t_arr = pending[head].arrival_time if head < len(pending) else math.inf
            t_done = (
                t + chan_left / (bw * rate)
                if (chan_req is not None and rate > 0)
                else math.inf
            )
            nxt = min(until, t_arr, t_done)
            if nxt <= t:
                if nxt == t and (t_arr == t or t_done == t):
                    # zero-length step with an event exactly at t
                    if t_done == t and chan_req is not None:
                        chan_left = 0.0
                        continue
                    if t_arr == t:
                        ingest_arrivals(t)
                        continue
                break
            if chan_req is not None and rate > 0:
                if nxt == t_done:
                    chan_left = 0.0
                else:
                    chan_left -= (nxt - t) * bw * rate
                chan_active += nxt - t
            t = nxt
            if t >= until and t_arr > until and t_done > until:
                break

    while True:
        advance(t, 1.0)  # settle zero-time events at the boundary
        candidates: list[ScheduleCandidate] = []
        for r in partials:
            candidates.append(
                ScheduleCandidate(
                    request=r,
                    remaining=r.remaining_prefill,
                    vram_tokens=r.vram_tokens,
                    resident=True,
                    wait_seconds=t - r.arrival_time,
                )
            )
        for r in ready:
            candidates.append(
                ScheduleCandidate(
                    request=r,
                    remaining=r.remaining_prefill,
                    vram_tokens=r.vram_tokens,
                    resident=False,
                    wait_seconds=t - r.arrival_time,
                )
            )
        selection: Selection = []
        if candidates:
            selection = select(candidates, budget, capacity_tokens - used_tokens)
        if selection:
            depth = (
                len(ready)
                + (len(xwait) - xhead)
                + (1 if chan_req is not None else 0)
            )
            for r, _ in selection:
                if r.state is RequestState.READY:
                    r.state = RequestState.RUNNING
                    used_tokens += r.vram_tokens
            ready = [r for r in ready if r.state is RequestState.READY]
            sched = sum(n for _, n in selection)
            duration = sched * f_pf / c_eff
            t_start = t
            t_end = t + duration
            advance(t_end, alpha)
            t = t_end
            iterations.append(
                IterationStats(
                    index=len(iterations),
                    t_start=t_start,
                    t_end=t_end,
                    scheduled_tokens=sched,
                    vram_used=used_tokens * b_kv,
                    busy=True,
                    queue_depth=depth,
                )
            )
            compute_active += duration
            for r, n in selection:
                r.remaining_prefill -= n
                if r.remaining_prefill < 0:
                    raise SimulationError(f"policy over-scheduled request '{r.id}'")
                if r.remaining_prefill == 0:
                    r.state = RequestState.DONE
                    r.ttft = t_end - r.arrival_time
                    ttfts[r.id] = r.ttft
                    used_tokens -= r.vram_tokens
                    if r in partials:
                        partials.remove(r)
                elif r not in partials:
                    partials.append(r)
            continue
        # Nothing schedulable: jump to the next event, at full channel rate.
        t_arr = pending[head].arrival_time if head < len(pending) else math.inf
        t_done = (t + chan_left / bw) if chan_req is not None else math.inf
        nxt = min(t_arr, t_done)
        if math.isinf(nxt):
            break
        advance(nxt, 1.0)

    incomplete = [r for r in accepted if r.state is not RequestState.DONE]
    if incomplete:
        raise SimulationError(
            f"simulation ended with {len(incomplete)} unfinished request(s); "
            f"first: '{incomplete[0].id}' in state {incomplete[0].state.value}"
        )

    span = t - t_begin
    sched_values = sorted(float(s.scheduled_tokens) for s in iterations)
    mean_sched = sum(sched_values) / len(sched_values) if sched_values else 0.0
    percentiles = {
        p: (nearest_rank_percentile(sched_values, p) if sched_values else 0.0)
        for p in REPORT_PERCENTILES
    }
    compute_busy = compute_active / span if span > 0 else (1.0 if compute_active > 0 else 0.0)
    transfer_busy = chan_active / span if span > 0 else 0.0
    return SimReport(
        iterations=iterations,
        request_ttft=ttfts,
        rejected=rejected,
        mean_scheduled_tokens=mean_sched,
        scheduled_token_percentiles=percentiles,
        compute_busy_fraction=compute_busy,
        transfer_busy_fraction=transfer_busy,
        simulated_seconds=span,
        completed=len(ttfts),
        mean_power_watts=_maybe_power(config, compute_busy),
    )


def _maybe_power(config: SimConfig, busy_fraction: float) -> Optional[float]:
    if config.idle_watts is None or config.peak_watts is None:
        return None
    return config.idle_watts + (config.peak_watts - config.idle_watts) * busy_fraction


def power_proxy(report: SimReport, idle_watts: float, peak_watts: float) -> float:
    """Linear busy-fraction power estimate: idle + (peak - idle) * busy."""
    if peak_watts < idle_watts:
        raise ValueError("peak_watts must be >= idle_watts")
    return idle_watts + (peak_watts - idle_watts) * report.compute_busy_fraction


@dataclass
class PolicyComparison:
    """The same stream replayed under several policies."""

    reports: list[tuple[str, SimReport]]
    ttft_deltas: list[tuple[str, dict[str, float]]]  # vs. the first policy

    def iteration_counts(self) -> dict[str, int]:
        return {name: len(rep.iterations) for name, rep in self.reports}

    def to_dict(self) -> dict:
        return {
            "policies": [
                {
                    "policy": name,
                    "iterations": len(rep.iterations),
                    "mean_scheduled_tokens": rep.mean_scheduled_tokens,
                    "compute_busy_fraction": rep.compute_busy_fraction,
                    "mean_ttft": (
                        sum(rep.request_ttft.values()) / len(rep.request_ttft)
                        if rep.request_ttft
                        else 0.0
                    ),
                }
                for name, rep in self.reports
            ],
            "ttft_deltas_vs_first": [
                {"policy": name, "deltas": dict(sorted(d.items()))} for name, d in self.ttft_deltas
            ],
        }


def compare_policies(
    config: SimConfig,
    requests: Sequence[RequestRecord],
    policies: Sequence[str] = ("fifo", "utilization"),
    aging: AgingCredits = AgingCredits(),
) -> PolicyComparison:
    """Replay one stream under each policy and pair up the results."""
    if not policies:
        raise SimulationError("need at least one policy")
    reports = [(p, run_sim(config, requests, p, aging)) for p in policies]
    base = reports[0][1].request_ttft
    deltas = []
    for name, rep in reports[1:]:
        deltas.append(
            (name, {rid: rep.request_ttft[rid] - base[rid] for rid in rep.request_ttft if rid in base})
        )
    return PolicyComparison(reports=reports, ttft_deltas=deltas)
