"""Workload traces, request records, and synthetic stream generation.

Traces carry token counts, never text; tokenization happens upstream. Two
trace kinds are supported:

* conversation: per turn, the new query is computed while the prefix of
  all earlier queries and responses is assumed cached, so the cached count
  for turn i is the running sum of query + response tokens of turns < i.
* document: the whole document is cached and each question is computed.

Trace files and stream files are JSON Lines, one object per line (see the
``read_*``/``write_*`` helpers for the schemas). Synthetic streams draw
cached and prefill token counts independently from log-normal profiles and
arrive as a Poisson process; generation is deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import WorkloadError

PERCENTILES = (10, 50, 90, 95, 99)


@dataclass(frozen=True)
class ConversationTurn:
    query_tokens: int
    response_tokens: int

    def __post_init__(self) -> None:
        if self.query_tokens < 1:
            raise WorkloadError("query_tokens must be >= 1")
        if self.response_tokens < 0:
            raise WorkloadError("response_tokens must be >= 0")


@dataclass(frozen=True)
class ConversationTrace:
    conversation_id: str
    turns: tuple[ConversationTurn, ...]

    def __post_init__(self) -> None:
        if not self.turns:
            raise WorkloadError(f"conversation '{self.conversation_id}' has no turns")


@dataclass(frozen=True)
class DocumentTrace:
    doc_id: str
    doc_tokens: int
    question_tokens: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.doc_tokens < 1:
            raise WorkloadError(f"document '{self.doc_id}': doc_tokens must be >= 1")
        for q in self.question_tokens:
            if q < 1:
                raise WorkloadError(f"document '{self.doc_id}': question tokens must be >= 1")


@dataclass
class RequestRecord:
    """One prefill request: K cached tokens, T new tokens, optional arrival."""

    source_id: str
    cached_tokens: int
    prefill_tokens: int
    arrival_time: Optional[float] = None

    def __post_init__(self) -> None:
        if self.cached_tokens < 0:
            raise WorkloadError(f"request '{self.source_id}': cached_tokens must be >= 0")
        if self.prefill_tokens < 1:
            raise WorkloadError(f"request '{self.source_id}': prefill_tokens must be >= 1")

    @property
    def kappa_ratio(self) -> float:
        return self.cached_tokens / self.prefill_tokens


@dataclass(frozen=True)
class FieldStats:
    mean: float
    minimum: float
    maximum: float
    percentiles: dict[int, float]


@dataclass(frozen=True)
class DistributionSummary:
    count: int
    prefill_tokens: FieldStats
    cached_tokens: FieldStats
    kappa_ratio: FieldStats


def expand_conversation(trace: ConversationTrace) -> list[RequestRecord]:
    """One record per turn: T is the turn's query, K the accumulated history."""
    records = []
    cached = 0
    for i, turn in enumerate(trace.turns, start=1):
        records.append(
            RequestRecord(
                source_id=f"{trace.conversation_id}/turn{i}",
                cached_tokens=cached,
                prefill_tokens=turn.query_tokens,
            )
        )
        cached += turn.query_tokens + turn.response_tokens
    return records


def expand_document(trace: DocumentTrace) -> list[RequestRecord]:
    """One record per question, all sharing the document as cached context."""
    return [
        RequestRecord(
            source_id=f"{trace.doc_id}/q{i}",
            cached_tokens=trace.doc_tokens,
            prefill_tokens=q,
        )
        for i, q in enumerate(trace.question_tokens, start=1)
    ]


def nearest_rank_percentile(sorted_values: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile: value at rank ceil(pct/100 * n), 1-indexed."""
    n = len(sorted_values)
    if n == 0:
        raise WorkloadError("cannot take percentile of empty data")
    rank = max(1, math.ceil(pct / 100.0 * n))
    return sorted_values[min(rank, n) - 1]


def _field_stats(values: list[float]) -> FieldStats:
    ordered = sorted(values)
    return FieldStats(
        mean=sum(ordered) / len(ordered),
        minimum=ordered[0],
        maximum=ordered[-1],
        percentiles={p: nearest_rank_percentile(ordered, p) for p in PERCENTILES},
    )


def summarize(records: Sequence[RequestRecord]) -> DistributionSummary:
    """Exact order statistics of T, K, and K/T over a record set."""
    if not records:
        raise WorkloadError("cannot summarize an empty record set")
    return DistributionSummary(
        count=len(records),
        prefill_tokens=_field_stats([float(r.prefill_tokens) for r in records]),
        cached_tokens=_field_stats([float(r.cached_tokens) for r in records]),
        kappa_ratio=_field_stats([r.kappa_ratio for r in records]),
    )


@dataclass(frozen=True)
class StreamProfile:
    """Independent log-normal draws for prefill (T) and cached (K) token counts.

    Parameters are the mean and sigma of the underlying normal; sampled
    values are rounded and clamped to at least one token.
    """

    name: str
    prefill_log_mean: float
    prefill_log_sigma: float
    cached_log_mean: float
    cached_log_sigma: float
    description: str = ""

    def __post_init__(self) -> None:
        for label, sigma in (
            ("prefill_log_sigma", self.prefill_log_sigma),
            ("cached_log_sigma", self.cached_log_sigma),
        ):
            if not math.isfinite(sigma) or sigma <= 0:
                raise WorkloadError(f"profile '{self.name}': {label} must be finite and > 0")
        for label, mu in (
            ("prefill_log_mean", self.prefill_log_mean),
            ("cached_log_mean", self.cached_log_mean),
        ):
            if not math.isfinite(mu):
                raise WorkloadError(f"profile '{self.name}': {label} must be finite")

    @property
    def mean_prefill_tokens(self) -> float:
        return math.exp(self.prefill_log_mean + self.prefill_log_sigma**2 / 2)

    @property
    def mean_cached_tokens(self) -> float:
        return math.exp(self.cached_log_mean + self.cached_log_sigma**2 / 2)

    @property
    def median_kappa_ratio(self) -> float:
        return math.exp(self.cached_log_mean - self.prefill_log_mean)


# Multi-turn chat style traffic: short prompts against a few thousand tokens
# of accumulated history. Parameters pin mean T = 82, mean K = 11115, and
# median K/T = 100; the implied medians are T ~ 40 and K ~ 4000.
SHAREGPT_LIKE = StreamProfile(
    name="sharegpt-like",
    prefill_log_mean=3.686719,
    prefill_log_sigma=1.2,
    cached_log_mean=8.291889,
    cached_log_sigma=1.431263,
    description="multi-turn conversation traffic (mean T=82, mean K=11115, median ratio=100)",
)

# Book/script question answering: median document ~57k tokens, mean question
# 12 tokens, 95th percentile question length just under 20, median ratio 5000.
NARRATIVEQA_LIKE = StreamProfile(
    name="narrativeqa-like",
    prefill_log_mean=2.433614,
    prefill_log_sigma=0.320290,
    cached_log_mean=10.950807,
    cached_log_sigma=0.94,
    description="narrative document QA traffic (median doc=57k, mean question=12, median ratio=5000)",
)

# Financial filings QA: median document ~167k tokens, mean question 23 tokens,
# median ratio 10000.
FINQA_LIKE = StreamProfile(
    name="finqa-like",
    prefill_log_mean=2.815409,
    prefill_log_sigma=0.800106,
    cached_log_mean=12.025749,
    cached_log_sigma=0.77,
    description="financial document QA traffic (median doc=167k, mean question=23, median ratio=10000)",
)

PROFILES = {p.name: p for p in (SHAREGPT_LIKE, NARRATIVEQA_LIKE, FINQA_LIKE)}
# Short aliases accepted by the CLI.
PROFILE_ALIASES = {
    "sharegpt": SHAREGPT_LIKE,
    "narrativeqa": NARRATIVEQA_LIKE,
    "finqa": FINQA_LIKE,
    **PROFILES,
}


def synthesize_stream(
    profile: StreamProfile,
    rps: float,
    duration_s: float,
    seed: int,
) -> list[RequestRecord]:
    """Poisson arrivals at the given rate with token counts from the profile.

    Deterministic for a fixed seed: identical arguments reproduce the exact
    same records.
    """
    if not rps > 0:
        raise WorkloadError("rps must be > 0")
    if not duration_s > 0:
        raise WorkloadError("duration_s must be > 0")
    rng = np.random.default_rng(seed)
    arrivals: list[float] = []
    t = 0.0
    block = max(256, int(rps * duration_s * 1.2) + 1)
    while t <= duration_s:
        gaps = rng.exponential(1.0 / rps, size=block)
        for g in gaps:
            t += g
            if t > duration_s:
                break
            arrivals.append(t)
    n = len(arrivals)
    prefill = rng.lognormal(profile.prefill_log_mean, profile.prefill_log_sigma, size=n)
    cached = rng.lognormal(profile.cached_log_mean, profile.cached_log_sigma, size=n)
    prefill_tokens = np.maximum(1, np.rint(prefill)).astype(int)
    cached_tokens = np.maximum(1, np.rint(cached)).astype(int)
    return [
        RequestRecord(
            source_id=f"{profile.name}-{i:06d}",
            cached_tokens=int(cached_tokens[i]),
            prefill_tokens=int(prefill_tokens[i]),
            arrival_time=float(arrivals[i]),
        )
        for i in range(n)
    ]


# --- JSON Lines readers/writers -------------------------------------------

def _parse_line(line: str, lineno: int, path: str):
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise WorkloadError(f"{path}: line {lineno}: invalid JSON: {exc.msg}") from exc


def read_conversations(path: str | Path) -> list[ConversationTrace]:
    traces = []
    for lineno, line in enumerate(_iter_lines(path), start=1):
        obj = _parse_line(line, lineno, str(path))
        try:
            turns = tuple(
                ConversationTurn(
                    query_tokens=int(t["query_tokens"]),
                    response_tokens=int(t.get("response_tokens", 0)),
                )
                for t in obj["turns"]
            )
            traces.append(ConversationTrace(conversation_id=str(obj["conversation_id"]), turns=turns))
        except (KeyError, TypeError) as exc:
            raise WorkloadError(f"{path}: line {lineno}: bad conversation object: {exc}") from exc
        except WorkloadError as exc:
            raise WorkloadError(f"{path}: line {lineno}: {exc}") from exc
    return traces


def read_documents(path: str | Path) -> list[DocumentTrace]:
    traces = []
    for lineno, line in enumerate(_iter_lines(path), start=1):
        obj = _parse_line(line, lineno, str(path))
        try:
            traces.append(
                DocumentTrace(
                    doc_id=str(obj["doc_id"]),
                    doc_tokens=int(obj["doc_tokens"]),
                    question_tokens=tuple(int(q) for q in obj["question_tokens"]),
                )
            )
        except (KeyError, TypeError) as exc:
            raise WorkloadError(f"{path}: line {lineno}: bad document object: {exc}") from exc
        except WorkloadError as exc:
            raise WorkloadError(f"{path}: line {lineno}: {exc}") from exc
    return traces


def _iter_lines(path: str | Path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise WorkloadError(f"cannot read '{path}': {exc}") from exc
    for line in text.splitlines():
        if line.strip():
            yield line


def record_to_dict(record: RequestRecord) -> dict:
    out = {
        "source_id": record.source_id,
        "cached_tokens": record.cached_tokens,
        "prefill_tokens": record.prefill_tokens,
        "kappa_ratio": record.kappa_ratio,
    }
    if record.arrival_time is not None:
        out["arrival_time"] = record.arrival_time
    return out


def write_stream(records: Iterable[RequestRecord], path: str | Path, manifest: Optional[dict] = None) -> None:
    """Write records as JSON Lines; an optional manifest goes on line one."""
    with open(path, "w") as fh:
        if manifest is not None:
            fh.write(json.dumps({"_manifest": manifest}, sort_keys=True) + "\n")
        for r in records:
            fh.write(json.dumps(record_to_dict(r), sort_keys=True) + "\n")


def read_stream(path: str | Path) -> list[RequestRecord]:
    """Read a JSON Lines stream file, skipping any manifest line."""
    records = []
    for lineno, line in enumerate(_iter_lines(path), start=1):
        obj = _parse_line(line, lineno, str(path))
        if "_manifest" in obj:
            continue
        try:
            records.append(
                RequestRecord(
                    source_id=str(obj["source_id"]),
                    cached_tokens=int(obj["cached_tokens"]),
                    prefill_tokens=int(obj["prefill_tokens"]),
                    arrival_time=(
                        float(obj["arrival_time"]) if obj.get("arrival_time") is not None else None
                    ),
                )
            )
        except (KeyError, TypeError) as exc:
            raise WorkloadError(f"{path}: line {lineno}: bad request record: {exc}") from exc
    return records
