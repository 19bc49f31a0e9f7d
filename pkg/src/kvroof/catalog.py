"""Model and hardware catalog.

Defines the two specification records everything else consumes and derives
the per-token constants from them: KV-cache bytes per token and prefill
FLOPs per token. Catalog files are JSON documents with top-level "models"
and "hardware" arrays; all quantities are SI base units (bytes, bytes/s,
FLOP/s, watts). Display scaling such as KB/GFLOP happens only at the CLI.

All catalog data is immutable after load and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

from .errors import CatalogError

GQA = "GQA"
MLA = "MLA"

_DEFAULT_RESOURCE = "default_catalog.json"


@dataclass(frozen=True)
class ModelSpec:
    """Architecture parameters sufficient to derive KV bytes and FLOPs per token.

    GQA models must set ``kv_heads`` and ``head_dim`` and leave the MLA
    fields unset; MLA models must set ``kv_lora_rank`` and ``qk_rope_dim``
    and leave the GQA fields unset. ``precision_bytes`` may be fractional
    (0.5 for 4-bit storage) but must correspond to a whole number of bits.
    """

    name: str
    total_params: int
    active_params: int
    attention_kind: str
    layers: int
    kv_heads: Optional[int] = None
    head_dim: Optional[int] = None
    kv_lora_rank: Optional[int] = None
    qk_rope_dim: Optional[int] = None
    precision_bytes: float = 2.0

    def __post_init__(self) -> None:
        if not self.name:
            raise CatalogError("model name must be non-empty")
        if self.attention_kind not in (GQA, MLA):
            raise CatalogError(
                f"model '{self.name}': attention_kind must be 'GQA' or 'MLA', "
                f"got {self.attention_kind!r}"
            )
        for fname in ("total_params", "active_params", "layers"):
            value = getattr(self, fname)
            if not isinstance(value, int) or value <= 0:
                raise CatalogError(f"model '{self.name}': {fname} must be a positive integer")
        if self.active_params > self.total_params:
            raise CatalogError(
                f"model '{self.name}': active_params exceeds total_params"
            )
        bits = 8.0 * self.precision_bytes
        if self.precision_bytes <= 0 or abs(bits - round(bits)) > 1e-9 or round(bits) < 1:
            raise CatalogError(
                f"model '{self.name}': precision_bytes must map to a positive "
                f"whole number of bits, got {self.precision_bytes!r}"
            )
        if self.attention_kind == GQA:
            self._require_set("kv_heads", "head_dim")
            self._require_unset("kv_lora_rank", "qk_rope_dim")
        else:
            self._require_set("kv_lora_rank", "qk_rope_dim")
            self._require_unset("kv_heads", "head_dim")

    def _require_set(self, *names: str) -> None:
        for fname in names:
            value = getattr(self, fname)
            if value is None:
                raise CatalogError(
                    f"model '{self.name}': attention_kind {self.attention_kind} "
                    f"requires field '{fname}'"
                )
            if not isinstance(value, int) or value <= 0:
                raise CatalogError(f"model '{self.name}': {fname} must be a positive integer")

    def _require_unset(self, *names: str) -> None:
        for fname in names:
            if getattr(self, fname) is not None:
                raise CatalogError(
                    f"model '{self.name}': field '{fname}' does not apply to "
                    f"attention_kind {self.attention_kind}"
                )

    @property
    def precision_bits(self) -> int:
        return round(8 * self.precision_bytes)


@dataclass(frozen=True)
class HardwareSpec:
    """One accelerator platform: compute rate, host-device link, KV VRAM pool.

    ``link_bandwidth_sustained`` defaults to the peak figure when omitted;
    set it to a measured value to model effective rather than spec-sheet
    bandwidth.
    """

    name: str
    compute_throughput: float  # FLOP/s
    link_bandwidth_peak: float  # bytes/s, unidirectional host to device
    link_bandwidth_sustained: Optional[float] = None
    vram_effective: float = 0.0  # bytes available to KV after weights/activations
    tdp_watts: Optional[float] = None
    idle_watts: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise CatalogError("hardware name must be non-empty")
        if self.compute_throughput <= 0:
            raise CatalogError(f"hardware '{self.name}': compute_throughput must be > 0")
        if self.link_bandwidth_peak <= 0:
            raise CatalogError(f"hardware '{self.name}': link_bandwidth_peak must be > 0")
        if self.link_bandwidth_sustained is None:
            object.__setattr__(self, "link_bandwidth_sustained", self.link_bandwidth_peak)
        if not 0 < self.link_bandwidth_sustained <= self.link_bandwidth_peak:
            raise CatalogError(
                f"hardware '{self.name}': link_bandwidth_sustained must satisfy "
                f"0 < sustained <= peak"
            )
        if self.vram_effective <= 0:
            raise CatalogError(f"hardware '{self.name}': vram_effective must be > 0")
        if (
            self.tdp_watts is not None
            and self.idle_watts is not None
            and self.idle_watts > self.tdp_watts
        ):
            raise CatalogError(f"hardware '{self.name}': idle_watts exceeds tdp_watts")

    def bandwidth(self, use_sustained: bool = True) -> float:
        """Selected host-device bandwidth in bytes/s."""
        return self.link_bandwidth_sustained if use_sustained else self.link_bandwidth_peak


def kv_bytes_per_token(model: ModelSpec) -> float:
    """KV-cache footprint of one token, in bytes.

    GQA stores key and value vectors per KV head per layer; MLA stores one
    low-rank latent plus a rotary component per layer, so its footprint is
    layers * (kv_lora_rank + qk_rope_dim) * precision.
    """
    bits = model.precision_bits
    if model.attention_kind == GQA:
        return 2 * model.layers * model.kv_heads * model.head_dim * bits / 8
    return model.layers * (model.kv_lora_rank + model.qk_rope_dim) * bits / 8


def flops_per_token(model: ModelSpec) -> float:
    """FLOPs to prefill one token: two per active parameter."""
    return 2.0 * model.active_params


_MODEL_FIELDS = {f.name for f in fields(ModelSpec)}
_HW_FIELDS = {f.name for f in fields(HardwareSpec)}


def _build_model(entry: dict, where: str) -> ModelSpec:
    unknown = set(entry) - _MODEL_FIELDS
    if unknown:
        raise CatalogError(f"{where}: unknown model field(s) {sorted(unknown)}")
    try:
        return ModelSpec(**entry)
    except TypeError as exc:
        raise CatalogError(f"{where}: {exc}") from exc


def _build_hardware(entry: dict, where: str) -> HardwareSpec:
    unknown = set(entry) - _HW_FIELDS
    if unknown:
        raise CatalogError(f"{where}: unknown hardware field(s) {sorted(unknown)}")
    try:
        return HardwareSpec(**entry)
    except TypeError as exc:
        raise CatalogError(f"{where}: {exc}") from exc


def loads_catalog(text: str, source: str = "<string>") -> tuple[list[ModelSpec], list[HardwareSpec]]:
    """Parse a catalog document. Empty input yields an empty catalog."""
    if not text.strip():
        return [], []
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{source}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise CatalogError(f"{source}: catalog root must be a JSON object")
    models = []
    for i, entry in enumerate(doc.get("models", [])):
        if not isinstance(entry, dict):
            raise CatalogError(f"{source}: models[{i}] must be an object")
        models.append(_build_model(entry, f"{source}: models[{i}]"))
    hardware = []
    for i, entry in enumerate(doc.get("hardware", [])):
        if not isinstance(entry, dict):
            raise CatalogError(f"{source}: hardware[{i}] must be an object")
        hardware.append(_build_hardware(entry, f"{source}: hardware[{i}]"))
    for kind, entries in (("model", models), ("hardware", hardware)):
        seen: set[str] = set()
        for e in entries:
            if e.name in seen:
                raise CatalogError(f"{source}: duplicate {kind} name '{e.name}'")
            seen.add(e.name)
    return models, hardware


def load_catalog(path: str | Path) -> tuple[list[ModelSpec], list[HardwareSpec]]:
    """Load and validate a catalog file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise CatalogError(f"cannot read catalog '{p}': {exc}") from exc
    return loads_catalog(text, source=str(p))


def serialize_catalog(models: list[ModelSpec], hardware: list[HardwareSpec]) -> str:
    """Render a catalog back to its file format. Optional unset fields are omitted."""

    def shrink(spec) -> dict:
        out = {}
        for f in fields(spec):
            value = getattr(spec, f.name)
            if value is None:
                continue
            out[f.name] = value
        return out

    doc = {"models": [shrink(m) for m in models], "hardware": [shrink(h) for h in hardware]}
    return json.dumps(doc, indent=2) + "\n"


def default_catalog_text() -> str:
    """Raw text of the bundled catalog (useful for hashing)."""
    return resources.files("kvroof").joinpath(f"data/{_DEFAULT_RESOURCE}").read_text()


@lru_cache(maxsize=1)
def default_catalog() -> tuple[list[ModelSpec], list[HardwareSpec]]:
    """The bundled catalog of reference models and platforms."""
    return loads_catalog(default_catalog_text(), source=f"<bundled {_DEFAULT_RESOURCE}>")


def by_name(entries) -> dict:
    return {e.name: e for e in entries}
