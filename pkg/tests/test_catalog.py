import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kvroof.catalog import (
    HardwareSpec,
    ModelSpec,
    by_name,
    default_catalog,
    flops_per_token,
    kv_bytes_per_token,
    load_catalog,
    loads_catalog,
    serialize_catalog,
)
from kvroof.errors import CatalogError


def gqa(name="m", total=int(1e9), active=int(1e9), layers=80, heads=8, dim=128, p=2.0):
    return ModelSpec(
        name=name,
        total_params=total,
        active_params=active,
        attention_kind="GQA",
        layers=layers,
        kv_heads=heads,
        head_dim=dim,
        precision_bytes=p,
    )


def mla(name="m", total=int(1e9), active=int(1e9), layers=61, rank=512, rope=64, p=2.0):
    return ModelSpec(
        name=name,
        total_params=total,
        active_params=active,
        attention_kind="MLA",
        layers=layers,
        kv_lora_rank=rank,
        qk_rope_dim=rope,
        precision_bytes=p,
    )


class TestKvBytesPerToken:
    def test_llama_70b(self):
        # 2 * 80 * 8 * 128 * 2 = 327,680 bytes, about 328 KB
        assert kv_bytes_per_token(gqa(layers=80, heads=8, dim=128, p=2)) == 327_680

    def test_qwen3_235b(self):
        assert kv_bytes_per_token(gqa(layers=94, heads=4, dim=128, p=2)) == 192_512

    def test_deepseek_v3_mla_sum_form(self):
        # hand arithmetic: 61 * (512 + 64) * 2
        assert kv_bytes_per_token(mla(layers=61, rank=512, rope=64, p=2)) == 61 * 576 * 2 == 70_272

    def test_zero_precision_rejected(self):
        with pytest.raises(CatalogError):
            gqa(p=0)

    def test_fractional_precision_half_byte(self):
        # 4-bit storage halves the 8-bit footprint exactly
        assert kv_bytes_per_token(gqa(p=0.5)) == kv_bytes_per_token(gqa(p=1.0)) / 2

    @given(
        layers=st.integers(1, 200),
        heads=st.integers(1, 64),
        dim=st.integers(1, 256),
        bits=st.integers(1, 32),
        bump=st.integers(1, 8),
        which=st.sampled_from(["layers", "heads", "dim", "bits"]),
    )
    @settings(max_examples=80, deadline=None)
    def test_monotone_in_each_gqa_field(self, layers, heads, dim, bits, bump, which):
        base = dict(layers=layers, heads=heads, dim=dim, p=bits / 8)
        grown = dict(base)
        if which == "bits":
            grown["p"] = (bits + bump) / 8
        else:
            grown[which] += bump
        assert kv_bytes_per_token(gqa(**grown)) >= kv_bytes_per_token(gqa(**base))

    @given(
        layers=st.integers(1, 200),
        rank=st.integers(1, 1024),
        rope=st.integers(1, 256),
        bump=st.integers(1, 8),
        which=st.sampled_from(["layers", "rank", "rope"]),
    )
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_each_mla_field(self, layers, rank, rope, bump, which):
        base = dict(layers=layers, rank=rank, rope=rope)
        grown = dict(base)
        grown[which] += bump
        assert kv_bytes_per_token(mla(**grown)) >= kv_bytes_per_token(mla(**base))


class TestFlopsPerToken:
    def test_llama_405b(self):
        assert flops_per_token(gqa(total=405_000_000_000, active=405_000_000_000)) == 810e9

    def test_unit_anchor(self):
        assert flops_per_token(gqa(total=1, active=1)) == 2

    def test_qwen3_235b_active(self):
        assert flops_per_token(gqa(total=235_000_000_000, active=22_000_000_000)) == 44e9

    @given(active=st.integers(1, 10**13))
    @settings(max_examples=50, deadline=None)
    def test_always_twice_active(self, active):
        assert flops_per_token(gqa(total=10**13, active=active)) == 2 * active


class TestSpecInvariants:
    def test_gqa_missing_field_named(self):
        with pytest.raises(CatalogError, match="head_dim"):
            ModelSpec(
                name="bad",
                total_params=1,
                active_params=1,
                attention_kind="GQA",
                layers=2,
                kv_heads=2,
            )

    def test_mla_missing_field_named(self):
        with pytest.raises(CatalogError, match="qk_rope_dim"):
            ModelSpec(
                name="bad",
                total_params=1,
                active_params=1,
                attention_kind="MLA",
                layers=2,
                kv_lora_rank=8,
            )

    def test_unused_group_must_be_absent(self):
        with pytest.raises(CatalogError, match="kv_lora_rank"):
            ModelSpec(
                name="bad",
                total_params=1,
                active_params=1,
                attention_kind="GQA",
                layers=2,
                kv_heads=2,
                head_dim=2,
                kv_lora_rank=8,
            )

    def test_active_exceeds_total(self):
        with pytest.raises(CatalogError, match="active_params"):
            gqa(total=10, active=11)

    def test_sustained_above_peak_rejected(self):
        with pytest.raises(CatalogError, match="sustained"):
            HardwareSpec(
                name="h",
                compute_throughput=1e15,
                link_bandwidth_peak=32e9,
                link_bandwidth_sustained=64e9,
                vram_effective=1e9,
            )

    def test_sustained_defaults_to_peak(self):
        hw = HardwareSpec(
            name="h", compute_throughput=1e15, link_bandwidth_peak=32e9, vram_effective=1e9
        )
        assert hw.link_bandwidth_sustained == hw.link_bandwidth_peak
        assert hw.bandwidth(True) == hw.bandwidth(False) == 32e9

    def test_idle_above_tdp_rejected(self):
        with pytest.raises(CatalogError, match="idle_watts"):
            HardwareSpec(
                name="h",
                compute_throughput=1e15,
                link_bandwidth_peak=32e9,
                vram_effective=1e9,
                tdp_watts=400,
                idle_watts=500,
            )


class TestCatalogIO:
    def test_default_catalog_contents(self):
        models, hardware = default_catalog()
        names = {m.name for m in models}
        assert names == {
            "Llama-3.1-70B",
            "Llama-3.1-405B",
            "Qwen3-30B-A3B",
            "Qwen3-235B-A22B",
            "DeepSeek-V3",
        }
        hw_names = {h.name for h in hardware}
        for expected in ("A100-PCIe4", "H100-PCIe5", "B200-PCIe5", "GH-NVLink-C2C", "Unified-HBM"):
            assert expected in hw_names

    def test_empty_file_is_empty_catalog(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        models, hardware = load_catalog(path)
        assert models == [] and hardware == []

    def test_negative_bandwidth_cites_field(self):
        text = json.dumps(
            {
                "hardware": [
                    {
                        "name": "bad",
                        "compute_throughput": 1e15,
                        "link_bandwidth_peak": -1,
                        "vram_effective": 1e9,
                    }
                ]
            }
        )
        with pytest.raises(CatalogError, match="link_bandwidth_peak"):
            loads_catalog(text)

    def test_duplicate_names_rejected(self):
        models, hardware = default_catalog()
        doubled = serialize_catalog(models + [models[0]], hardware)
        with pytest.raises(CatalogError, match="duplicate"):
            loads_catalog(doubled)

    def test_unknown_field_rejected(self):
        text = json.dumps({"models": [{"name": "x", "bogus": 1}]})
        with pytest.raises(CatalogError, match="bogus"):
            loads_catalog(text)

    def test_parse_error_has_location(self):
        with pytest.raises(CatalogError, match="line"):
            loads_catalog("{not json", source="f.json")

    def test_round_trip(self):
        models, hardware = default_catalog()
        again_m, again_h = loads_catalog(serialize_catalog(models, hardware))
        assert again_m == models
        assert again_h == hardware

    def test_by_name(self):
        models, _ = default_catalog()
        assert by_name(models)["DeepSeek-V3"].attention_kind == "MLA"
