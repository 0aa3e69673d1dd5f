from cachebench.latency import LatencyTable
from cachebench.targets import load_spec

SIFIVE_LATENCY = {
    "L1_hit": 2, "L2_hit": 26, "L3_hit": 50, "dram_fetch": 140, "remote_snoop": 8,
    "cache_to_cache_transfer": 18, "directory_lookup": 10, "invalidation_broadcast": 8,
    "writeback": 36, "flush_line": 6, "base_op_overhead": 8,
}


def spec_doc(name="tiny", cores=2, coherence="DirectoryBased", flush=True, smt=False,
             levels=((1, 256, 2, "LRU"), (2, 1024, 4, "LRU")), inclusive=False, jitter=0, seed=0,
             block=64):
    lv = []
    for level, cap, ways, pol in levels:
        lv.append({"level": level, "shared": level > 1, "capacity_bytes": cap, "block_bytes": block,
                   "ways": ways, "policy": pol, "policy_seed": 7,
                   "inclusive": inclusive and level > 1})
    return {"name": name, "cores": cores, "smt": smt, "flush_user_mode": flush,
            "coherence": coherence, "seed": seed, "levels": lv,
            "latency": dict(SIFIVE_LATENCY), "jitter": jitter}


def tiny_spec(**kw):
    return load_spec(spec_doc(**kw))


def table(**over):
    d = dict(SIFIVE_LATENCY)
    d.update(over)
    return LatencyTable(d)


def fixture_matrices():
    """Three synthetic 88-triple matrices with known presence statistics.

    * ids 0..32   detected under W_W_W_TS on every target (33 shared-config)
    * ids 33..57  detected everywhere, but under a different label per target
    * ids 58..63  detected nowhere (6)
    * ids 64..87  detected on "x" only
    Target "z" has no valid RF_* cells; SMT cells are invalid everywhere.
    """
    from cachebench.benchgen import (CONFIG_LABELS, DETECTED, INVALID, NOT_DETECTED, Cell,
                                     DetectionMatrix)

    own = {"x": "W_RF_RF_TS", "y": "W_W_RF_TS", "z": "W_RF_W_TS"}
    out = {}
    for name in ("x", "y", "z"):
        cells = {}
        for tid in range(88):
            for lab in CONFIG_LABELS:
                if lab.endswith("SMT") or (name == "z" and lab.startswith("RF_")):
                    status = INVALID
                elif tid < 33 and lab == "W_W_W_TS":
                    status = DETECTED
                elif 33 <= tid < 58 and lab == own[name]:
                    status = DETECTED
                elif tid >= 64 and name == "x" and lab == "W_W_W_TS":
                    status = DETECTED
                else:
                    status = NOT_DETECTED
                cells[(tid, lab)] = Cell(status)
        out[name] = DetectionMatrix(name, cells, 100)
    return out
