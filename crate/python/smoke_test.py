#!/usr/bin/env python3
"""Smoke test for the giram_py extension module.

Build the module first:

    cargo build -p giram-py --release

then run:

    python3 python/smoke_test.py
"""

import math
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_giram_py():
    """Copy the built cdylib next to a temp dir and import it."""
    candidates = [
        REPO / "target" / "release" / "libgiram_py.so",
        REPO / "target" / "debug" / "libgiram_py.so",
        REPO / "target" / "release" / "libgiram_py.dylib",
        REPO / "target" / "debug" / "libgiram_py.dylib",
    ]
    built = next((p for p in candidates if p.exists()), None)
    if built is None:
        sys.exit("libgiram_py not found; run `cargo build -p giram-py --release` first")
    stage = Path(tempfile.mkdtemp(prefix="giram_py_"))
    suffix = ".so" if built.suffix == ".so" else ".so"  # python loads .so on linux/mac
    shutil.copy2(built, stage / f"giram_py{suffix}")
    sys.path.insert(0, str(stage))
    import giram_py  # noqa: E402

    return giram_py


def approx(a, b, tol=1e-9):
    assert abs(a - b) < tol, f"{a} != {b}"


def main():
    g = import_giram_py()

    # Metrics.
    assert g.rank_of_truth([0.1, 0.9, 0.3], 1) == 1
    assert g.rank_of_truth([0.2, 0.5, 0.3], 2) == 2
    approx(g.acc_at_k([1, 3, 20], 5), 2.0 / 3.0)
    approx(g.mrr([1, 2]), 0.75)

    # Top-K sparse construction: softmax of uniform scores, keep 2.
    entries = g.topk_sparse([0.0, 0.0, 0.0, 0.0], 2)
    assert [i for i, _ in entries] == [0, 1]
    approx(sum(p for _, p in entries), 0.5, 1e-12)

    # Interest memory: capacity bound, eviction, retrieval.
    mem = g.InterestMemory(capacity=2, top_k=3, d_k=4, d_v=6)
    assert mem.update(7, [0.5, 0.1, -0.2, 0.8], [3.0, 1.0, 2.0, 0.0, -1.0, 0.5], 0.5, 0.95, 100) == "inserted"
    assert mem.update(7, [-0.5, 0.9, 0.2, -0.1], [0.0, 2.0, 1.0, 3.0, 0.0, -0.5], 0.5, 0.95, 200) == "inserted"
    assert mem.update(7, [0.9, -0.3, 0.4, 0.2], [1.0, 0.0, 0.0, 0.0, 2.0, 3.0], 0.5, 0.95, 300) == "evicted"
    assert mem.user_len(7) == 2
    # Matching an identical key blends instead of inserting.
    assert mem.update(7, [0.9, -0.3, 0.4, 0.2], [1.0, 0.0, 0.0, 0.0, 2.0, 3.0], 0.5, 0.95, 400) == "matched"

    ranks = mem.rank_entries(7, [0.9, -0.3, 0.4, 0.2])
    assert sorted(ranks) == [1, 2]
    sustained = mem.sustained_interest(7, [[0.9, -0.3, 0.4, 0.2]], a=50.0)
    assert len(sustained) == 6
    assert all(v >= 0.0 for v in sustained)
    assert sum(sustained) <= 1.0 + 1e-9
    # Unknown users fall back to a zero vector.
    assert mem.sustained_interest(99, [[1.0, 0.0, 0.0, 0.0]]) == [0.0] * 6

    # Snapshot round trip.
    with tempfile.TemporaryDirectory() as td:
        snap = Path(td) / "memory.bin"
        mem.save(snap)
        back = g.InterestMemory.load(snap)
        assert back.total_entries() == mem.total_entries()
        assert back.sustained_interest(7, [[0.9, -0.3, 0.4, 0.2]]) == mem.sustained_interest(
            7, [[0.9, -0.3, 0.4, 0.2]]
        )

    # Key generator: deterministic under a seed, diverse across seeds.
    keys = [[math.sin(0.1 * i + j) * 0.8 for j in range(8)] for i in range(30)]
    gen = g.KeyGenerator(keys, n_k=4, epochs=5, latent_dim=4, hidden_dim=16, seed=3)
    out_a = gen.generate(keys[0], seed=11)
    out_b = gen.generate(keys[0], seed=11)
    assert out_a == out_b
    assert len(out_a) == 4 and len(out_a[0]) == 8
    assert all(-1.0 < v < 1.0 for k in out_a for v in k)
    assert gen.generate(keys[0], seed=12) != out_a

    # Tiny end-to-end experiment.
    with tempfile.TemporaryDirectory() as td:
        config = """
[run]
n_blocks = 3
seed = 5

[synth]
n_users = 30
n_pois = 40
n_blocks = 6
events_per_user_per_block = 8

[backbone]
embed_dim = 8
hidden_dim = 8
base_epochs = 2
finetune_epochs = 2

[keygen]
n_k = 4
epochs = 2
latent_dim = 8
hidden_dim = 16
"""
        summary = g.run_experiment(config, method="giram", out_dir=Path(td) / "run")
        assert summary["method"] == "giram"
        assert summary["instances"] > 0
        assert 0.0 <= summary["mean_acc5"] <= summary["mean_acc10"] <= summary["mean_acc20"] <= 1.0
        assert (Path(td) / "run" / "metrics.csv").exists()
        assert (Path(td) / "run" / "summary.json").exists()

    print("giram_py smoke test: OK")


if __name__ == "__main__":
    main()
