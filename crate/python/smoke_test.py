"""Smoke test for the ecdctr extension module.

Build and install first:
    pip install --no-build-isolation -e crates/py   (or: maturin develop -m crates/py/Cargo.toml)
"""

import math
import tempfile
from pathlib import Path

import ecdctr


def small_config(variant):
    cfg = ecdctr.RunConfig()
    for key, value in [
        ("users", "300"),
        ("items", "200"),
        ("ad_items", "20"),
        ("natural_per_month", "3000"),
        ("ad_per_month", "600"),
        ("complete_hidden", "16,8"),
        ("tiny_hidden", "8"),
        ("seeds", "1"),
        ("variant", variant),
    ]:
        cfg.set(key, value)
    cfg.validate()
    return cfg


def check_metrics():
    assert ecdctr.auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert ecdctr.auc([0.1, 0.2], [1, 1]) is None
    g = ecdctr.gauc([1, 1, 1, 2, 2], [0.9, 0.1, 0.5, 0.3, 0.7], [1, 0, 1, 0, 1])
    assert g == 1.0, g
    try:
        ecdctr.gauc([1], [0.5], [1])
    except ValueError:
        pass
    else:
        raise AssertionError("single-class input must raise")


def check_config():
    cfg = ecdctr.RunConfig()
    assert cfg.get("dim") == "16"
    assert "history_months" in ecdctr.RunConfig.keys()
    again = ecdctr.RunConfig(cfg.to_text())
    assert again.fingerprint() == cfg.fingerprint()
    try:
        cfg.set("no_such_key", "1")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key must raise")


def check_run_and_artifacts():
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "full"
        res = ecdctr.run(small_config("full"), 1, str(out))
        assert res.warmup_completed
        assert res.gauc is not None and 0.0 <= res.gauc <= 1.0
        assert any("\ttpm\t" in line for line in res.event_log.splitlines())

        store = ecdctr.SnapshotStore.load(str(out / "store"))
        assert store.month_tags("user") == [4, 5, 6]
        assert store.month_tags("item") == [4, 5, 6]
        ckpt = ecdctr.Checkpoint.load(str(out / "checkpoints" / "actr_final.ckpt"))
        names = [n for n, _ in ckpt.tensors()]
        assert "attn.user.wq" in names and "bn.input.gamma" in names
        assert ckpt.input_width() == 15 * 16 + 2 * 16
        merged = store.merge("user", ckpt)
        assert merged and all(len(v) == 16 and all(map(math.isfinite, v)) for _, v in merged)
        hist = store.lookup_history("user", merged[0][0])
        assert len(hist) == ecdctr.HISTORY_SLOTS

        again = ecdctr.run(small_config("full"), 1)
        assert again.event_log == res.event_log
        assert again.report_csv == res.report_csv


def check_ablate():
    csv = ecdctr.ablate(small_config("full"), ["target_only", "plus_cpm"])
    lines = csv.splitlines()
    assert lines[0] == "variant,seed,gauc,auc,improvement_vs_target_only"
    assert lines[1].startswith("target_only,1,") and lines[1].endswith(",+0.000000")


if __name__ == "__main__":
    check_metrics()
    check_config()
    check_run_and_artifacts()
    check_ablate()
    print("smoke test passed")
