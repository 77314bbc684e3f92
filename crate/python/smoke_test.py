#!/usr/bin/env python3
"""Smoke test for the semcot_py extension module.

Builds nothing itself: expects `cargo build -p semcot-py` to have produced
target/debug/libsemcot_py.so (or .dylib). Copies the library next to a
temp dir under the importable name, trains a deliberately tiny pipeline,
and exercises every exposed entry point.

Run from the repository root:

    cargo build -p semcot-py
    python3 python/smoke_test.py
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def import_module():
    candidates = [
        REPO / "target" / "debug" / "libsemcot_py.so",
        REPO / "target" / "debug" / "libsemcot_py.dylib",
        REPO / "target" / "release" / "libsemcot_py.so",
    ]
    src = next((p for p in candidates if p.exists()), None)
    if src is None:
        sys.exit("build the extension first: cargo build -p semcot-py")
    stage = Path(tempfile.mkdtemp(prefix="semcot_py_"))
    suffix = ".so" if src.suffix == ".so" else ".so"  # import name must be .so on linux
    shutil.copy2(src, stage / f"semcot_py{suffix}")
    sys.path.insert(0, str(stage))
    import semcot_py  # noqa: E402

    return semcot_py


def check(name, cond):
    status = "ok" if cond else "FAIL"
    print(f"  {status}: {name}")
    if not cond:
        sys.exit(1)


def main():
    m = import_module()
    print(f"semcot_py {m.__version__}")

    tiny = [
        "data.n_examples=28",
        "model.d_model=32",
        "model.n_layers=2",
        "model.n_heads=2",
        "model.max_seq_len=96",
        "small_model.d_model=16",
        "small_model.n_layers=1",
        "small_model.max_seq_len=96",
        "pretrain.epochs=1",
        "sentence_transformer.epochs=1",
        "sentence_transformer.backbone_layers=1",
        "sentence_transformer.d_sem=16",
        "generator.epochs=1",
        "generator.k_train=2",
        "generator.k_eval=1",
        "inference.max_answer_tokens=8",
        "inference.max_explicit_tokens=24",
    ]

    print("pure helpers")
    check("accuracy_percent(2, 3) == 66.67", m.accuracy_percent(2, 3) == 66.67)
    check(
        "extract_answer fuses digit runs",
        m.extract_answer("arithmetic", "the answer is 4 2 .") == "42",
    )
    check(
        "extract_answer takes first yes/no",
        m.extract_answer("coinflip", "well no then yes") == "no",
    )

    print("config")
    cfg = m.Config(overrides=tiny)
    check("seed getter", cfg.seed == 0)
    cfg.seed = 7
    check("seed setter", cfg.seed == 7)
    check("toml snapshot mentions overrides", "d_model = 32" in cfg.to_toml())
    check("config hash is stable", cfg.hash() == m.Config(overrides=tiny + ["seed=7"]).hash())
    try:
        m.Config(overrides=["generator.lambda=1.5"])
        check("invalid lambda rejected", False)
    except ValueError:
        check("invalid lambda rejected", True)

    print("training")
    run_dir = Path(tempfile.mkdtemp(prefix="semcot_run_"))
    arts = m.train(cfg, run_dir=str(run_dir))
    train_n, val_n, test_n = arts.split_sizes()
    check("splits partition the data", train_n + val_n + test_n == 28)
    hashes = arts.hashes()
    check("component hashes present", all(hashes[k] for k in ("target", "generator")))
    check("run dir has config snapshot", (run_dir / "config.toml").exists())
    check("run dir has manifest", (run_dir / "run_manifest.json").exists())

    print("inference")
    queries = arts.test_queries()
    q = queries[0]["query"]
    a1 = arts.infer_implicit(q)
    a2 = arts.infer_implicit(q)
    check("implicit inference is deterministic", a1 == a2)
    check("implicit bills one generator pass", a1["generator_passes"] == 1)
    ex = arts.infer_explicit(q)
    check("explicit bills no generator pass", ex["generator_passes"] == 0)
    check("answers decode to text", isinstance(a1["text"], str) and isinstance(ex["text"], str))

    print("evaluation")
    reports = arts.evaluate()
    check("two method reports", {r["method"] for r in reports} == {"implicit", "explicit"})
    check("accuracy is a percent", all(0.0 <= r["accuracy_percent"] <= 100.0 for r in reports))
    check("eval files written", (run_dir / "summary.json").exists())
    summary = json.loads((run_dir / "summary.json").read_text())
    check("summary is timing-free", "time" not in (run_dir / "summary.json").read_text())
    check("summary counts the test split", summary["n"] == test_n)

    print("paraphrase probe")
    probe = arts.case_study(n_queries=2, variants_per_query=5)
    check("probe embeds every variant", probe["n_points"] == 10)
    check("probe reports a ratio", probe["ratio"] > 0.0)

    print("scorer")
    emb = arts.encode("the coin was flipped twice so it is heads up")
    check("scorer embeds text", emb is not None and len(emb) == 16)

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
