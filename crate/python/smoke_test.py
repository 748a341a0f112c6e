"""Smoke test for the featforge Python module.

Run after `maturin develop -m crates/py/Cargo.toml`, or point FEATFORGE_LIB
at a built `libfeatforge_py.so` to load it directly.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import random
import sys
import tempfile


def load_module():
    lib = os.environ.get("FEATFORGE_LIB")
    if not lib:
        import featforge

        return featforge
    loader = importlib.machinery.ExtensionFileLoader("featforge", lib)
    spec = importlib.util.spec_from_loader("featforge", loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    ff = load_module()

    expr = ff.Expr("x2 x1 *", ["x1", "x2", "x3"])
    assert expr.postfix == "x2 x1 *"
    assert expr.name == ff.Expr("x1 x2 *", ["x1", "x2", "x3"]).name
    assert expr.name.startswith("g") and len(expr.name) == 9
    assert ff.Expr("x1 recip", ["x1"]).evaluate({"x1": [0.0]}) == [1e8]
    try:
        ff.Expr("x1 x2", ["x1", "x2"])
        raise AssertionError("malformed expression accepted")
    except ValueError:
        pass

    rng = random.Random(0)
    rows = [[rng.gauss(0, 1) for _ in range(3)] for _ in range(200)]
    columns = [(f"x{i + 1}", [r[i] for r in rows]) for i in range(3)]
    target = [r[0] * r[1] + 0.1 * rng.gauss(0, 1) for r in rows]
    frame = ff.Frame(columns, target, "regr")
    assert (frame.n_rows, frame.n_features) == (200, 3)

    raw = ff.evaluate(frame, trees=20)
    product = ff.evaluate(frame, [ff.Expr("x1 x2 *", frame.names)], trees=20)
    assert product["secondary"] > raw["secondary"] + 0.05, (raw, product)

    result = ff.run(frame, iterations=2, steps=3, router="uniform", seed=1, trees=10, folds=3)
    assert result.records == 7
    assert result.best_score >= result.baseline_score
    summary = result.summary()
    assert summary["records"] == 7 and not math.isnan(summary["improvement"])

    with tempfile.TemporaryDirectory() as tmp:
        trace = os.path.join(tmp, "trace.jsonl")
        result.write_trace(trace)
        with open(trace) as f:
            lines = [json.loads(line) for line in f]
        assert len(lines) == 7 and lines[0]["detail"] == "baseline"
        csv_path = result.export(tmp)
        reloaded = ff.Frame.from_csv(csv_path, "target", "regr")
        assert reloaded.names == result.best_features

    policy = ff.Policy(3)
    p = policy.probs([0.0] * 12)
    assert abs(sum(p) - 1.0) < 1e-12

    print("python smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
