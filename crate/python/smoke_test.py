"""Smoke test for the pysynbias extension module.

Build and install it first:

    maturin build --release -m crates/python/Cargo.toml
    pip install --force-reinstall target/wheels/pysynbias-*.whl
"""

import json
import math
import os
import tempfile

import pysynbias as sb


def main():
    assert sb.distance_to_tree([0.1, 0.9, 0.2]) == "( ( w0 w1 ) ( w2 w3 ) )"
    p, r, f = sb.uf1(["( ( a b ) c )"], ["( a ( b c ) )"])
    assert abs(f - 0.5) < 1e-12 and p == r
    assert sb.uas_uuas([[2, 0, 2]], [[2, 0, 2]]) == (1.0, 1.0)
    assert abs(sb.perplexity([math.log(0.25)]) - 4.0) < 1e-12
    m = sb.dependency_mask([[0.0, 0.5], [0.5, 0.0]])
    assert abs(m[0][1] - 0.75) < 1e-12
    assert sb.extract_chuliu([[0.0, 0.9], [0.6, 0.0]]) == [1, None]
    assert sb.extract_argmax([[0.0, 0.9], [0.6, 0.0]]) == [1, 0]
    assert sb.grad_check("om") < 1e-4
    try:
        sb.perplexity([])
    except ValueError:
        pass
    else:
        raise AssertionError("empty perplexity accepted")

    with tempfile.TemporaryDirectory() as d:
        data = os.path.join(d, "listops.jsonl")
        sb.generate("listops", 64, data, seed=3)
        with open(data) as fh:
            first = json.loads(fh.readline())
        assert "tokens" in first and "label" in first
        model = sb.Model.train(data, {"dim": "16", "cell_hidden": "16", "slots": "4", "epochs": "1"})
        metrics = model.evaluate(data)
        assert 0.0 <= metrics["accuracy"] <= 1.0
        tree = model.constituency(["[MAX", "3", "4", "]"])
        assert tree.startswith("(")
        ck = os.path.join(d, "model.sbl")
        model.save(ck)
        again = sb.Model.load(ck)
        assert again.evaluate(data) == metrics
        assert again.config()["dim"] == "16"

        toy = os.path.join(d, "toy.jsonl")
        sb.generate("toy", 50, toy, seed=1)
        udgn = sb.Model.train(toy, {"task": "toy", "model": "udgn", "dim": "8", "parser_hidden": "8",
                                    "tags": "4", "channels": "2", "dgn_layers": "1", "epochs": "1"})
        heads, probs = udgn.dependency(["the", "dog", "sees", "a", "cat"])
        assert len(heads) == 5 and heads.count(None) == 1
        assert all(abs(sum(row) - 1.0) < 1e-9 for row in probs)
    print("smoke test ok")


if __name__ == "__main__":
    main()
