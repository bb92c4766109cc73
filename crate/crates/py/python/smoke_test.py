"""Smoke test for the mathtrace extension module.

Build with `maturin develop` (or copy target/*/libmathtrace.so to
mathtrace.so on PYTHONPATH) and run: python smoke_test.py
"""

import math
import pathlib
import sys
import tempfile

import mathtrace

FIXTURES = pathlib.Path(__file__).resolve().parents[2] / "core" / "tests" / "fixtures"


def main() -> int:
    extractor = mathtrace.FlowExtractor()
    text = (FIXTURES / "solutions" / "limit_factor.txt").read_text()
    flow = extractor.extract(text)
    assert flow.pattern_trace == ["substitution", "factoring", "simplification", "limit"], flow.pattern_trace
    assert len(flow) == 4
    assert all(text[s.span[0]:s.span[1]].strip() for s in flow.steps)
    assert flow.to_dot("limit").startswith("digraph")

    prompt = "Find the gradient of f(x, y) = x^2y. Show all steps."
    elements = mathtrace.decompose_prompt(prompt)
    ablations, skipped = mathtrace.generate_ablations(prompt)
    assert elements and len(ablations) + len(skipped) == len(elements)
    assert all(ablated != prompt for _, ablated in ablations)

    scores = mathtrace.score_responses("the gradient is 2xy", ["the gradient is 2xy", "no idea"], alpha=0.5)
    assert scores[0].divergence == 0.0
    assert 0.0 < scores[1].divergence <= 1.0
    try:
        mathtrace.score_responses("a", ["b"], alpha=2.0)
    except ValueError:
        pass
    else:
        raise AssertionError("alpha out of range accepted")

    assert mathtrace.tokenize("Let x = 2") == mathtrace.tokenize("let  x =\t2")
    assert mathtrace.normalized_edit_distance("a b c", "a b c") == 0.0
    assert mathtrace.chunk_spans(10, 4, 1) == [(0, 4), (3, 7), (6, 10)]

    v = mathtrace.embed("derivatives of polynomials")
    assert math.isclose(sum(x * x for x in v), 1.0, rel_tol=1e-9)
    assert math.isclose(mathtrace.cosine(v, v), 1.0, rel_tol=1e-9)

    user, truncated = mathtrace.assemble_prompt("Find x.", [("notes.md", "word " * 50)], token_budget=20)
    assert truncated and len(user.split()) <= 20

    with tempfile.TemporaryDirectory() as out:
        status, csv = mathtrace.run_compare(
            str(FIXTURES / "run.toml"), out=out, replay_only=True, timestamp="20250101_120000"
        )
    assert status == "ok", status
    assert len(csv.strip().splitlines()) == 4

    print("mathtrace smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
