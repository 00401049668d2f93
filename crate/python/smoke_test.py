"""Smoke test for the pyrecpo extension module.

Build first:
    cargo build -p recpo-py --features extension-module
then run:
    python3 python/smoke_test.py [path/to/libpyrecpo.so]
"""

import importlib.util
import math
import os
import shutil
import sys
import tempfile


def load_module(lib_path):
    tmp = tempfile.mkdtemp()
    target = os.path.join(tmp, "pyrecpo.so")
    shutil.copy(lib_path, target)
    spec = importlib.util.spec_from_file_location("pyrecpo", target)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    default = os.path.join(root, "target", "debug", "libpyrecpo.so")
    rp = load_module(sys.argv[1] if len(sys.argv) > 1 else default)

    assert rp.ndcg_reward(1, 5) == 1.0
    assert abs(rp.ndcg_reward(3, 5) - 0.5) < 1e-12
    assert rp.ndcg_reward(6, 5) == 0.0
    assert abs(rp.fuse(0.2, 0.6, 0.25) - 0.3) < 1e-12
    adv = rp.grpo_advantages([0.1, 0.4, 0.7])
    assert abs(sum(adv)) < 1e-9
    assert abs(sum(rp.rloo_advantages([0.3, 0.9, 0.0, 0.2]))) < 1e-9
    assert rp.clipped_term(1.5, 1.0, 0.2) == 1.2
    p = rp.similarity_reward([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], 0, 1.0)
    assert abs(p - math.e / (math.e + 1.0)) < 1e-12
    text = "genre: rock\n"
    assert rp.detokenize(rp.tokenize(text)) == text
    try:
        rp.fuse(0.1, 0.1, 2.0)
        raise AssertionError("beta outside [0, 1] must be rejected")
    except ValueError as e:
        assert "train.beta" in str(e)

    corpus = rp.Corpus.generate(num_items=60, num_users=40, seed=1)
    assert corpus.num_items == 60
    sizes = corpus.split_sizes()
    assert sum(sizes.values()) == 40
    assert corpus.user_prompt("val", 0).startswith("Analyze in depth")

    policy = rp.Policy(layers=1, heads=2, width=16, ff_width=32, seed=3)
    items, reasoning = policy.recommend(corpus, "val", 0, k=5, budget=4)
    assert len(items) == 5 and len(set(items)) == 5
    assert len(reasoning) <= 4
    metrics = policy.evaluate(corpus, "val", budget=2, max_users=3)
    assert metrics["hr@5"] <= metrics["hr@10"] <= metrics["hr@20"]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "p.ckpt")
        policy.save(path, 0)
        again = rp.Policy.load(path)
        assert again.num_parameters == policy.num_parameters
        assert again.recommend(corpus, "val", 0, k=5, budget=4)[0] == items
        assert rp.run_cli(["--version"]) == 0

    print("pyrecpo smoke test passed")


if __name__ == "__main__":
    main()
