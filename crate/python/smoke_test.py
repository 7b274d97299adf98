"""End-to-end check of the Python bindings on a small synthetic dataset.

    python3 python/smoke_test.py
"""

import json
import tempfile
from pathlib import Path

import rankdebias as rd


def main():
    assert rd.rank_of_truth([("a", 0.5), ("b", 0.5), ("c", 0.9)], "b") == 3
    assert abs(rd.mrr([1, 2, 4]) - (1 + 0.5 + 0.25) / 3) < 1e-12
    assert rd.hr_at_k([1, 2, 4], 2) == 2 / 3
    assert rd.ast_metrics("x = 1") == (4, 3, True)
    assert rd.ast_metrics("def broken(:\n")[2] is False
    assert rd.canonical_code_id("x = 1\r\n") == rd.canonical_code_id("x = 1\n")
    labels, centers = rd.kmeans([[1.0], [2.0], [10.0], [11.0]], 2)
    assert labels[0] == labels[1] != labels[2] == labels[3]
    assert sorted(c[0] for c in centers) == [1.5, 10.5]

    with tempfile.TemporaryDirectory() as tmp:
        d = Path(tmp)
        rd.synth(d, seed=7, n_train=300, n_test=100, pool=80)
        corpus = rd.Corpus.load(d / "dataset.jsonl")
        assert len(corpus) == 400
        train = rd.RankingRun.load(d / "train.tsv", corpus, "train")
        test = rd.RankingRun.load(d / "test.tsv", corpus, "test")

        feats = rd.features(corpus)
        assert set(feats) == set(corpus.pair_ids())

        model = rd.fit(corpus, train, 1)
        assert 0.0 <= model.p < 1.0
        again = rd.RerankerModel.from_json(model.to_json())
        assert json.loads(again.to_json()) == json.loads(model.to_json())

        before = rd.evaluate(corpus, test)
        reranked = rd.rerank([model], corpus, test, embeddings=d / "emb.tsv")
        after = rd.evaluate(corpus, reranked)
        sev_before = rd.audit(corpus, test, 1)["severity"]
        sev_after = rd.audit(corpus, reranked, 1)["severity"]
        print(f"MRR {before['mrr']:.4f} -> {after['mrr']:.4f}, "
              f"severity {sev_before:.4f} -> {sev_after:.4f}")
        assert after["mrr"] > before["mrr"]
        assert abs(sev_after) < abs(sev_before)

        reranked.save(d / "out.tsv")
        assert len(rd.RankingRun.load(d / "out.tsv", corpus)) == len(test)

    print("smoke test ok")


if __name__ == "__main__":
    main()
