import json

import numpy as np
import pytest

from partann import (Dataset, load_ivecs, load_segmenter, save_fvecs)
from partann.cli import main


@pytest.fixture(scope="module")
def files(tmp_path_factory, small_clustered):
    root = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(21)
    queries = Dataset.from_vectors(
        rng.standard_normal((20, 16)).astype(np.float32))
    save_fvecs(small_clustered, root / "data.fvecs")
    save_fvecs(queries, root / "queries.fvecs")
    return root


def run(*argv):
    return main([str(a) for a in argv])


class TestLearnSegmenter:
    @pytest.mark.parametrize("strategy,extra", [
        ("rs", ["--segments", "8"]),
        ("rh", ["--levels", "2"]),
        ("apd", ["--levels", "2"]),
    ])
    def test_learns_and_persists(self, files, tmp_path, strategy, extra,
                                 capsys):
        out = tmp_path / f"{strategy}.json"
        rc = run("learn-segmenter", "--input", files / "data.fvecs",
                 "--out", out, "--strategy", strategy, *extra)
        assert rc == 0
        tree = load_segmenter(out)
        assert tree.num_segments in (4, 8)
        assert "segments=" in capsys.readouterr().out

    def test_deterministic_output(self, files, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run("learn-segmenter", "--input", files / "data.fvecs",
                       "--out", out, "--strategy", "rh", "--levels", "3",
                       "--seed", "5") == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_input_is_data_error(self, tmp_path):
        rc = run("learn-segmenter", "--input", tmp_path / "nope.fvecs",
                 "--out", tmp_path / "o.json", "--strategy", "rs",
                 "--segments", "4")
        assert rc == 2

    def test_bad_strategy_is_usage_error(self, files, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("learn-segmenter", "--input", files / "data.fvecs",
                "--out", tmp_path / "o.json", "--strategy", "kmeans")
        assert exc.value.code == 1


@pytest.fixture(scope="module")
def pipeline(files, tmp_path_factory):
    """learn + build + exact once; query/evaluate tests reuse the artifacts."""
    root = tmp_path_factory.mktemp("pipe")
    seg = root / "seg.json"
    idx = root / "index"
    assert run("learn-segmenter", "--input", files / "data.fvecs",
               "--out", seg, "--strategy", "rh", "--levels", "2") == 0
    assert run("build", "--input", files / "data.fvecs", "--segmenter", seg,
               "--out", idx, "--shards", "2") == 0
    assert run("exact", "--input", files / "data.fvecs",
               "--queries", files / "queries.fvecs",
               "--out", root / "truth", "--k", "20", "--partitions", "3") == 0
    return root


class TestPipeline:
    def test_build_artifacts(self, pipeline):
        manifest = json.loads((pipeline / "index" / "manifest.json").read_text())
        assert manifest["S"] == 2
        assert manifest["docCount"] == 3000

    def test_exact_matches_library(self, files, pipeline, small_clustered):
        from partann import exact_topk, load_fvecs
        truth = load_ivecs(pipeline / "truth.ivecs")
        queries = load_fvecs(files / "queries.fvecs")
        want = [n.doc_id for n in exact_topk(small_clustered,
                                             queries.vectors[0], 20)]
        assert truth[0].tolist() == want

    def test_query_outputs(self, files, pipeline, capsys):
        out = pipeline / "res"
        rc = run("query", "--index", pipeline / "index",
                 "--queries", files / "queries.fvecs", "--out", out,
                 "--topk", "20", "--ef-search", "80")
        assert rc == 0
        ids = load_ivecs(out.with_suffix(".ivecs"))
        assert ids.shape == (20, 20)
        assert np.all(ids >= 0)
        timing = json.loads((pipeline / "res.timing.json").read_text())
        assert timing["count"] == 20 and timing["qps"] > 0

    def test_query_deterministic_across_workers(self, files, pipeline):
        outs = []
        for w, name in ((1, "r1"), (4, "r4")):
            assert run("query", "--index", pipeline / "index",
                       "--queries", files / "queries.fvecs",
                       "--out", pipeline / name, "--topk", "10",
                       "--workers", w) == 0
            outs.append((pipeline / f"{name}.ivecs").read_bytes())
        assert outs[0] == outs[1]

    def test_evaluate(self, files, pipeline, capsys, tmp_path):
        out = pipeline / "res"
        run("query", "--index", pipeline / "index",
            "--queries", files / "queries.fvecs", "--out", out,
            "--topk", "20", "--ef-search", "120")
        jpath = tmp_path / "recall.json"
        rc = run("evaluate", "--results", out.with_suffix(".ivecs"),
                 "--truth", pipeline / "truth.ivecs", "--ks", "1,10,20",
                 "--json", jpath)
        assert rc == 0
        printed = capsys.readouterr().out
        payload = json.loads(jpath.read_text())
        assert set(payload) == {"recall@1", "recall@10", "recall@20"}
        for k, v in payload.items():
            assert 0.0 <= v <= 1.0
            assert f"{v:.4f}" in printed
        # table and JSON must agree
        assert json.loads(printed.strip().splitlines()[-1]) == payload

    def test_evaluate_k_too_large(self, pipeline):
        rc = run("evaluate", "--results", pipeline / "truth.ivecs",
                 "--truth", pipeline / "truth.ivecs", "--ks", "21")
        assert rc == 2

    def test_query_missing_index(self, files, tmp_path):
        rc = run("query", "--index", tmp_path / "noidx",
                 "--queries", files / "queries.fvecs",
                 "--out", tmp_path / "o")
        assert rc == 2


class TestBench:
    def test_end_to_end(self, files, tmp_path, capsys):
        rc = run("bench", "--input", files / "data.fvecs",
                 "--queries", files / "queries.fvecs", "--out", tmp_path,
                 "--strategy", "rh", "--levels", "2", "--topk", "20",
                 "--ks", "1,10,20", "--workers", "2")
        assert rc == 0
        recall = json.loads((tmp_path / "recall.json").read_text())
        assert recall["recall@10"] >= 0.8
        assert "qps" in capsys.readouterr().out


class TestUsage:
    def test_no_command(self):
        with pytest.raises(SystemExit) as exc:
            run()
        assert exc.value.code == 1

    def test_unknown_flag(self, files, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("exact", "--input", files / "data.fvecs",
                "--queries", files / "queries.fvecs",
                "--out", tmp_path / "o", "--bogus")
        assert exc.value.code == 1
