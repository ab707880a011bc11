import math
import os
import pathlib
import tempfile

import numpy as np
import pytest

import xrecap

SOURCE = pathlib.Path(os.environ.get("XRECAP_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))
DATA = SOURCE / "tests" / "data"


def unit_rows(rng, n, d):
    m = rng.standard_normal((n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def test_identical_rows_give_log_n():
    for n in (2, 8, 64):
        t = np.tile(unit_rows(np.random.default_rng(n), 1, 16), (n, 1))
        loss, grad = xrecap.contrastive_loss(t, t, 0.07)
        assert abs(loss - math.log(n)) < 1e-9
        assert grad.shape == (n, 16)


def test_contrastive_loss_rejects_bad_input():
    with pytest.raises(xrecap.XrecapError):
        xrecap.contrastive_loss(np.ones((1, 4)) / 2, np.ones((1, 4)) / 2)


def test_knn_orders_by_similarity():
    rows = np.eye(3)
    out = xrecap.knn(["a", "b", "c"], rows, [0.0, 0.8, 0.6], 2)
    assert [i for i, _ in out] == ["b", "c"]


def test_rank_all_and_report():
    g = np.eye(4)
    ranks = xrecap.rank_all(["q0", "q1"], g[:2], ["g0", "g1", "g2", "g3"], g, {"q0": "g0", "q1": "g3"})
    assert dict(ranks)["q0"] == 1
    assert dict(ranks)["q1"] > 1
    report = xrecap.recall_report_from_ranks([1, 6, 20], [1, 1, 11])
    assert report["i2t_r1"] == pytest.approx(100 / 3)
    assert xrecap.mean_recall(1, 2, 3, 4, 5, 6) == pytest.approx(3.5)


def test_rouge():
    assert xrecap.rouge("the cat sat", "the cat ran", "rouge1") == pytest.approx(2 / 3)
    assert xrecap.rouge("a b", "a b", "rougeL") == 1.0


def test_prompts_match_golden_files():
    guidance = ("A man rides a bicycle down the road.", "A cyclist in a red jacket rides along the road.")
    text = "Two dogs run across a snowy field."
    for strategy, g in (("paraphrase", None), ("diverse", None), ("targeted", guidance)):
        want = (DATA / "golden" / f"prompt_{strategy}.txt").read_text(encoding="utf-8")
        assert xrecap.render_prompt(strategy, text, g) == want
    assert xrecap.parse_final(xrecap.wrap_final("A dog.")) == "A dog."
    with pytest.raises(xrecap.XrecapError):
        xrecap.render_prompt("targeted", text)


def test_supercategory_lookup():
    tl = DATA / "termlens"
    assert xrecap.supercategory_of("sofa", tl / "edges.tsv", tl / "lemmas.tsv", tl / "supercategories.tsv") == "furniture"


def test_pipeline_runs_end_to_end():
    base = pathlib.Path(os.environ.get("XRECAP_TEST_TMP", tempfile.gettempdir()))
    base.mkdir(parents=True, exist_ok=True)
    out = tempfile.mkdtemp(prefix="pipeline_", dir=base)
    cfg = xrecap.load_config(SOURCE / "configs" / "synthetic.toml")
    assert cfg["train"]["batch_size"] == 32
    reports = xrecap.run_pipeline(SOURCE / "configs" / "synthetic.toml", out)
    assert set(reports) == {"untrained", "mt", "aug", "native"}
    assert reports["aug"]["mean"]["mean_recall"] > reports["mt"]["mean"]["mean_recall"]
    manifest = pathlib.Path(out) / "manifests" / "pipeline-all.json"
    assert xrecap.verify_manifest(manifest) == []
