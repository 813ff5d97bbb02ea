import json

import numpy as np
import pytest

from kgreader.pipeline.experiment import ExperimentConfig, run_experiment, sweep_passages, synth_workspace
from kgreader.pipeline.synth import SynthSpec
from kgreader.pipeline.training import predict
from kgreader.reader import Reader

TINY = {"d": "16", "heads": "2", "enc_layers": "2", "dec_layers": "1", "steps": "6", "warmup_steps": "2",
        "batch_size": "4", "eval_every": "3", "synth_n_entities": "60", "synth_n_relations": "3",
        "synth_n_triples": "120", "synth_n_train": "30", "synth_n_dev": "8", "synth_n_test": "10", "seeds": "0"}


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    cfg = ExperimentConfig.from_dict(TINY)
    ws = synth_workspace(cfg.synth, tmp_path_factory.mktemp("data"))
    return cfg, ws


def test_config_from_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# desk run\nd = 16\nheads = 2\nsteps = 40\nwarmup_steps = 4\nvariants = full, no_rel\n"
                    "seeds = 1 2\nk_values = 1,3\nsynth_n_entities = 90\nsynth_gold_rank_probs = 0.5 0.5\n"
                    "precision = 64\n")
    cfg = ExperimentConfig.from_file(path, steps="50")
    assert cfg.reader.d == 16 and cfg.train.steps == 50 and cfg.train.warmup_steps == 4
    assert cfg.variants == ("full", "no_rel") and cfg.seeds == (1, 2) and cfg.k_values == (1, 3)
    assert cfg.synth.n_entities == 90 and cfg.synth.gold_rank_probs == (0.5, 0.5)
    # keys shared by the reader and the trainer reach both
    assert cfg.reader.precision == 64 and cfg.train.precision == 64
    one = cfg.with_seed(7)
    assert one.seeds == (7,) and one.train.seed == 7


def test_config_rejects_unknown_keys_and_variants():
    with pytest.raises(ValueError, match="unknown config key"):
        ExperimentConfig.from_dict({"dd": "3"})
    with pytest.raises(ValueError, match="unknown variants"):
        ExperimentConfig.from_dict({"variants": "full, fancy"})


def test_single_variant_gives_single_report(tiny, tmp_path):
    cfg, ws = tiny
    cfg = ExperimentConfig(cfg.reader, cfg.train, cfg.synth, variants=("full",), seeds=(0,))
    res = run_experiment(cfg, ws, out_dir=tmp_path)
    assert list(res.reports) == [0] and list(res.reports[0].variants) == ["full"]
    assert res.mean_deltas == {}
    for name in ("summary.json", "summary.txt", "seed0/report.json", "seed0/report.txt",
                 "seed0/full/metrics.jsonl", "seed0/full/predictions.txt", "seed0/full/checkpoint/model.ckpt"):
        assert (tmp_path / name).exists(), name


def test_variants_consume_identical_batches(tiny, tmp_path):
    cfg, ws = tiny
    res = run_experiment(cfg, ws, out_dir=tmp_path, keep_models=True)
    logs = {v: [json.loads(line)["batch_hash"] for line in (tmp_path / "seed0" / v / "metrics.jsonl").open()]
            for v in cfg.variants}
    assert len({tuple(h) for h in logs.values()}) == 1 and len(logs["full"]) == 2
    assert set(res.mean_deltas) == {"full", "no_rel"}
    assert "relation_discriminative_em" in res.mean["full"]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["mean"] == json.loads(json.dumps(res.mean))
    # the saved checkpoint reproduces the in-memory predictions exactly
    model = res.models[(0, "full")]
    back = Reader.load(tmp_path / "seed0" / "full" / "checkpoint")
    test = ws.prepare("test", model.config)
    assert predict(back, test, ws.vocab) == predict(model, test, ws.vocab)
    assert (tmp_path / "seed0" / "full" / "predictions.txt").read_text().splitlines() == \
        predict(model, test, ws.vocab)


def test_sweep_dedupes_and_sorts(tiny, tmp_path):
    cfg, ws = tiny
    model = Reader(cfg.reader.replace(vocab_size=len(ws.vocab)), seed=0,
                   rel_tokens=ws.preprocessor(cfg.reader).relation_tokens())
    test = ws.prepare("test", model.config, k=5)
    res = sweep_passages(model, test, [3, 1, 3, 5], ws.vocab, out_dir=tmp_path)
    assert res.k_values == [1, 3, 5] and len(res.em) == 3
    assert (tmp_path / "sweep.tsv").read_text().count("\n") == 3
    single = sweep_passages(model, test, [1], ws.vocab)
    assert single.k_values == [1] and single.to_table().splitlines()[0].split() == ["k", "1"]
    with pytest.raises(ValueError):
        sweep_passages(model, test, [0], ws.vocab)


def test_same_seed_experiments_write_identical_logs(tiny, tmp_path):
    cfg, ws = tiny
    cfg = ExperimentConfig(cfg.reader, cfg.train, cfg.synth, variants=("full", "baseline"), seeds=(0,))
    for name in ("a", "b"):
        run_experiment(cfg, ws, out_dir=tmp_path / name)
    for v in cfg.variants:
        a = (tmp_path / "a" / "seed0" / v / "metrics.jsonl").read_bytes()
        assert a == (tmp_path / "b" / "seed0" / v / "metrics.jsonl").read_bytes()
    assert np.isclose(json.loads((tmp_path / "a" / "summary.json").read_text())["mean"]["full"]["em"],
                      json.loads((tmp_path / "b" / "summary.json").read_text())["mean"]["full"]["em"])
