"""End-to-end checks of the tagxfer command-line tool.

Usage: test_cli.py --cli PATH --schemas DIR
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema

CLI = None
SCHEMAS = None

SMALL = {
    "model": {"char_emb_dim": 4, "char_lstm_hidden": 4, "word_emb_dim": 12, "fe_hidden": 10, "random_branch_k": 8},
    "train": {"max_epochs": 3, "snapshot_epochs": [0, 3]},
    "synth": {
        "source_train_sentences": 60,
        "source_val_sentences": 20,
        "target_train_sentences": 20,
        "target_val_sentences": 25,
    },
}


def run(*args, env=None, cwd=None):
    full_env = dict(os.environ)
    full_env.pop("TAGXFER_OUT", None)
    if env:
        full_env.update(env)
    return subprocess.run([CLI, *map(str, args)], capture_output=True, text=True, env=full_env, cwd=cwd)


def validate(path, schema):
    with open(SCHEMAS / f"{schema}.schema.json") as f:
        jsonschema.validate(json.loads(Path(path).read_text()), json.load(f))


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Pipeline(unittest.TestCase):
    """One synth -> pretrain -> adapt run shared by the tests below."""

    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)
        config = dict(SMALL)
        config["paths"] = {
            "source_train": "data/source_train.conll",
            "source_val": "data/source_val.conll",
            "target_train": "data/target_train.conll",
            "target_val": "data/target_val.conll",
        }
        cls.config = cls.dir / "exp.json"
        cls.config.write_text(json.dumps(config))
        cls.check(run("synth", "-c", cls.config, "-o", cls.dir / "data"))
        cls.check(run("pretrain", "-c", cls.config, "-o", cls.dir / "src"))
        cls.ckpt = cls.dir / "src" / "model.ckpt"
        for scheme in ("scratch", "sft", "pretrand"):
            cls.check(
                run("adapt", "-c", cls.config, "--scheme", scheme, "--from-checkpoint", cls.ckpt,
                    "--warmup-epochs", "1", "-o", cls.dir / scheme)
            )

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    @staticmethod
    def check(proc):
        if proc.returncode != 0:
            raise AssertionError(f"exit {proc.returncode}: {proc.stderr}")
        return proc

    def test_synth_writes_split_files_and_manifest(self):
        data = self.dir / "data"
        for name in ("source_train", "source_val", "target_train", "target_val"):
            self.assertTrue((data / f"{name}.conll").exists(), name)
        validate(data / "manifest.json", "synth_manifest")
        manifest = json.loads((data / "manifest.json").read_text())
        self.assertEqual(manifest["rho"], 0.3)
        self.assertEqual(manifest["splits"]["target_train"]["sentences"], 20)

    def test_synth_same_seed_is_byte_identical(self):
        again = self.dir / "data_again"
        self.check(run("synth", "-c", self.config, "-o", again))
        for f in (self.dir / "data").iterdir():
            self.assertEqual(digest(f), digest(again / f.name), f.name)

    def test_synth_invalid_rho_is_a_usage_error(self):
        self.assertEqual(run("synth", "--rho", "1.5", "-o", self.dir / "bad").returncode, 2)

    def test_pretrain_rerun_is_byte_identical(self):
        again = self.dir / "src_again"
        self.check(run("pretrain", "-c", self.config, "-o", again))
        self.assertEqual(digest(self.ckpt), digest(again / "model.ckpt"))
        self.assertEqual(digest(self.dir / "src" / "run_record.json"), digest(again / "run_record.json"))

    def test_adapt_rerun_is_byte_identical(self):
        again = self.dir / "pretrand_again"
        self.check(run("adapt", "-c", self.config, "--scheme", "pretrand", "--from-checkpoint", self.ckpt,
                       "--warmup-epochs", "1", "-o", again))
        for name in ("model.ckpt", "run_record.json", "eval_val.json", "predictions_val.tsv"):
            self.assertEqual(digest(self.dir / "pretrand" / name), digest(again / name), name)

    def test_emitted_json_matches_schemas(self):
        validate(self.dir / "src" / "run_record.json", "run_record")
        validate(self.dir / "src" / "config.json", "experiment_config")
        validate(self.config, "experiment_config")
        for scheme in ("scratch", "sft", "pretrand"):
            validate(self.dir / scheme / "run_record.json", "run_record")
            validate(self.dir / scheme / "eval_val.json", "eval")
        for snap in (self.dir / "pretrand" / "snapshots").glob("*.json"):
            validate(snap, "activation_snapshot")

    def test_pretrand_writes_both_branch_snapshots(self):
        names = {p.name for p in (self.dir / "pretrand" / "snapshots").iterdir()}
        for branch in ("pretrained", "random"):
            for epoch in (0, 3):
                self.assertIn(f"{branch}_epoch{epoch}.json", names)
                self.assertIn(f"{branch}_epoch{epoch}.bin", names)

    def test_adapt_scheme_checkpoint_rules(self):
        proc = run("adapt", "-c", self.config, "--scheme", "sft", "-o", self.dir / "x")
        self.assertEqual(proc.returncode, 2)
        self.assertIn("checkpoint", proc.stderr)
        self.assertIn("ignores the checkpoint", self.check(
            run("adapt", "-c", self.config, "--scheme", "scratch", "--from-checkpoint", self.ckpt, "--epochs", "1",
                "--no-snapshots", "-o", self.dir / "scratch_warn")).stderr)
        self.assertEqual(run("adapt", "-c", self.config, "--scheme", "nope", "-o", self.dir / "x").returncode, 2)

    def test_evaluate_reproduces_recorded_best_metric(self):
        for scheme in ("sft", "pretrand"):
            out = self.dir / f"eval_{scheme}"
            proc = self.check(run("evaluate", "-c", self.config, "--checkpoint", self.dir / scheme / "model.ckpt",
                                  "--split", "val", "-o", out))
            result = json.loads(proc.stdout)
            record = json.loads((self.dir / scheme / "run_record.json").read_text())
            self.assertEqual(result["token_accuracy"], record["best_val_metric"], scheme)
            validate(out / "eval_val.json", "eval")

    def test_evaluate_test_split_needs_a_corpus(self):
        proc = run("evaluate", "-c", self.config, "--checkpoint", self.ckpt, "--split", "test", "-o", self.dir / "x")
        self.assertEqual(proc.returncode, 2)

    def test_evaluate_tagset_mismatch(self):
        odd = self.dir / "odd.conll"
        odd.write_text("word\tNOT_A_TAG\n\n")
        proc = run("evaluate", "--checkpoint", self.ckpt, "--corpus", odd, "-o", self.dir / "x")
        self.assertEqual(proc.returncode, 2)

    def test_diagnose_reports(self):
        out = self.dir / "diag"
        preds = lambda s: self.dir / s / "predictions_val.tsv"
        proc = self.check(run("diagnose", "transfer", "--baseline", preds("scratch"), "--transfer", preds("sft"),
                              "-o", out))
        validate(out / "transfer_report.json", "transfer_report")
        report = json.loads((out / "transfer_report.json").read_text())
        self.assertAlmostEqual(report["pt"] - report["nt"],
                               report["accuracy_transfer"] - report["accuracy_baseline"], places=12)
        self.assertIn("gain", proc.stdout)

        self.check(run("diagnose", "perclass", "--baseline", preds("scratch"), "--transfer", preds("pretrand"),
                       "-o", out))
        validate(out / "per_class.json", "per_class")

        snaps = self.dir / "pretrand" / "snapshots"
        self.check(run("diagnose", "correlation", "--before", snaps / "pretrained_epoch0.json",
                       "--after", snaps / "pretrained_epoch3.json", "-o", out))
        validate(out / "correlation.json", "correlation")
        rows = (out / "correlation.csv").read_text().splitlines()
        units = json.loads((out / "correlation.json").read_text())["units"]
        self.assertEqual(len(rows), units)
        self.assertTrue(all(len(r.split(",")) == units for r in rows))

        self.check(run("diagnose", "topk", "--snapshot", snaps / "random_epoch0.json",
                       "--snapshot", snaps / "random_epoch3.json", "-k", "4", "-o", out))
        tsv = (out / "topk.tsv").read_text()
        self.assertIn("# unit 0", tsv)
        self.assertIn("epoch_3", tsv)

        self.check(run("diagnose", "weights", "--checkpoint", self.dir / "pretrand" / "model.ckpt", "--bins", "7",
                       "-o", out))
        validate(out / "weight_histogram.json", "weight_histogram")
        hist = json.loads((out / "weight_histogram.json").read_text())
        self.assertEqual(set(hist["counts"]), {"pretrained", "random"})
        self.assertEqual(len(hist["edges"]), 8)

    def test_diagnose_rejects_mismatched_snapshots(self):
        snaps = self.dir / "pretrand" / "snapshots"
        proc = run("diagnose", "correlation", "--before", snaps / "pretrained_epoch0.json",
                   "--after", snaps / "random_epoch3.json", "-o", self.dir / "x")
        self.assertEqual(proc.returncode, 2)

    def test_commands_leave_inputs_untouched(self):
        inputs = list((self.dir / "data").glob("*.conll")) + [self.ckpt, self.config]
        before = {p: digest(p) for p in inputs}
        self.check(run("evaluate", "-c", self.config, "--checkpoint", self.ckpt, "-o", self.dir / "ro"))
        self.check(run("adapt", "-c", self.config, "--scheme", "sft", "--from-checkpoint", self.ckpt, "--epochs", "1",
                       "--no-snapshots", "-o", self.dir / "ro"))
        self.assertEqual(before, {p: digest(p) for p in inputs})


class ToyCorpus(unittest.TestCase):
    def test_overfit_bio_model_scores_perfectly_with_spans(self):
        with tempfile.TemporaryDirectory() as tmp:
            tmp = Path(tmp)
            corpus = tmp / "ner.conll"
            corpus.write_text(
                "Anna\tB-PER\nlives\tO\nin\tO\nRome\tB-LOC\n\n"
                "Bob\tB-PER\nSmith\tI-PER\nvisits\tO\nParis\tB-LOC\n\n"
                "the\tO\nUN\tB-ORG\nmet\tO\n\n"
            )
            proc = run("pretrain", "--train", corpus, "--epochs", "40", "--no-early-stopping", "--no-snapshots",
                       "--char-emb-dim", "4", "--char-hidden", "4", "--word-dim", "8", "--fe-hidden", "8",
                       "--lr", "0.05", "-o", tmp / "m")
            self.assertEqual(proc.returncode, 0, proc.stderr)
            proc = run("evaluate", "--checkpoint", tmp / "m" / "model.ckpt", "--corpus", corpus, "-o", tmp / "e")
            self.assertEqual(proc.returncode, 0, proc.stderr)
            result = json.loads(proc.stdout)
            self.assertEqual(result["token_accuracy"], 1.0)
            self.assertIsNotNone(result["span_f1"])
            self.assertEqual(result["span_f1"]["f1"], 1.0)
            self.assertEqual(result["span_f1"]["gold_spans"], 5)


class ConfigHandling(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, obj):
        p = self.dir / name
        p.write_text(json.dumps(obj))
        return p

    def test_unknown_keys_are_rejected(self):
        for bad in ({"train": {"bogus": 1}}, {"nope": {}}, {"paths": {"corpus": "x"}}, {"model": {"layers": 2}},
                    {"synth": {"rh0": 0.1}}):
            proc = run("synth", "-c", self.write("bad.json", bad), "-o", self.dir / "out")
            self.assertEqual(proc.returncode, 2, bad)
            self.assertIn("unknown", proc.stderr)

    def test_missing_paths_and_files(self):
        self.assertEqual(run("pretrain", "-c", self.dir / "absent.json").returncode, 2)
        cfg = self.write("c.json", {"paths": {"source_train": "missing.conll"}})
        proc = run("pretrain", "-c", cfg)
        self.assertEqual(proc.returncode, 2)
        self.assertIn("missing.conll", proc.stderr)
        self.assertEqual(run("pretrain").returncode, 2)
        self.assertEqual(run("diagnose", "anrg", "-o", self.dir / "x").returncode, 2)
        self.assertEqual(run("diagnose").returncode, 2)
        self.assertEqual(run("frobnicate").returncode, 2)

    def test_bad_values_are_usage_errors(self):
        cfg = self.write("c.json", {"train": {"max_epochs": "many"}})
        self.assertEqual(run("synth", "-c", cfg, "-o", self.dir / "x").returncode, 2)
        self.assertEqual(run("synth", "-c", self.write("n.json", [1, 2]), "-o", self.dir / "x").returncode, 2)
        (self.dir / "broken.json").write_text("{")
        self.assertEqual(run("synth", "-c", self.dir / "broken.json", "-o", self.dir / "x").returncode, 2)

    def test_output_dir_precedence(self):
        cfg = self.write("c.json", {"paths": {"output_dir": "from_config"}, "synth": SMALL["synth"]})
        self.assertEqual(run("synth", "-c", cfg, cwd=self.dir).returncode, 0)
        self.assertTrue((self.dir / "from_config" / "manifest.json").exists())
        self.assertEqual(run("synth", "-c", cfg, env={"TAGXFER_OUT": str(self.dir / "from_env")}).returncode, 0)
        self.assertTrue((self.dir / "from_env" / "manifest.json").exists())
        self.assertEqual(
            run("synth", "-c", cfg, "-o", self.dir / "from_flag", env={"TAGXFER_OUT": str(self.dir / "e2")}).returncode,
            0)
        self.assertTrue((self.dir / "from_flag" / "manifest.json").exists())
        self.assertFalse((self.dir / "e2").exists())

    def test_flags_override_config(self):
        cfg = self.write("c.json", {"synth": dict(SMALL["synth"], rho=0.1)})
        self.assertEqual(run("synth", "-c", cfg, "--rho", "0.6", "--seed", "9", "-o", self.dir / "o").returncode, 0)
        manifest = json.loads((self.dir / "o" / "manifest.json").read_text())
        self.assertEqual(manifest["rho"], 0.6)
        self.assertEqual(manifest["seed"], 9)

    def test_anrg_hand_example(self):
        table = self.dir / "scores.csv"
        table.write_text("approach,d1,d2\nref,50,50\nbest,60,70\nhalf,55,60\n")
        proc = run("diagnose", "anrg", "--table", table, "--reference", "ref", "-o", self.dir / "a")
        self.assertEqual(proc.returncode, 0, proc.stderr)
        validate(self.dir / "a" / "anrg.json", "anrg")
        values = json.loads((self.dir / "a" / "anrg.json").read_text())["values"]
        self.assertEqual(values["ref"], 0.0)
        self.assertAlmostEqual(values["best"], 1.0, places=12)
        self.assertAlmostEqual(values["half"], 0.5, places=12)


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--cli", required=True)
    parser.add_argument("--schemas", required=True)
    args, rest = parser.parse_known_args()
    CLI = str(Path(args.cli).resolve())
    SCHEMAS = Path(args.schemas)
    unittest.main(argv=[sys.argv[0], *rest], verbosity=2)
