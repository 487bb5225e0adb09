import hashlib
import json
import os

import numpy as np
import pytest

from adadfq.cli import RunConfig, evaluate_network, main, parse_config
from adadfq.data import Dataset
from adadfq.errors import ConfigError
from adadfq.tensor import Tensor

SMALL_CONFIG = """
# quick desk run for the command-line tests
classes = 3
per_class = 40
dim = 4
spread = 1.3
teacher_hidden = 16,16
teacher_epochs = 20
gen_hidden = 16,16
epochs = 2
iterations_per_epoch = 5
batch_size = 8
noise_dim = 16
cal_lr = 0.001
sample_dump = 12
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One teacher run shared by the downstream command tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.cfg"
    cfg_path.write_text(SMALL_CONFIG)
    out = root / "teacher"
    rc = main(["train-teacher", "--config", str(cfg_path),
               "--seed", "0", "--out-dir", str(out)])
    assert rc == 0
    return root, cfg_path, out


class TestParseConfig:
    def test_defaults_without_file(self):
        cfg = parse_config(None)
        assert cfg.bits == 3 and cfg.lambda_u == 0.8

    def test_overrides_and_comments(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("bits = 4  # comment\n\nseed=7\n")
        cfg = parse_config(str(p))
        assert cfg.bits == 4 and cfg.seed == 7

    def test_unknown_key_reports_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("bits = 4\nnot_a_key = 1\n")
        with pytest.raises(ConfigError, match=":2"):
            parse_config(str(p))

    def test_bad_value_type(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("bits = three\n")
        with pytest.raises(ConfigError, match="bits|three"):
            parse_config(str(p))

    def test_invalid_margin_combination(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("lambda_l = 0.9\nlambda_u = 0.1\n")
        with pytest.raises(ConfigError):
            parse_config(str(p))

    def test_missing_file(self):
        with pytest.raises(FileNotFoundError):
            parse_config("/nonexistent/path.cfg")

    def test_config_hash_sensitivity(self):
        assert RunConfig().config_hash() != RunConfig(bits=4).config_hash()
        assert RunConfig().config_hash() == RunConfig().config_hash()


class TestTrainTeacher:
    def test_outputs_exist(self, workdir):
        _, _, out = workdir
        for name in ("teacher.json", "teacher_metrics.json", "train.csv", "test.csv"):
            assert (out / name).exists()

    def test_metrics_reasonable(self, workdir):
        _, _, out = workdir
        metrics = json.loads((out / "teacher_metrics.json").read_text())
        assert metrics["test"]["accuracy"] > 0.8
        assert metrics["seed"] == 0


class TestQuantize:
    def test_quantize_reports_accuracy_drop(self, workdir, tmp_path):
        _, _, out = workdir
        qdir = tmp_path / "q"
        rc = main(["quantize", "--ckpt", str(out / "teacher.json"),
                   "--bits", "3", "--dataset", str(out / "test.csv"),
                   "--out-dir", str(qdir)])
        assert rc == 0
        report = json.loads((qdir / "quantize_report.json").read_text())
        assert report["bits"] == 3
        assert report["naive_quantized"]["accuracy"] <= report["teacher"]["accuracy"]
        assert (qdir / "student_naive_3bit.json").exists()

    def test_rejects_student_checkpoint(self, workdir, tmp_path):
        root, cfg_path, out = workdir
        ddir = root / "dfq_for_reject"
        rc = main(["dfq", "--ckpt", str(out / "teacher.json"),
                   "--config", str(cfg_path), "--seed", "0",
                   "--out-dir", str(ddir)])
        assert rc == 0
        rc = main(["quantize", "--ckpt", str(ddir / "student_dfq_3bit.json"),
                   "--bits", "3", "--dataset", str(out / "test.csv"),
                   "--out-dir", str(tmp_path / "bad")])
        assert rc == 3


@pytest.fixture(scope="module")
def dfq_out(workdir):
    root, cfg_path, out = workdir
    ddir = root / "dfq"
    rc = main(["dfq", "--ckpt", str(out / "teacher.json"),
               "--config", str(cfg_path), "--seed", "0",
               "--out-dir", str(ddir)])
    assert rc == 0
    return ddir


class TestDfq:
    def test_outputs_exist(self, dfq_out):
        for name in ("trace.csv", "equilibrium.json", "student_dfq_3bit.json",
                     "samples.csv", "similarity.csv"):
            assert (dfq_out / name).exists()

    def test_trace_schema_and_length(self, dfq_out):
        lines = (dfq_out / "trace.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        assert header[:4] == ["iter", "epoch", "loss_gen", "loss_cal"]
        assert "hprime_frac_in" in header
        assert len(lines) == 1 + 2 * 5  # header + epochs * iterations

    def test_equilibrium_report_matches_trace_recomputation(self, dfq_out):
        lines = (dfq_out / "trace.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        rows = [dict(zip(header, line.split(","))) for line in lines[1:]]
        window = max(1, len(rows) // 4)
        tail = rows[-window:]
        dg = np.array([float(r["delta_g"]) for r in tail])
        dq = np.array([float(r["delta_q"]) for r in tail])
        report = json.loads((dfq_out / "equilibrium.json").read_text())
        assert report["window"] == window
        assert report["mean_delta_g"] == pytest.approx(dg.mean(), abs=1e-12)
        assert report["mean_delta_q"] == pytest.approx(dq.mean(), abs=1e-12)
        assert report["mean_delta_sum"] == pytest.approx((dg + dq).mean(), abs=1e-12)

    def test_samples_csv_shape(self, dfq_out):
        lines = (dfq_out / "samples.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 12
        assert lines[0].split(",")[:2] == ["sample_index", "label"]

    def test_similarity_matrix_properties(self, dfq_out):
        rows = [[float(v) for v in line.split(",")]
                for line in (dfq_out / "similarity.csv").read_text().strip().splitlines()]
        m = np.asarray(rows)
        assert m.shape == (12, 12)
        np.testing.assert_allclose(m, m.T, atol=1e-12)
        np.testing.assert_allclose(np.diag(m), 0.0, atol=1e-12)
        assert m.min() >= 0.0

    def test_data_free_never_opens_dataset_files(self, workdir, monkeypatch):
        # run dfq with open() instrumented: no .csv may be read
        root, cfg_path, out = workdir
        opened = []
        real_open = open

        def spy(file, *a, **kw):
            opened.append(str(file))
            return real_open(file, *a, **kw)

        import builtins
        monkeypatch.setattr(builtins, "open", spy)
        ddir = root / "dfq_audit"
        rc = main(["dfq", "--ckpt", str(out / "teacher.json"),
                   "--config", str(cfg_path), "--seed", "0",
                   "--out-dir", str(ddir)])
        assert rc == 0
        read_csvs = [p for p in opened
                     if p.endswith(".csv") and not p.startswith(str(ddir))]
        assert read_csvs == []


class TestSimilarityMatrix:
    def test_hand_built_distances(self):
        from adadfq.cli import _l1_similarity

        pds = np.array([
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.5],
        ])
        m = _l1_similarity(pds)
        np.testing.assert_allclose(m, [
            [0.0, 2.0, 1.0],
            [2.0, 0.0, 1.0],
            [1.0, 1.0, 0.0],
        ])

    def test_identical_rows_give_zero_off_diagonal(self):
        from adadfq.cli import _l1_similarity

        pds = np.array([[0.3, 0.7], [0.3, 0.7]])
        np.testing.assert_allclose(_l1_similarity(pds), 0.0)


class TestEvaluateNetwork:
    class _Constant:
        """Predicts class 0 for everything."""

        def forward(self, x):
            logits = np.zeros((x.data.shape[0], 4))
            logits[:, 0] = 1.0
            return Tensor(logits)

    class _Perfect:
        def __init__(self, labels):
            self.labels = labels

        def forward(self, x):
            # cheats by looking up the true labels positionally
            n = x.data.shape[0]
            logits = np.zeros((n, 4))
            logits[np.arange(n), self.labels[:n]] = 1.0
            return Tensor(logits)

    def _balanced(self):
        feats = np.zeros((40, 2))
        labels = np.repeat(np.arange(4), 10)
        return Dataset(feats, labels, "test", "balanced")

    def test_constant_predictor_on_balanced_classes(self):
        ds = self._balanced()
        assert evaluate_network(self._Constant(), ds)["accuracy"] == 0.25

    def test_perfect_predictor(self):
        ds = self._balanced()
        assert evaluate_network(self._Perfect(ds.labels), ds)["accuracy"] == 1.0


class TestEval:
    def test_matches_recorded_teacher_metrics_exactly(self, workdir, tmp_path):
        _, _, out = workdir
        report_path = tmp_path / "teacher_eval.json"
        rc = main(["eval", "--ckpt", str(out / "teacher.json"),
                   "--dataset", str(out / "test.csv"),
                   "--out", str(report_path)])
        assert rc == 0
        acc = json.loads(report_path.read_text())["accuracy"]
        recorded = json.loads((out / "teacher_metrics.json").read_text())
        assert acc == recorded["test"]["accuracy"]

    def test_eval_teacher(self, workdir, tmp_path):
        _, _, out = workdir
        report_path = tmp_path / "eval.json"
        rc = main(["eval", "--ckpt", str(out / "teacher.json"),
                   "--dataset", str(out / "test.csv"),
                   "--out", str(report_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert 0.0 <= report["accuracy"] <= 1.0
        assert len(report["confusion"]) == 3


class TestReportSimilarity:
    def test_round_trip_matches_dfq_output(self, workdir):
        root, cfg_path, out = workdir
        ddir = root / "dfq"
        out_path = root / "sim_again.csv"
        rc = main(["report-similarity", "--samples", str(ddir / "samples.csv"),
                   "--ckpt", str(out / "teacher.json"),
                   "--student-ckpt", str(ddir / "student_dfq_3bit.json"),
                   "--out", str(out_path)])
        assert rc == 0
        assert out_path.read_text() == (ddir / "similarity.csv").read_text()


class TestExitCodes:
    def test_missing_config_file_is_usage_error(self, tmp_path):
        rc = main(["train-teacher", "--config", "/does/not/exist.cfg",
                   "--out-dir", str(tmp_path)])
        assert rc == 2

    def test_bad_config_value_is_usage_error(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("bogus_key = 1\n")
        rc = main(["train-teacher", "--config", str(p), "--out-dir", str(tmp_path)])
        assert rc == 2

    def test_corrupt_checkpoint_is_runtime_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["eval", "--ckpt", str(bad), "--dataset", str(bad)])
        assert rc == 3

    def test_missing_csv_dataset_names_path(self, tmp_path):
        import contextlib
        import io

        p = tmp_path / "c.cfg"
        p.write_text("dataset = csv\ncsv_path = /missing/data.csv\n")
        err = io.StringIO()
        with contextlib.redirect_stderr(err):
            rc = main(["train-teacher", "--config", str(p),
                       "--out-dir", str(tmp_path / "out")])
        assert rc == 2
        assert "/missing/data.csv" in err.getvalue()

    def test_missing_dataset_is_usage_error(self, workdir):
        _, _, out = workdir
        rc = main(["eval", "--ckpt", str(out / "teacher.json"),
                   "--dataset", "/does/not/exist.csv"])
        assert rc == 2


class TestDeterminism:
    def test_two_dfq_runs_hash_identically(self, workdir):
        root, cfg_path, out = workdir

        def run(name):
            d = root / name
            rc = main(["dfq", "--ckpt", str(out / "teacher.json"),
                       "--config", str(cfg_path), "--seed", "3",
                       "--out-dir", str(d)])
            assert rc == 0
            return {
                f: hashlib.sha256((d / f).read_bytes()).hexdigest()
                for f in sorted(os.listdir(d))
            }

        assert run("det_a") == run("det_b")
