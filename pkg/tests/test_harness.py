import csv
import os
import subprocess

import numpy as np
import pytest

import pyFedFlow as pff
from pyFedFlow import harness

TINY = [
    "--dt", "0.05", "--transient-start", "-5", "--production-end", "25", "--test-end", "35",
    "--clients", "3", "--rounds", "3", "--latent-dim", "4", "--hidden-dims", "16",
    "--r-sweep", "2,4", "--error-field-r", "4", "--central-batch-size", "40", "--log-level", "WARNING",
]


def run(command, output_dir, *extra):
    return harness.main([command, *TINY, "--output-dir", str(output_dir), *extra])


def read_rows(path):
    with open(path, newline="") as file:
        return list(csv.reader(file))


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("run")
    assert run("generate", path) == 0
    return path


def test_generate_writes_dataset_and_transient(workdir):
    splits = pff.load_dataset(str(workdir / "dataset.ksds"))
    assert (len(splits.train), len(splits.validation), len(splits.test)) == (80, 20, 40)
    assert pff.load_field(str(workdir / "transient.ksef")).shape == (20, 64)


def test_generate_is_reproducible(workdir, tmp_path):
    assert run("generate", tmp_path) == 0
    assert (tmp_path / "dataset.ksds").read_bytes() == (workdir / "dataset.ksds").read_bytes()


def test_pod_csv(workdir):
    assert run("pod", workdir, "--r-sweep", "2,4,8,64") == 0
    rows = read_rows(workdir / "pod_mse.csv")
    assert rows[0] == ["R", "train_mse", "test_mse"]
    test_mse = [float(r[2]) for r in rows[1:]]
    assert [int(r[0]) for r in rows[1:]] == [2, 4, 8, 64]
    assert all(a >= b for a, b in zip(test_mse, test_mse[1:]))
    assert test_mse[-1] < 1e-9


def test_train_central_history_matches_checkpoint(workdir):
    assert run("train", workdir, "--mode", "central") == 0
    rows = read_rows(workdir / "history-central-R4.csv")
    assert rows[0] == ["round", "train_loss", "val_loss", "wall_ms"]
    assert len(rows) == 4
    assert all(r[3] == "0" for r in rows[1:])

    splits = pff.load_dataset(str(workdir / "dataset.ksds")).scaled()
    params = pff.load_checkpoint(str(workdir / "ae-central-R4.fwts"))
    spec = pff.ArchitectureSpec.from_shapes(params.shapes)
    assert abs(pff.evaluate_loss(params, spec, splits.train) - float(rows[-1][1])) <= 1e-9


def test_train_federated_history_matches_checkpoint(workdir):
    assert run("train", workdir, "--mode", "federated") == 0
    rows = read_rows(workdir / "history-federated-R4.csv")
    splits = pff.load_dataset(str(workdir / "dataset.ksds")).scaled()
    params = pff.load_checkpoint(str(workdir / "ae-federated-R4.fwts"))
    spec = pff.ArchitectureSpec.from_shapes(params.shapes)
    assert abs(pff.evaluate_loss(params, spec, splits.train) - float(rows[-1][1])) <= 1e-9


def test_train_sweep_and_evaluate(workdir):
    assert run("train", workdir, "--mode", "federated", "--sweep") == 0
    assert run("train", workdir, "--mode", "central", "--sweep") == 0
    for R in (2, 4):
        assert os.path.exists(workdir / f"ae-federated-R{R}.fwts")
        assert len(read_rows(workdir / f"history-federated-R{R}.csv")) == 4

    assert run("evaluate", workdir) == 0
    rows = read_rows(workdir / "report.csv")
    assert rows[0] == ["method", "R", "test_mse_physical"]
    found = {(r[0], int(r[1])) for r in rows[1:]}
    assert found == {(m, R) for m in pff.VALID_REPORT_METHODS for R in (2, 4)}
    assert all(float(r[2]) >= 0.0 for r in rows[1:])

    test = pff.load_field(str(workdir / "test-true.ksef"))
    assert test.shape == (40, 64)
    for method in pff.VALID_REPORT_METHODS:
        field = pff.load_field(str(workdir / f"error-{method}-R4.ksef"))
        assert field.shape == test.shape
        assert np.all(field >= 0.0)


def test_error_field_of_perfect_prediction_is_zero(splits):
    assert np.all(harness.error_field(splits.test, splits.test) == 0.0)
    with pytest.raises(ValueError):
        harness.error_field(splits.test, splits.test[:3])


def test_socket_clients_reproduce_in_process_training(workdir, tmp_path):
    dataset = str(workdir / "dataset.ksds")
    common = ["--mode", "federated", "--rounds", "20", "--dataset", dataset]
    assert run("train", tmp_path / "inproc", *common) == 0
    assert run("train", tmp_path / "socket", *common, "--transport", "socket") == 0
    inproc = (tmp_path / "inproc" / "history-federated-R4.csv").read_bytes()
    assert (tmp_path / "socket" / "history-federated-R4.csv").read_bytes() == inproc
    assert ((tmp_path / "socket" / "ae-federated-R4.fwts").read_bytes()
            == (tmp_path / "inproc" / "ae-federated-R4.fwts").read_bytes())


def test_main_exit_codes(tmp_path):
    assert run("pod", tmp_path) == 1
    assert harness.main(["pod", "--mode", "solo"]) == 2


def test_client_shard_bounds(workdir):
    cfg = pff.ExperimentConfig(dt=0.05, transient_start=-5.0, production_end=25.0, test_end=35.0, clients=3,
                               latent_dim=4, hidden_dims=(16,), output_dir=str(workdir))
    with pytest.raises(ValueError):
        harness.cmd_client(cfg, "127.0.0.1:1", 3)


@pytest.mark.slow
def test_desk_preset_reproduces_qualitative_ordering(tmp_path):
    base = ["--preset", "desk", "--output-dir", str(tmp_path), "--partition", "strided", "--log-level", "WARNING"]
    assert harness.main(["generate", *base]) == 0
    assert harness.main(["train", *base, "--mode", "central", "--sweep", "--r-sweep", "4,8,12"]) == 0
    assert harness.main(["train", *base, "--mode", "federated"]) == 0
    assert harness.main(["evaluate", *base, "--r-sweep", "4,8,12"]) == 0

    report = {(r[0], int(r[1])): float(r[2]) for r in read_rows(tmp_path / "report.csv")[1:]}
    assert report[("ae-central", 8)] < report[("pod", 8)]
    assert report[("ae-federated", 8)] < report[("pod", 8)]
    gain_low = report[("ae-central", 4)] - report[("ae-central", 8)]
    gain_high = report[("ae-central", 8)] - report[("ae-central", 12)]
    assert gain_high < gain_low

    central = read_rows(tmp_path / "history-central-R8.csv")
    federated = read_rows(tmp_path / "history-federated-R8.csv")
    v_central, v_federated = float(central[-1][2]), float(federated[-1][2])
    assert abs(v_federated - v_central) / v_central <= 0.5


class LingeringProcess:
    pid = 4242

    def __init__(self):
        self.killed = False

    def wait(self, timeout=None):
        if not self.killed:
            raise subprocess.TimeoutExpired("pyFedFlow client", timeout)
        return -9

    def kill(self):
        self.killed = True


def test_lingering_client_process_is_killed():
    proc = LingeringProcess()
    harness._reap_clients([proc], 0.01)
    assert proc.killed
