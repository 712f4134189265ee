#!/usr/bin/env python3
"""
Tests for the em-boundary-net command line.

Runs every subcommand end to end on small synthetic stacks and checks the
documented exit codes.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to Python path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent / "src"))

from em_boundary_net.cli.main import create_parser, expand_grid, main
from em_boundary_net.core.netgraph import init_params
from em_boundary_net.core.training import derive_boundary_labels
from em_boundary_net.data.checkpoint import load_checkpoint, save_checkpoint
from em_boundary_net.data.volume_io import read_volume, write_volume


@pytest.fixture
def dataset(tmp_path):
    """One synthetic 32 x 32 x 2 stack."""
    out = tmp_path / "data"
    assert main(["synth", "--out", str(out), "--dims", "32,32,2", "--cells", "4",
                 "--stacks", "1"]) == 0
    return out


@pytest.fixture
def net_file(tmp_path, tiny_spec):
    path = tmp_path / "tiny.net"
    path.write_text(tiny_spec.source_text)
    return path


@pytest.fixture
def trained(tmp_path, dataset, net_file):
    """A checkpoint trained for three updates."""
    ckpt = tmp_path / "tiny.ckpt"
    status = main(["train", "--net", str(net_file), "--data", str(dataset), "--updates", "3",
                   "--patch", "4,4,1", "--log-every", "1", "--no-tune", "--deterministic",
                   "--threads", "1", "--out", str(ckpt)])
    assert status == 0
    return ckpt


def test_help_exits_cleanly(capsys):
    """--help prints usage and exits 0."""
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    assert "recursive" in capsys.readouterr().out


def test_usage_errors_exit_one():
    """Unknown subcommands and malformed triples are usage errors."""
    with pytest.raises(SystemExit) as excinfo:
        main(["segment"])
    assert excinfo.value.code == 1
    with pytest.raises(SystemExit) as excinfo:
        create_parser().parse_args(["bench", "--net", "n4", "--shape", "10,10"])
    assert excinfo.value.code == 1


@pytest.mark.parametrize("entry", ["t=", "t=,", "=0.5", "t=0.3,x"])
def test_empty_or_malformed_grid_is_usage_error(entry, capsys, tmp_path):
    """A grid entry without a name or values stops at argument parsing with one line."""
    with pytest.raises(SystemExit) as excinfo:
        main(["eval", "--map", str(tmp_path / "map"), "--truth", str(tmp_path / "truth"),
              "--algo", "cc", "--grid", entry])
    assert excinfo.value.code == 1
    err = capsys.readouterr().err
    assert err.strip().splitlines()[-1].startswith("em-boundary-net eval: error:")
    assert "Traceback" not in err


def test_expand_grid():
    """Grid entries expand to their cartesian product."""
    grid = expand_grid([("t_low", [0.1, 0.2]), ("t_high", [0.8]), ("min_size", [0.0])])
    assert grid == [{"t_low": 0.1, "t_high": 0.8, "min_size": 0.0},
                    {"t_low": 0.2, "t_high": 0.8, "min_size": 0.0}]


def test_synth_writes_named_stacks(dataset):
    """Stacks are written as image/labels volume pairs."""
    assert sorted(p.name for p in dataset.iterdir()) == [
        "stack1_image.meta", "stack1_image.raw", "stack1_labels.meta", "stack1_labels.raw"]


def test_train_writes_checkpoint_and_log(trained):
    """The default log sits next to the checkpoint and starts with the run settings."""
    checkpoint = load_checkpoint(trained)
    assert checkpoint.update == 3
    assert checkpoint.has_momentum
    lines = trained.with_name(trained.name + ".log").read_text().splitlines()
    assert lines[0].startswith("# lr=0.01 momentum=0.9")
    records = [line.split() for line in lines if not line.startswith("#")]
    assert [int(r[0]) for r in records] == [1, 2, 3]
    assert all(len(r) == 4 for r in records)


def test_train_resume_continues_counter(trained, dataset):
    """Resuming takes the spec and counter from the checkpoint."""
    out = trained.with_name("resumed.ckpt")
    status = main(["train", "--resume", str(trained), "--data", str(dataset), "--updates", "5",
                   "--patch", "4,4,1", "--no-tune", "--deterministic", "--out", str(out)])
    assert status == 0
    assert load_checkpoint(out).update == 5


def test_deterministic_training_is_repeatable(dataset, net_file, tmp_path):
    """Two deterministic runs with the same seed write identical checkpoints."""
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"{run}.ckpt"
        assert main(["train", "--net", str(net_file), "--data", str(dataset), "--updates", "4",
                     "--patch", "5,5,1", "--seed", "7", "--deterministic", "--threads", "2",
                     "--out", str(out)]) == 0
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]


def test_train_needs_net_or_resume(dataset, tmp_path):
    """Without a network there is nothing to train."""
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "x.ckpt")]) == 1


def test_invalid_settings_exit_one(dataset, net_file, tmp_path):
    """Rejected hyperparameters and settings are usage errors."""
    assert main(["train", "--net", str(net_file), "--data", str(dataset), "--lr", "-1",
                 "--out", str(tmp_path / "x.ckpt")]) == 1
    assert main(["bench", "--net", "small2d", "--shape", "30,30,1", "--threads", "0"]) == 1


def test_infer_and_eval(trained, dataset, tmp_path):
    """A valid-region map is scored against the cropped truth."""
    map_path = tmp_path / "map"
    assert main(["infer", "--ckpt", str(trained), "--image", str(dataset / "stack1_image"),
                 "--patch", "9,9,1", "--out", str(map_path)]) == 0
    boundary = read_volume(map_path)
    assert boundary.dims == (25, 25, 2)
    assert boundary.meta.role == "boundary_map"
    assert np.all((boundary.data >= 0) & (boundary.data <= 1))

    curves = tmp_path / "curves"
    assert main(["eval", "--map", str(map_path), "--truth", str(dataset / "stack1_labels"),
                 "--algo", "cc", "--grid", "t=0.3,0.5,0.7", "--curves", str(curves)]) == 0
    lines = (curves / "map.cc.csv").read_text().splitlines()
    assert lines[0] == "t,split,merge,f"
    assert len(lines) == 4


def test_infer_full_pads_to_stack(trained, dataset, tmp_path):
    """--full returns a map of the stack dims."""
    assert main(["infer", "--ckpt", str(trained), "--image", str(dataset / "stack1_image"),
                 "--full", "--out", str(tmp_path / "full")]) == 0
    full = read_volume(tmp_path / "full").data
    assert full.shape == (32, 32, 2)
    assert full[0, 0, 0] == 0.5


def test_eval_truth_boundaries(dataset, tmp_path):
    """The truth's own boundary labels never merge cells."""
    truth = read_volume(dataset / "stack1_labels").data
    write_volume(tmp_path / "perfect", derive_boundary_labels(truth))
    curves = tmp_path / "curves"
    assert main(["eval", "--map", str(tmp_path / "perfect"), "--truth",
                 str(dataset / "stack1_labels"), "--algo", "cc", "--grid", "t=0.5",
                 "--curves", str(curves)]) == 0
    t, split, merge, f = (float(v) for v in
                          (curves / "perfect.cc.csv").read_text().splitlines()[1].split(","))
    # boundary pixels keep every component inside one cell
    assert (t, merge) == (0.5, 1.0)
    assert split > 0.9 and f > 0.9


def test_eval_grid_needs_single_algo(dataset, tmp_path):
    """A parameter grid applies to one back-end only."""
    truth = read_volume(dataset / "stack1_labels").data
    write_volume(tmp_path / "perfect", derive_boundary_labels(truth))
    assert main(["eval", "--map", str(tmp_path / "perfect"), "--truth",
                 str(dataset / "stack1_labels"), "--grid", "t=0.5"]) == 1


def test_missing_input_exits_two(trained, tmp_path):
    """Missing volumes and checkpoints are data errors."""
    assert main(["infer", "--ckpt", str(trained), "--image", str(tmp_path / "absent"),
                 "--out", str(tmp_path / "map")]) == 2
    assert main(["infer", "--ckpt", str(tmp_path / "absent.ckpt"), "--image",
                 str(tmp_path / "absent"), "--out", str(tmp_path / "map")]) == 2


def test_non_finite_map_exits_three(tiny_spec, dataset, tmp_path):
    """NaN parameters surface as a numerical failure."""
    params = init_params(tiny_spec, seed=0)
    params.weights["conv2"][:] = np.nan
    save_checkpoint(tmp_path / "nan.ckpt", tiny_spec, params)
    assert main(["infer", "--ckpt", str(tmp_path / "nan.ckpt"), "--image",
                 str(dataset / "stack1_image"), "--out", str(tmp_path / "map")]) == 3


def test_bench():
    """Per-layer timings are printed as a table."""
    assert main(["bench", "--net", "small2d", "--shape", "30,30,1", "--trials", "1"]) == 0


def test_inspect(trained, dataset, tmp_path):
    """Feature maps are listed, or dumped one PGM per map and slice."""
    image = str(dataset / "stack1_image")
    assert main(["inspect", "--ckpt", str(trained), "--image", image]) == 0
    out = tmp_path / "pgm"
    assert main(["inspect", "--ckpt", str(trained), "--image", image, "--node", "conv1",
                 "--out", str(out)]) == 0
    files = sorted(out.glob("*.pgm"))
    assert len(files) == 3 * 2
    assert files[0].read_bytes().startswith(b"P5\n30 30\n255\n")
    assert main(["inspect", "--ckpt", str(trained), "--image", image, "--node", "nowhere"]) == 1
