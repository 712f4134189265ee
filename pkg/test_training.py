#!/usr/bin/env python3
"""
Tests for output-patch training.

Covers boundary-label derivation, class rebalancing, the weighted loss,
momentum SGD, patch sampling with augmentation, and the Trainer loop.
"""

import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to Python path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent / "src"))

from em_boundary_net.config.settings import reload_settings
from em_boundary_net.convolution import ConvolutionEngine
from em_boundary_net.core.netgraph import init_params
from em_boundary_net.core.spec_parser import parse_spec
from em_boundary_net.core.tensor import crop, dihedral_xy
from em_boundary_net.core.training import (
    PatchSampler,
    Trainer,
    class_weights,
    derive_boundary_labels,
    loss,
    make_stack_pair,
    sample_patch,
    sgd_step,
    train,
)
from em_boundary_net.models.errors import ConfigurationError, NumericalError
from em_boundary_net.models.network import ParamGradients, ParamState
from em_boundary_net.models.training import TrainConfig
from em_boundary_net.models.volume import Window


LINEAR_NET = """
image  input
conv1  conv 3x3x1 4      <- image
tanh1  activation tanh   <- conv1
conv2  conv 1x1x1 2      <- tanh1
prob   output            <- conv2
"""


def single_param(value, velocity=0.0):
    w = np.full((1, 1, 1, 1, 1), value, dtype=np.float32)
    params = ParamState(weights={"c": w}, biases={"c": np.zeros(1, dtype=np.float32)},
                        weight_momentum={"c": np.full_like(w, velocity)},
                        bias_momentum={"c": np.zeros(1, dtype=np.float32)})
    return params


def single_grad(value):
    return ParamGradients(weights={"c": np.full((1, 1, 1, 1, 1), value, dtype=np.float32)},
                          biases={"c": np.zeros(1, dtype=np.float32)})


# ----------------------------------------------------------------------
# labels and weights
# ----------------------------------------------------------------------

def test_boundary_labels_uniform_plane():
    """A single-label plane has no boundary."""
    assert not derive_boundary_labels(np.full((5, 5, 2), 3)).any()


def test_boundary_labels_half_planes():
    """Two half-planes mark exactly the two abutting columns."""
    truth = np.ones((6, 4, 1), dtype=np.uint32)
    truth[3:] = 2
    labels = derive_boundary_labels(truth)
    assert labels[:, :, 0].sum(axis=1).tolist() == [0, 0, 4, 4, 0, 0]


def test_boundary_labels_zero_and_z_ignored():
    """Label-0 pixels are boundary; label changes along z are not."""
    truth = np.ones((4, 4, 2), dtype=np.uint32)
    truth[:, :, 1] = 2
    truth[0, 0, 0] = 0
    labels = derive_boundary_labels(truth)
    assert labels[0, 0, 0] == 1
    assert labels[:, :, 1].sum() == 0


def test_boundary_labels_commute_with_augmentation():
    """Deriving labels and transforming commute for all eight transforms."""
    truth = np.random.default_rng(0).integers(1, 4, (6, 5, 2))
    for t in range(8):
        assert np.array_equal(derive_boundary_labels(dihedral_xy(truth, t)),
                              dihedral_xy(derive_boundary_labels(truth), t))


def test_class_weights_examples():
    """Balanced patches, the 20-of-100 case and single-class patches."""
    balanced = np.array([0, 1] * 8).reshape(4, 4, 1)
    assert np.array_equal(class_weights(balanced), np.ones((4, 4, 1)))

    labels = np.zeros((10, 10, 1))
    labels.flat[:20] = 1
    weights = class_weights(labels)
    assert set(weights[labels == 1].tolist()) == {2.5}
    assert set(weights[labels == 0].tolist()) == {0.625}
    assert weights.mean() == 1.0
    assert weights[labels == 1].sum() == weights[labels == 0].sum()

    assert np.array_equal(class_weights(np.zeros((3, 3, 1))), np.ones((3, 3, 1)))
    assert np.array_equal(class_weights(np.ones((3, 3, 1))), np.ones((3, 3, 1)))


@pytest.mark.parametrize("shape", [(32, 32, 1), (7, 9, 1), (13, 11, 3), (200, 200, 1)])
def test_class_sums_equal_on_random_labels(shape):
    """Both classes carry exactly the same total weight, whatever the order of summation."""
    rng = np.random.default_rng(1)
    total = int(np.prod(shape))
    for _ in range(200 if total <= 1024 else 20):
        labels = rng.random(shape) < rng.uniform(0.01, 0.99)
        if labels.all() or not labels.any():
            continue
        weights = class_weights(labels)
        positive, negative = weights[labels], weights[~labels]
        assert positive.sum() == negative.sum()
        assert math.fsum(positive) == math.fsum(negative) == positive.sum()
        assert np.cumsum(positive)[-1] == np.cumsum(negative)[-1]

        n1 = int(labels.sum())
        n0 = total - n1
        bound = 2.0 ** -(52 - (n0 * n1).bit_length()) + 1e-15
        assert abs(positive[0] / (total / (2 * n1)) - 1) <= bound
        assert abs(negative[0] / (total / (2 * n0)) - 1) <= bound


# ----------------------------------------------------------------------
# loss and updates
# ----------------------------------------------------------------------

def test_loss_examples():
    """p = 0.5 gives P ln 2; a perfect prediction gives about zero."""
    labels = (np.random.default_rng(2).random((4, 5, 1)) > 0.5).astype(np.float32)
    ones = np.ones(labels.shape)
    assert math.isclose(loss(np.full(labels.shape, 0.5), labels, ones), 20 * math.log(2))
    assert loss(labels, labels, ones) <= 20 * 1e-6


def test_loss_matches_scalar_loop():
    """The vectorized loss agrees with a per-pixel loop."""
    rng = np.random.default_rng(3)
    p = rng.uniform(0.01, 0.99, (5, 4, 2))
    y = (rng.random(p.shape) > 0.4).astype(np.float64)
    w = rng.uniform(0.2, 3.0, p.shape)
    expected = 0.0
    for i in np.ndindex(p.shape):
        expected += w[i] * (-y[i] * math.log(p[i]) - (1 - y[i]) * math.log(1 - p[i]))
    assert math.isclose(loss(p, y, w), expected, rel_tol=1e-6)


def test_sgd_plain_step():
    """Momentum 0, lr 1, one pixel: w <- w - g."""
    params = sgd_step(single_param(2.0), single_grad(0.5),
                      TrainConfig(learning_rate=1.0, momentum=0.0), 1)
    assert params.weights["c"].item() == 1.5


def test_sgd_momentum_two_steps():
    """Constant g over two steps moves w by (lr g / P) (1 + 1.9)."""
    params = single_param(0.0)
    cfg = TrainConfig(learning_rate=0.1, momentum=0.9)
    for _ in range(2):
        sgd_step(params, single_grad(4.0), cfg, 8)
    assert math.isclose(params.weights["c"].item(), -(0.1 * 4.0 / 8) * 2.9, rel_tol=1e-6)


def test_sgd_momentum_only():
    """With zero gradient the weight still moves by momentum * v."""
    params = sgd_step(single_param(1.0, velocity=0.5), single_grad(0.0),
                      TrainConfig(momentum=0.9), 1)
    assert math.isclose(params.weights["c"].item(), 1.0 - 0.45, rel_tol=1e-6)


def test_sgd_descends_quadratic():
    """Small-step SGD reduces w^2 / 2 monotonically."""
    params = single_param(3.0)
    cfg = TrainConfig(learning_rate=0.1, momentum=0.0)
    values = []
    for _ in range(10):
        w = params.weights["c"].item()
        values.append(0.5 * w * w)
        sgd_step(params, single_grad(w), cfg, 1)
    assert all(b < a for a, b in zip(values, values[1:]))


# ----------------------------------------------------------------------
# sampling
# ----------------------------------------------------------------------

def test_sampler_degenerate_placement(striped_pair):
    """A patch filling the stack has exactly one legal offset."""
    sampler = PatchSampler([striped_pair], (8, 8, 1), (17, 17, 2), {"image": "image"})
    rng = np.random.default_rng(0)
    for _ in range(10):
        sample = sampler.sample(rng)
        assert sample.offset == (0, 0, 0)
        assert sample.labels.shape == (17, 17, 2)
        assert sample.inputs["image"].shape == (24, 24, 2)


def test_sampler_too_small_stack(striped_pair):
    """A stack that cannot hold the window is a configuration error."""
    with pytest.raises(ConfigurationError):
        PatchSampler([striped_pair], (8, 8, 1), (18, 4, 1), {"image": "image"})


def test_sampler_deterministic(striped_pair):
    """A fixed seed reproduces the sample sequence."""
    def draw():
        rng = np.random.default_rng(42)
        return [sample_patch([striped_pair], (5, 5, 1), (6, 4, 1), rng) for _ in range(5)]
    for a, b in zip(draw(), draw()):
        assert (a.offset, a.transform) == (b.offset, b.transform)
        assert np.array_equal(a.inputs["image"], b.inputs["image"])
        assert np.array_equal(a.labels, b.labels)


def test_sampler_labels_sit_at_field_of_view_centre():
    """For every transform the labels are the centre crop of the input window."""
    truth = np.random.default_rng(5).integers(1, 5, (20, 18, 2))
    labels = derive_boundary_labels(truth)
    pair = make_stack_pair(labels, truth)
    fov = (5, 3, 1)
    sampler = PatchSampler([pair], fov, (6, 4, 1), {"image": "image"})
    rng = np.random.default_rng(6)
    seen = set()
    for _ in range(80):
        sample = sampler.sample(rng)
        seen.add(sample.transform)
        window = Window(offset=(2, 1, 0), shape=sample.labels.shape)
        assert np.array_equal(crop(sample.inputs["image"], window), sample.labels)
        expected = tuple(l + f - 1 for l, f in zip(sample.labels.shape, fov))
        assert sample.inputs["image"].shape == expected
    assert seen == set(range(8))


def test_sampler_stack_frequencies():
    """Stacks are drawn in proportion to their legal-placement counts."""
    small = make_stack_pair(np.zeros((10, 10, 1)), np.ones((10, 10, 1), dtype=np.uint32))
    large = make_stack_pair(np.zeros((20, 10, 1)), np.ones((20, 10, 1), dtype=np.uint32))
    sampler = PatchSampler([small, large], (1, 1, 1), (1, 1, 1), {"image": "image"},
                           augment=False)
    assert sampler.placements(small) == 100 and sampler.placements(large) == 200
    rng = np.random.default_rng(7)
    n = 10_000
    hits = sum(sampler.sample(rng).stack_index == 0 for _ in range(n))
    sigma = math.sqrt(n * (1 / 3) * (2 / 3))
    assert abs(hits - n / 3) <= 3 * sigma


def test_sampler_rebalance_flag(striped_pair):
    """Without rebalancing every weight is 1."""
    sample = sample_patch([striped_pair], (5, 5, 1), (8, 8, 1), np.random.default_rng(0),
                          rebalance=False)
    assert np.array_equal(sample.weights, np.ones(sample.labels.shape))


# ----------------------------------------------------------------------
# trainer
# ----------------------------------------------------------------------

def test_train_zero_updates_keeps_init(tiny_spec, striped_pair):
    """With no updates the parameters are the initialization."""
    cfg = TrainConfig(updates=0, patch=(4, 4, 1), seed=3)
    params, log = train(tiny_spec, [striped_pair], cfg)
    assert params.equals(init_params(tiny_spec, 3))
    assert log == []


def test_train_defaults():
    """Published defaults: lr 0.01, momentum 0.9, rebalancing and augmentation on."""
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.momentum, cfg.rebalance, cfg.augment) == (0.01, 0.9, True, True)


def test_train_presets():
    """Presets fix patch and update count; overrides win; unknown names fail."""
    cfg = TrainConfig.preset("vd2d3d", seed=3)
    assert (cfg.patch, cfg.updates, cfg.seed) == ((100, 100, 1), 90_000, 3)
    assert TrainConfig.preset("n4", updates=10).updates == 10
    with pytest.raises(ValueError):
        TrainConfig.preset("n5")


def test_train_deterministic_runs_identical(tiny_spec, striped_pair):
    """Deterministic mode reproduces parameters bit for bit."""
    cfg = TrainConfig(updates=6, patch=(4, 4, 1), seed=1, log_every=2)

    def run():
        engine = ConvolutionEngine(workers=2, deterministic=True)
        return train(tiny_spec, [striped_pair], cfg, engine=engine)

    (a, log_a), (b, log_b) = run(), run()
    assert a.equals(b)
    assert [r.update for r in log_a] == [2, 4, 6]
    assert [r.loss for r in log_a] == [r.loss for r in log_b]


def test_trainer_log_file(tiny_spec, striped_pair, tmp_path):
    """The log file starts with the configuration and has one line per record."""
    cfg = TrainConfig(updates=3, patch=(4, 4, 1), log_every=1)
    log_path = tmp_path / "train.log"
    Trainer(tiny_spec, [striped_pair], cfg, log_path=log_path).run()
    lines = log_path.read_text().splitlines()
    assert lines[0].startswith("# lr=0.01 momentum=0.9")
    records = [line.split() for line in lines if not line.startswith("#")]
    assert [int(r[0]) for r in records] == [1, 2, 3]
    assert all(len(r) == 4 for r in records)


def test_trainer_checkpoint_hook(tiny_spec, striped_pair):
    """The checkpoint hook fires on the interval and once at the end."""
    settings = reload_settings(threads=1, checkpoint_every=2)
    seen = []
    cfg = TrainConfig(updates=5, patch=(4, 4, 1))
    Trainer(tiny_spec, [striped_pair], cfg, settings=settings).run(
        on_checkpoint=lambda t: seen.append(t.update))
    assert seen == [2, 4, 5]


def test_trainer_non_finite_loss(tiny_spec, striped_pair):
    """A NaN parameter stops training with a numerical error."""
    params = init_params(tiny_spec, 0)
    params.weights["conv2"][:] = np.nan
    trainer = Trainer(tiny_spec, [striped_pair], TrainConfig(updates=1, patch=(4, 4, 1)),
                      params=params)
    with pytest.raises(NumericalError):
        trainer.step()


@pytest.mark.slow
def test_overfit_single_patch():
    """A small net drives the loss on one fixed 8x8x1 patch below a tenth."""
    spec = parse_spec(LINEAR_NET)
    truth = np.random.default_rng(8).integers(1, 4, (10, 10, 1))
    labels = derive_boundary_labels(truth)
    pair = make_stack_pair(labels, truth)
    cfg = TrainConfig(updates=500, patch=(8, 8, 1), learning_rate=0.05, augment=False, seed=2)
    trainer = Trainer(spec, [pair], cfg, engine=ConvolutionEngine(workers=1, deterministic=True))
    first, _ = trainer.step()
    trainer.run()
    last, _ = trainer.step()
    assert last < 0.1 * first
