#!/usr/bin/env python3
"""
Tests for tiled inference and map placement.
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to Python path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent / "src"))

from em_boundary_net.convolution import ConvolutionEngine
from em_boundary_net.core.inference import crop_to_map, infer, pad_to_stack
from em_boundary_net.core.netgraph import field_of_view, forward, init_params
from em_boundary_net.core.spec_parser import load_spec
from em_boundary_net.data.synth import synth_generate
from em_boundary_net.models.errors import ShapeError


def test_tilings_agree(tiny_spec):
    """Different tile shapes stitch into the same map."""
    params = init_params(tiny_spec, seed=1)
    image = np.random.default_rng(1).random((30, 27, 3)).astype(np.float32)
    engine = ConvolutionEngine(workers=1, deterministic=True)
    a = infer(tiny_spec, params, {"image": image}, (5, 7, 1), engine=engine)
    b = infer(tiny_spec, params, {"image": image}, (23, 4, 2), engine=engine)
    assert a.shape == (23, 20, 3)
    assert np.allclose(a, b, atol=1e-5)


def test_tilings_agree_on_synthetic_stack():
    """Two tilings of a 96 x 96 x 8 synthetic stack agree within 1e-5."""
    spec = load_spec("small2d")
    params = init_params(spec, seed=4)
    image, _ = synth_generate(seed=4, dims=(96, 96, 8), n_cells=12)
    a = infer(spec, params, {"image": image.data}, (19, 19, 1))
    b = infer(spec, params, {"image": image.data}, (38, 25, 3))
    assert a.shape == (76, 76, 8)
    assert np.abs(a - b).max() <= 1e-5


def test_parallel_tiles_match_serial(tiny_spec):
    """Tiles fanned out to workers give the serial result."""
    params = init_params(tiny_spec, seed=2)
    image = np.random.default_rng(2).random((26, 26, 2)).astype(np.float32)
    serial = infer(tiny_spec, params, {"image": image}, (6, 6, 1),
                   engine=ConvolutionEngine(workers=1, deterministic=True))
    parallel = infer(tiny_spec, params, {"image": image}, (6, 6, 1),
                     engine=ConvolutionEngine(workers=4, deterministic=True))
    assert np.array_equal(serial, parallel)


def test_infer_matches_whole_image_forward():
    """Tiled inference of a shipped net equals one whole-stack forward pass."""
    spec = load_spec("small2d")
    params = init_params(spec, seed=3)
    image = np.random.default_rng(3).random((40, 36, 2)).astype(np.float32)
    tiled = infer(spec, params, {"image": image}, (8, 8, 1))
    whole = forward(spec, params, {"image": image}).boundary
    assert np.allclose(tiled, whole, atol=1e-5)


def test_infer_too_small(tiny_spec):
    """Stacks smaller than the field of view are rejected."""
    params = init_params(tiny_spec, seed=0)
    with pytest.raises(ShapeError):
        infer(tiny_spec, params, {"image": np.zeros((7, 20, 1))}, (4, 4, 1))


def test_pad_and_crop_round_trip(tiny_spec):
    """pad_to_stack fills 0.5 around the map; crop_to_map recovers it."""
    fov = field_of_view(tiny_spec)
    boundary = np.random.default_rng(4).random((13, 10, 2)).astype(np.float32)
    dims = (20, 17, 2)
    full = pad_to_stack(boundary, fov, dims)
    assert full.shape == dims
    assert np.array_equal(crop_to_map(full, fov), boundary)
    assert full[0, 0, 0] == 0.5 and full[-1, -1, -1] == 0.5
    assert np.array_equal(full[3:16, 3:13], boundary)
    with pytest.raises(ShapeError):
        pad_to_stack(boundary, fov, (21, 17, 2))
