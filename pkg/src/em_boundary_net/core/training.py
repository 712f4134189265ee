"""
Output-patch training for EM Boundary Net.

This module implements the training loop:
1. Boundary labels derived from ground-truth segmentations
2. Random output-patch sampling with joint in-plane augmentation
3. Class rebalancing through per-pixel loss weights
4. Weighted cross-entropy and SGD with momentum
5. The Trainer, which runs sample -> forward -> loss -> backward -> update
"""

import logging
import math
import time
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..config.settings import Settings, get_settings
from ..convolution.method_factory import ConvolutionEngine
from ..models.errors import ConfigurationError, NumericalError, ShapeError
from ..models.network import NetworkSpec, ParamGradients, ParamState
from ..models.training import PatchSample, StackPair, TrainConfig, TrainLogRecord
from ..models.volume import Window
from .netgraph import backward, check_params, forward, infer_plan, init_params
from .tensor import crop, dihedral_xy

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]

PROB_CLAMP = 1e-7

# integer multiples of one power of two stay exact below 2**52 in float64
MAX_MANTISSA_BITS = 52


def derive_boundary_labels(truth: np.ndarray) -> np.ndarray:
    """
    Binary boundary labels of a segmentation.

    A voxel is boundary (1) when its label is 0 or any in-plane 4-neighbour
    carries a different label; z neighbours are ignored.

    Args:
        truth: Label volume indexed [x, y, z]

    Returns:
        float32 volume of {0, 1}
    """
    truth = np.asarray(truth)
    boundary = truth == 0
    for axis in (0, 1):
        differ = np.diff(truth, axis=axis) != 0
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(0, -1)
        hi[axis] = slice(1, None)
        boundary[tuple(lo)] |= differ
        boundary[tuple(hi)] |= differ
    return boundary.astype(np.float32)


def make_stack_pair(image: np.ndarray, truth: np.ndarray, name: str = "stack",
                    recursive_map: Optional[np.ndarray] = None) -> StackPair:
    """Pair an image with its truth and derived boundary labels."""
    return StackPair(
        name=name,
        image=np.asarray(image, dtype=np.float32),
        truth=np.asarray(truth),
        boundary_labels=derive_boundary_labels(truth),
        recursive_map=recursive_map,
    )


def class_weights(labels: np.ndarray) -> np.ndarray:
    """
    Per-voxel loss weights balancing the two classes.

    Class c gets weight P / (2 * N_c), so both classes carry half the total
    weight; if a class is absent, or the classes are balanced, every weight
    is 1.

    The weights are written as w_c = N_other * s with s = P / (2 * N0 * N1)
    rounded to a dyadic value of MAX_MANTISSA_BITS - bit_length(N0 * N1) bits.
    Every weight and every partial sum over a class is then an integer
    multiple of the same power of two below 2**53, so both class sums are
    exactly N0 * N1 * s in any summation order. The rounding moves each
    weight by a relative 2**-(52 - bit_length(N0 * N1)) at most.

    Args:
        labels: Binary label volume

    Returns:
        float64 weights shaped like labels
    """
    labels = np.asarray(labels)
    total = labels.size
    positives = int(np.count_nonzero(labels))
    negatives = total - positives
    if positives == 0 or negatives == 0 or positives == negatives:
        return np.ones(labels.shape, dtype=np.float64)

    pairs = positives * negatives
    bits = MAX_MANTISSA_BITS - pairs.bit_length()
    if bits < 1:
        raise ConfigurationError(f"patch of {total} voxels is too large for exact class weights")
    mantissa, exponent = math.frexp(total / (2.0 * pairs))
    scale = math.ldexp(round(math.ldexp(mantissa, bits)), exponent - bits)
    return np.where(labels != 0, negatives * scale, positives * scale)


def loss(probs: np.ndarray, labels: np.ndarray, weights: np.ndarray) -> float:
    """
    Weighted binary cross-entropy summed over the patch.

    Args:
        probs: Boundary probabilities, clamped to [1e-7, 1 - 1e-7]
        labels: Binary labels
        weights: Per-voxel weights

    Returns:
        sum of weight * (-y log p - (1 - y) log(1 - p))
    """
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if p.shape != y.shape or p.shape != w.shape:
        raise ShapeError("probs, labels and weights must have equal shapes", p.shape,
                         y.shape if y.shape != p.shape else w.shape)
    return float(np.sum(w * (-y * np.log(p) - (1.0 - y) * np.log(1.0 - p))))


def patch_pixel_error(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of voxels where (p >= 0.5) disagrees with the label."""
    return float(np.mean((np.asarray(probs) >= 0.5) != (np.asarray(labels) != 0)))


def sgd_step(params: ParamState, grads: ParamGradients, cfg: TrainConfig,
             patch_pixels: int) -> ParamState:
    """
    Momentum SGD update, in place.

    v <- momentum * v + (lr / patch_pixels) * g;  w <- w - v

    Args:
        params: Parameters and momentum buffers (updated in place)
        grads: Loss gradients
        cfg: Learning rate and momentum
        patch_pixels: Number of output voxels the gradient was summed over

    Returns:
        The updated params
    """
    scale = np.float32(cfg.learning_rate / patch_pixels)
    mu = np.float32(cfg.momentum)
    for name in params.weights:
        for value, velocity, g in (
            (params.weights[name], params.weight_momentum[name], grads.weights[name]),
            (params.biases[name], params.bias_momentum[name], grads.biases[name]),
        ):
            if g.shape != value.shape:
                raise ShapeError(f"gradient of {name!r}", value.shape, g.shape)
            velocity *= mu
            velocity += scale * g
            value -= velocity
    return params


def input_sources(spec: NetworkSpec) -> Dict[str, str]:
    """
    Map each network input to the stack field feeding it.

    The first declared input receives the image; a second input receives the
    fixed recursive boundary map.

    Raises:
        ConfigurationError: If the network declares more than two inputs
    """
    names = spec.input_names
    if len(names) > 2:
        raise ConfigurationError(f"networks take an image and at most one recursive map; "
                                 f"got inputs {names}")
    sources = {names[0]: "image"}
    if len(names) == 2:
        sources[names[1]] = "recursive_map"
    return sources


def stack_inputs(spec: NetworkSpec, pair: StackPair) -> Dict[str, np.ndarray]:
    """Full-stack input volumes for every network input."""
    inputs = {}
    for name, source in input_sources(spec).items():
        volume = getattr(pair, source)
        if volume is None:
            raise ConfigurationError(f"stack {pair.name!r} has no {source} for input {name!r}")
        inputs[name] = volume
    return inputs


def _rotated(dims: Sequence[int], transform: int) -> Dims:
    """Extent after dihedral_xy(., transform)."""
    if transform % 2:
        return (dims[1], dims[0], dims[2])
    return tuple(dims)


class PatchSampler:
    """
    Draws output patches uniformly over every legal placement in every stack.

    The transform is drawn first; the input window is then shaped so that,
    after the transform, it is exactly the transformed output patch grown by
    the field of view. Labels are cut from the same window, transformed with
    it, and cropped to the voxels at the (floor-)centre of each field of view.
    """

    def __init__(self, pairs: Sequence[StackPair], fov: Dims, patch: Dims,
                 input_map: Mapping[str, str], augment: bool = True, rebalance: bool = True):
        """
        Initialize the sampler.

        Args:
            pairs: Training stacks
            fov: Network field of view
            patch: Output patch shape
            input_map: Network input name -> StackPair field
            augment: Draw a random dihedral transform per patch
            rebalance: Weight the loss per class

        Raises:
            ConfigurationError: If some stack admits no legal placement
        """
        if not pairs:
            raise ConfigurationError("no training stacks given")
        self.pairs = list(pairs)
        self.fov = tuple(fov)
        self.patch = tuple(patch)
        self.input_map = dict(input_map)
        self.augment = augment
        self.rebalance = rebalance
        self.margin = tuple((f - 1) // 2 for f in self.fov)

        transforms = range(8) if augment else (0,)
        for pair in self.pairs:
            for source in self.input_map.values():
                if getattr(pair, source) is None:
                    raise ConfigurationError(f"stack {pair.name!r} has no {source}")
            for t in transforms:
                if self.placements(pair, t) == 0:
                    window = self.window_shape(t)
                    raise ConfigurationError(
                        f"stack {pair.name!r} dims {pair.dims} cannot hold input window "
                        f"{window} (patch {self.patch} + field of view {self.fov} - 1)")

    def window_shape(self, transform: int) -> Dims:
        """Input window shape before the transform is applied."""
        out_patch = _rotated(self.patch, transform)
        grown = tuple(p + f - 1 for p, f in zip(out_patch, self.fov))
        return _rotated(grown, transform)

    def placements(self, pair: StackPair, transform: int = 0) -> int:
        """Number of legal window offsets in a stack."""
        window = self.window_shape(transform)
        return math.prod(max(0, n - w + 1) for n, w in zip(pair.dims, window))

    def sample(self, rng: np.random.Generator) -> PatchSample:
        """
        Draw one patch.

        Args:
            rng: Random generator (advanced by the draw)

        Returns:
            PatchSample with inputs, labels and weights
        """
        transform = int(rng.integers(8)) if self.augment else 0
        window = self.window_shape(transform)
        counts = [self.placements(pair, transform) for pair in self.pairs]
        pick = int(rng.integers(sum(counts)))
        index = 0
        while pick >= counts[index]:
            pick -= counts[index]
            index += 1
        pair = self.pairs[index]
        legal = tuple(n - w + 1 for n, w in zip(pair.dims, window))
        offset = tuple(int(o) for o in np.unravel_index(pick, legal))
        box = Window(offset=offset, shape=window)

        inputs = {name: dihedral_xy(crop(getattr(pair, source), box), transform)
                  for name, source in self.input_map.items()}
        labels = dihedral_xy(crop(pair.boundary_labels, box), transform)
        out_patch = _rotated(self.patch, transform)
        labels = crop(labels, Window(offset=self.margin, shape=out_patch))
        weights = class_weights(labels) if self.rebalance else np.ones(labels.shape)
        return PatchSample(inputs=inputs, labels=labels, weights=weights,
                           stack_index=index, offset=offset, transform=transform)


def sample_patch(pairs: Sequence[StackPair], fov: Dims, patch: Dims, rng: np.random.Generator,
                 input_map: Optional[Mapping[str, str]] = None, augment: bool = True,
                 rebalance: bool = True) -> PatchSample:
    """
    Draw one training patch (see PatchSampler).

    Args:
        pairs: Training stacks
        fov: Network field of view
        patch: Output patch shape
        rng: Random generator
        input_map: Network input name -> StackPair field (image only by default)
        augment: Apply a random in-plane transform
        rebalance: Compute class-balancing weights

    Returns:
        PatchSample
    """
    sampler = PatchSampler(pairs, fov, patch, input_map or {"image": "image"},
                           augment=augment, rebalance=rebalance)
    return sampler.sample(rng)


class Trainer:
    """
    Runs output-patch training for one network.

    The trainer owns its parameters for the duration of the run. Its state
    (parameters with momentum, update counter, sampler generator, smoothed
    loss) is exactly what a checkpoint stores, so a resumed trainer
    continues the same run.
    """

    def __init__(self, spec: NetworkSpec, pairs: Sequence[StackPair], cfg: TrainConfig,
                 engine: Optional[ConvolutionEngine] = None,
                 params: Optional[ParamState] = None, start_update: int = 0,
                 rng_state: Optional[dict] = None, settings: Optional[Settings] = None,
                 log_path: Optional[Path] = None, smoothed_loss: Optional[float] = None):
        """
        Initialize the trainer.

        Args:
            spec: Network to train
            pairs: Training stacks
            cfg: Training configuration
            engine: Convolution engine (created from settings if not provided)
            params: Starting parameters (init_params(spec, cfg.seed) if not provided)
            start_update: Update counter of a resumed run
            rng_state: Sampler generator state of a resumed run
            settings: Application settings (auto-loaded if not provided)
            log_path: Append-only training log file
            smoothed_loss: Moving-average loss of a resumed run
        """
        self.settings = settings or get_settings()
        self.spec = spec
        self.cfg = cfg
        self.engine = engine or ConvolutionEngine(self.settings)
        self.plan = infer_plan(spec)
        self.fov = self.plan.field_of_view()
        self.params = params.ensure_momentum() if params is not None else init_params(spec, cfg.seed)
        check_params(spec, self.params)
        self.sampler = PatchSampler(pairs, self.fov, cfg.patch, input_sources(spec),
                                    augment=cfg.augment, rebalance=cfg.rebalance)
        self.rng = np.random.default_rng([cfg.seed, 1])
        if rng_state is not None:
            self.rng.bit_generator.state = rng_state
        self.update = start_update
        self.smoothed_loss = smoothed_loss
        self.log: List[TrainLogRecord] = []
        self.log_path = Path(log_path) if log_path else None
        self._started = time.perf_counter()

    @property
    def rng_state(self) -> dict:
        """Sampler generator state."""
        return self.rng.bit_generator.state

    def step(self) -> Tuple[float, float]:
        """
        Run one update.

        Returns:
            Tuple of (patch loss, patch pixel error)

        Raises:
            NumericalError: If the loss is not finite
        """
        sample = self.sampler.sample(self.rng)
        result = forward(self.spec, self.params, sample.inputs, keep_maps=True,
                         engine=self.engine, plan=self.plan)
        probs = result.boundary
        value = loss(probs, sample.labels, sample.weights)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss at update {self.update + 1}")
        grads = backward(self.spec, self.params, result, sample.labels, sample.weights,
                         engine=self.engine, plan=self.plan)
        sgd_step(self.params, grads, self.cfg, sample.labels.size)
        self.update += 1
        return value, patch_pixel_error(probs, sample.labels)

    def run(self, until: Optional[int] = None,
            on_checkpoint: Optional[Callable[["Trainer"], None]] = None
            ) -> Tuple[ParamState, List[TrainLogRecord]]:
        """
        Train until the update counter reaches `until` (cfg.updates by default).

        Args:
            until: Target update count
            on_checkpoint: Called every settings.checkpoint_every updates and at the end

        Returns:
            Tuple of (params, log records)
        """
        until = self.cfg.updates if until is None else until
        every = self.settings.checkpoint_every
        if self.log_path and self.update == 0:
            self._write_header()
        logger.info(f"Training {self.update} -> {until} updates, patch {self.cfg.patch}, "
                    f"field of view {self.fov}")
        while self.update < until:
            value, error = self.step()
            if self.smoothed_loss is None:
                self.smoothed_loss = value
            else:
                factor = self.settings.smoothing
                self.smoothed_loss = factor * self.smoothed_loss + (1.0 - factor) * value
            if self.update % self.cfg.log_every == 0 or self.update == until:
                self._record(value, error)
            if on_checkpoint and every and self.update % every == 0 and self.update < until:
                on_checkpoint(self)
        if on_checkpoint:
            on_checkpoint(self)
        return self.params, self.log

    def _record(self, value: float, error: float) -> None:
        record = TrainLogRecord(update=self.update, loss=value, smoothed_loss=self.smoothed_loss,
                                pixel_error=error,
                                wallclock_s=time.perf_counter() - self._started)
        self.log.append(record)
        logger.info(f"update {record.update}: loss {record.smoothed_loss:.4f} "
                    f"pixel error {record.pixel_error:.4f}")
        if self.log_path:
            with self.log_path.open("a") as handle:
                handle.write(record.to_line() + "\n")

    def _write_header(self) -> None:
        cfg = self.cfg
        with self.log_path.open("a") as handle:
            handle.write(f"# lr={cfg.learning_rate} momentum={cfg.momentum} "
                         f"patch={','.join(map(str, cfg.patch))} updates={cfg.updates} "
                         f"seed={cfg.seed} rebalance={cfg.rebalance} augment={cfg.augment} "
                         f"deterministic={self.engine.deterministic}\n")
            handle.write("# update loss pixel_error wallclock_s\n")


def train(spec: NetworkSpec, pairs: Sequence[StackPair], cfg: TrainConfig,
          engine: Optional[ConvolutionEngine] = None, params: Optional[ParamState] = None,
          log_path: Optional[Path] = None) -> Tuple[ParamState, List[TrainLogRecord]]:
    """
    Train a network for cfg.updates updates.

    Args:
        spec: Network to train
        pairs: Training stacks
        cfg: Training configuration
        engine: Convolution engine
        params: Starting parameters (fresh initialization if not provided)
        log_path: Append-only training log file

    Returns:
        Tuple of (params, log records)
    """
    trainer = Trainer(spec, pairs, cfg, engine=engine, params=params, log_path=log_path)
    return trainer.run()
