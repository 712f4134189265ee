"""
Two-stage recursive training for EM Boundary Net.

Stage 1 is trained on the image alone. Its boundary maps over every stack are
computed once, padded to the stack dims and frozen; stage 2 then trains on the
image together with that fixed map, starting from stage 1's weights wherever
layer names match. Stage 1 may keep training meanwhile, and its final maps
replace the preliminary ones when stage 2 is evaluated.
"""

import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..convolution.method_factory import ConvolutionEngine
from ..models.errors import ConfigurationError
from ..models.network import NetworkSpec, ParamState
from ..models.training import PipelineResult, StackPair, TrainConfig
from .inference import infer, pad_to_stack
from .netgraph import field_of_view, init_params
from .training import Trainer, stack_inputs

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]

CheckpointHook = Callable[[str, Trainer], None]


def warm_start(stage1: NetworkSpec, params1: ParamState, stage2: NetworkSpec,
               params2: ParamState) -> Tuple[List[str], List[str]]:
    """
    Copy stage-1 weights into same-named stage-2 conv layers, in place.

    A layer is copied when out_maps, kx and ky agree. Stage-1 taps land on the
    central z plane (kz // 2) of a deeper stage-2 filter; stage-2 in-maps beyond
    stage 1's (the recursive join) get zero taps. Momentum buffers are zeroed.

    Args:
        stage1: First-stage spec
        params1: Trained first-stage parameters
        stage2: Second-stage spec
        params2: Freshly initialized second-stage parameters (modified)

    Returns:
        Tuple of (warm-started layer names, skipped layer names)

    Raises:
        ConfigurationError: If no conv layer name is shared between the stages
    """
    shared = [node.name for node in stage2.conv_nodes if node.name in params1.weights]
    if not shared:
        raise ConfigurationError(
            "no conv layer names shared between the stages; stage-1 layers "
            f"{sorted(params1.weights)} vs stage-2 layers {[n.name for n in stage2.conv_nodes]}")

    copied, skipped = [], []
    for name in shared:
        source = params1.weights[name]
        target = params2.weights[name]
        o1, i1, kx1, ky1, kz1 = source.shape
        o2, i2, kx2, ky2, kz2 = target.shape
        if (o1, kx1, ky1) != (o2, kx2, ky2) or i1 > i2 or kz1 > kz2:
            logger.warning(f"Layer {name!r} keeps its fresh initialization: stage-1 shape "
                           f"{source.shape} does not embed into {target.shape}")
            skipped.append(name)
            continue
        z0 = kz2 // 2 - kz1 // 2
        embedded = np.zeros_like(target)
        embedded[:, :i1, :, :, z0:z0 + kz1] = source
        params2.weights[name] = embedded
        params2.biases[name] = params1.biases[name].copy()
        params2.weight_momentum[name] = np.zeros_like(embedded)
        params2.bias_momentum[name] = np.zeros_like(params2.biases[name])
        copied.append(name)

    logger.info(f"Warm-started {len(copied)} layer(s) from stage 1: {', '.join(copied)}")
    return copied, skipped


def boundary_maps(spec: NetworkSpec, params: ParamState, pairs: Sequence[StackPair],
                  out_patch: Sequence[int], engine: Optional[ConvolutionEngine] = None,
                  fixed: bool = True) -> List[np.ndarray]:
    """
    Full-stack boundary maps of a network, padded with 0.5 outside its reach.

    Args:
        spec: Network spec
        params: Parameters
        pairs: Stacks to evaluate
        out_patch: Inference tile shape
        engine: Convolution engine
        fixed: Mark the returned arrays read-only

    Returns:
        One float32 volume per stack, with the stack dims
    """
    fov = field_of_view(spec)
    maps = []
    for pair in pairs:
        valid = infer(spec, params, stack_inputs(spec, pair), out_patch, engine=engine)
        full = pad_to_stack(valid, fov, pair.dims)
        if fixed:
            full.setflags(write=False)
        maps.append(full)
    return maps


def with_recursive_maps(pairs: Sequence[StackPair], maps: Sequence[np.ndarray]) -> List[StackPair]:
    """Copies of the stacks carrying a recursive input map each."""
    return [StackPair(name=pair.name, image=pair.image, truth=pair.truth,
                      boundary_labels=pair.boundary_labels, recursive_map=m)
            for pair, m in zip(pairs, maps)]


def recursive_pipeline(stage1: NetworkSpec, stage2: NetworkSpec, pairs: Sequence[StackPair],
                       extra_pairs: Sequence[StackPair], cfg1: TrainConfig, cfg2: TrainConfig,
                       continue_updates: int = 0, engine: Optional[ConvolutionEngine] = None,
                       infer_patch: Sequence[int] = (64, 64, 1),
                       params1: Optional[ParamState] = None,
                       log_dir: Optional[Path] = None,
                       on_checkpoint: Optional[CheckpointHook] = None) -> PipelineResult:
    """
    Run the two-stage recursive protocol.

    Args:
        stage1: First-stage spec (image input only)
        stage2: Second-stage spec (image and recursive-map inputs)
        pairs: Training stacks for both stages
        extra_pairs: Stacks added for the second stage only
        cfg1: First-stage training configuration
        cfg2: Second-stage training configuration
        continue_updates: Further stage-1 updates after the preliminary maps
        engine: Convolution engine
        infer_patch: Inference tile shape for the boundary maps
        params1: Already-trained stage-1 parameters (stage-1 training is skipped)
        log_dir: Directory receiving stage1.log and stage2.log
        on_checkpoint: Called with ("stage1" | "stage2", trainer) at checkpoints

    Returns:
        PipelineResult

    Raises:
        ConfigurationError: If stage 2 does not take two inputs or shares no layers
    """
    if len(stage1.input_names) != 1:
        raise ConfigurationError(f"stage 1 must take one input, got {stage1.input_names}")
    if len(stage2.input_names) != 2:
        raise ConfigurationError(f"stage 2 must take the image and a recursive map, "
                                 f"got inputs {stage2.input_names}")
    engine = engine or ConvolutionEngine()
    log1 = log_dir / "stage1.log" if log_dir else None
    log2 = log_dir / "stage2.log" if log_dir else None

    def hook(stage: str):
        return (lambda trainer: on_checkpoint(stage, trainer)) if on_checkpoint else None

    # Stage 1
    records1 = []
    trainer1 = None
    if params1 is None:
        logger.info(f"Stage 1: training {cfg1.updates} updates on {len(pairs)} stack(s)")
        trainer1 = Trainer(stage1, pairs, cfg1, engine=engine, log_path=log1)
        params1, records1 = trainer1.run(on_checkpoint=hook("stage1"))
    else:
        logger.info("Stage 1: using provided parameters")

    # Preliminary maps, fixed from here on
    all_pairs = list(pairs) + list(extra_pairs)
    preliminary = boundary_maps(stage1, params1, all_pairs, infer_patch, engine=engine)
    logger.info(f"Computed {len(preliminary)} preliminary boundary map(s)")

    # Stage 2
    params2 = init_params(stage2, cfg2.seed)
    copied, _ = warm_start(stage1, params1, stage2, params2)
    logger.info(f"Stage 2: training {cfg2.updates} updates on {len(all_pairs)} stack(s)")
    trainer2 = Trainer(stage2, with_recursive_maps(all_pairs, preliminary), cfg2, engine=engine,
                       params=params2, log_path=log2)
    params2, records2 = trainer2.run(on_checkpoint=hook("stage2"))

    # Continued stage 1 and final maps
    final = preliminary
    if continue_updates > 0:
        logger.info(f"Stage 1: continuing for {continue_updates} updates")
        continued = Trainer(stage1, pairs, cfg1, engine=engine, params=params1.copy(),
                            start_update=trainer1.update if trainer1 else cfg1.updates,
                            rng_state=trainer1.rng_state if trainer1 else None, log_path=log1)
        params1, more = continued.run(until=continued.update + continue_updates,
                                      on_checkpoint=hook("stage1"))
        records1 = records1 + more
        final = boundary_maps(stage1, params1, all_pairs, infer_patch, engine=engine)

    return PipelineResult(params1=params1, params2=params2, preliminary_maps=preliminary,
                          final_maps=final, log1=records1, log2=records2, warm_started=copied)


def second_stage_maps(stage2: NetworkSpec, params2: ParamState, pairs: Sequence[StackPair],
                      first_stage_maps: Sequence[np.ndarray], out_patch: Sequence[int],
                      engine: Optional[ConvolutionEngine] = None) -> List[np.ndarray]:
    """
    Valid-region stage-2 maps given full-stack stage-1 maps.

    Returns:
        One map per stack of dims (stack dims - stage-2 fov + 1)
    """
    maps = []
    for pair in with_recursive_maps(pairs, first_stage_maps):
        maps.append(infer(stage2, params2, stack_inputs(stage2, pair), out_patch, engine=engine))
    return maps


def stage_inputs(spec: NetworkSpec, image: np.ndarray,
                 recursive_map: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Input volumes by node name for a one- or two-input network."""
    names = spec.input_names
    inputs = {names[0]: image}
    if len(names) == 2:
        if recursive_map is None:
            raise ConfigurationError(f"network input {names[1]!r} needs a recursive boundary map")
        inputs[names[1]] = recursive_map
    return inputs
