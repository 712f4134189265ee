"""
Network graph evaluation for EM Boundary Net.

This module turns a NetworkSpec into numbers:
1. Sparsity and field-of-view inference (every max-filter multiplies the tap
   spacing of all later filters by its window)
2. Parameter counting and initialization
3. Forward evaluation over dense feature maps
4. Backward propagation of the weighted cross-entropy gradient

Feature maps are float32 arrays shaped (channels, x, y, z); forward can run in
float64 for gradient checks.
"""

import logging
import math
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..convolution.base_method import valid_output_shape
from ..convolution.method_factory import ConvolutionEngine
from ..models.errors import ConfigurationError, PlanError, ShapeError
from ..models.network import (
    ForwardResult, NetworkSpec, NodeSpec, ParamGradients, ParamState, SparsityPlan,
)

logger = logging.getLogger(__name__)

Dims = Tuple[int, int, int]


def _scale(a: Sequence[int], b: Sequence[int]) -> Dims:
    return tuple(int(x) * int(y) for x, y in zip(a, b))


def outgoing_sparsity(node: NodeSpec, sparsity: Mapping[str, Dims]) -> Dims:
    """Tap spacing seen by the nodes downstream of `node`."""
    if node.kind == "max_filter":
        return _scale(sparsity[node.name], node.window)
    return sparsity[node.name]


def infer_plan(spec: NetworkSpec) -> SparsityPlan:
    """
    Infer the sparsity every filtering node applies.

    Args:
        spec: Valid network spec

    Returns:
        SparsityPlan with per-node sparsity and accumulated field-of-view growth

    Raises:
        PlanError: If a concat joins maps of different sparsity or field of view
    """
    sparsity: Dict[str, Dims] = {}
    margin: Dict[str, Dims] = {}

    for node in spec.nodes:
        if node.kind == "input":
            sparsity[node.name] = (1, 1, 1)
            margin[node.name] = (0, 0, 0)
            continue

        upstream = [spec.node(u) for u in node.inputs]
        incoming = [outgoing_sparsity(u, sparsity) for u in upstream]
        margins = [margin[u.name] for u in upstream]
        if node.kind == "concat":
            if len(set(incoming)) != 1:
                raise PlanError(f"concat {node.name!r} joins maps of different sparsity: "
                                + ", ".join(f"{u.name}={s}" for u, s in zip(upstream, incoming)))
            if len(set(margins)) != 1:
                raise PlanError(f"concat {node.name!r} joins maps of different field of view: "
                                + ", ".join(f"{u.name}={tuple(m + 1 for m in g)}"
                                            for u, g in zip(upstream, margins)))

        sparsity[node.name] = incoming[0]
        margin[node.name] = tuple(
            m + (k - 1) * s for m, k, s in zip(margins[0], node.extent, incoming[0]))

    plan = SparsityPlan(sparsity=sparsity, margin=margin, output_name=spec.output_name)
    logger.debug(f"Inferred plan: field of view {plan.field_of_view()}")
    return plan


def field_of_view(spec: NetworkSpec) -> Dims:
    """
    Input extent that influences one output voxel.

    Returns:
        (fx, fy, fz) = 1 + sum over filtering nodes of (extent - 1) * sparsity
    """
    return infer_plan(spec).field_of_view()


def param_count(spec: NetworkSpec) -> int:
    """Number of trainable scalars: sum of out_maps * (in_maps * kx*ky*kz + 1)."""
    total = 0
    for node in spec.conv_nodes:
        total += node.out_maps * (spec.in_maps(node.name) * math.prod(node.filter_shape) + 1)
    return total


def param_shapes(spec: NetworkSpec) -> Dict[str, Tuple[Tuple[int, ...], Tuple[int]]]:
    """Weight and bias shapes of every conv node."""
    return {
        node.name: ((node.out_maps, spec.in_maps(node.name)) + tuple(node.filter_shape),
                    (node.out_maps,))
        for node in spec.conv_nodes
    }


def init_params(spec: NetworkSpec, seed: int) -> ParamState:
    """
    Draw initial parameters.

    Weights are uniform on +-sqrt(3 / fan_in) (variance 1 / fan_in) with
    fan_in = in_maps * kx * ky * kz; biases and momentum buffers are zero.
    Nodes are drawn in topological order from one generator, so the result
    depends only on the spec and the seed.
    """
    rng = np.random.default_rng(seed)
    state = ParamState()
    for name, (w_shape, b_shape) in param_shapes(spec).items():
        fan_in = math.prod(w_shape[1:])
        bound = math.sqrt(3.0 / fan_in)
        state.weights[name] = rng.uniform(-bound, bound, w_shape).astype(np.float32)
        state.biases[name] = np.zeros(b_shape, dtype=np.float32)
        state.weight_momentum[name] = np.zeros(w_shape, dtype=np.float32)
        state.bias_momentum[name] = np.zeros(b_shape, dtype=np.float32)
    logger.info(f"Initialized {param_count(spec)} parameters with seed {seed}")
    return state


def check_params(spec: NetworkSpec, params: ParamState) -> None:
    """
    Validate that a parameter state fits a spec.

    Raises:
        ShapeError: On missing nodes or mismatched array shapes
    """
    for name, (w_shape, b_shape) in param_shapes(spec).items():
        if name not in params.weights or name not in params.biases:
            raise ShapeError(f"no parameters for conv node {name!r}")
        if params.weights[name].shape != w_shape:
            raise ShapeError(f"weights of {name!r}", w_shape, params.weights[name].shape)
        if params.biases[name].shape != b_shape:
            raise ShapeError(f"biases of {name!r}", b_shape, params.biases[name].shape)


def layer_shapes(spec: NetworkSpec, input_dims: Sequence[int],
                 plan: Optional[SparsityPlan] = None) -> Dict[str, Dims]:
    """
    Spatial extent of every node's maps for a given input extent.

    Raises:
        ShapeError: If the input is smaller than the field of view
    """
    plan = plan or infer_plan(spec)
    fov = plan.field_of_view()
    if any(n < f for n, f in zip(input_dims, fov)):
        raise ShapeError("input smaller than the field of view", fov, tuple(input_dims))
    shapes: Dict[str, Dims] = {}
    for node in spec.nodes:
        if node.kind == "input":
            shapes[node.name] = tuple(int(n) for n in input_dims)
        elif node.kind in ("conv", "max_filter"):
            shapes[node.name] = valid_output_shape(shapes[node.inputs[0]], node.extent,
                                                   plan.sparsity[node.name])
        else:
            shapes[node.name] = shapes[node.inputs[0]]
    return shapes


def conv_layers(spec: NetworkSpec, input_dims: Sequence[int]):
    """(node, input_shape, kernel_shape, sparsity) per conv layer, for tuning."""
    plan = infer_plan(spec)
    shapes = layer_shapes(spec, input_dims, plan)
    counts = spec.channels()
    layers = []
    for node in spec.conv_nodes:
        upstream = node.inputs[0]
        layers.append((node.name, (counts[upstream],) + shapes[upstream],
                       (node.out_maps, counts[upstream]) + tuple(node.filter_shape),
                       plan.sparsity[node.name]))
    return layers


def softmax2(logits: np.ndarray) -> np.ndarray:
    """Per-voxel softmax over the two channels of (2, x, y, z) logits."""
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=0, keepdims=True)).astype(logits.dtype, copy=False)


def _prepare_inputs(spec: NetworkSpec, inputs: Mapping[str, np.ndarray],
                    precision: type = np.float32) -> Dict[str, np.ndarray]:
    """Validate inputs and bring them to (channels, x, y, z) of the given precision."""
    prepared: Dict[str, np.ndarray] = {}
    dims = None
    for name in spec.input_names:
        if name not in inputs:
            raise ShapeError(f"missing input {name!r}; network expects {spec.input_names}")
        arr = np.asarray(inputs[name], dtype=precision)
        if arr.ndim == 3:
            arr = arr[None]
        channels = spec.node(name).channels
        if arr.ndim != 4 or arr.shape[0] != channels:
            raise ShapeError(f"input {name!r} must have {channels} channel(s)",
                             (channels,), arr.shape)
        if dims is not None and arr.shape[1:] != dims:
            raise ShapeError("all inputs must have equal dims", dims, arr.shape[1:])
        dims = arr.shape[1:]
        prepared[name] = arr
    return prepared


def forward(spec: NetworkSpec, params: ParamState, inputs: Mapping[str, np.ndarray],
            keep_maps: bool = False, engine: Optional[ConvolutionEngine] = None,
            plan: Optional[SparsityPlan] = None, precision: type = np.float32) -> ForwardResult:
    """
    Evaluate the network over dense maps.

    Args:
        spec: Network spec
        params: Parameters for every conv node
        inputs: Map from input node name to (x, y, z) or (channels, x, y, z) arrays
        keep_maps: Retain every intermediate map (required before backward)
        engine: Convolution engine (a default one if not provided)
        plan: Precomputed plan for the spec
        precision: Map dtype, np.float32 or np.float64

    Returns:
        ForwardResult; the output entry is the 2-class softmax

    Raises:
        ShapeError: On missing inputs or inputs smaller than the field of view
    """
    engine = engine or ConvolutionEngine()
    plan = plan or infer_plan(spec)
    if precision not in (np.float32, np.float64):
        raise ConfigurationError(f"unsupported precision {precision!r}")
    maps = _prepare_inputs(spec, inputs, precision)
    layer_shapes(spec, next(iter(maps.values())).shape[1:], plan)

    remaining = {node.name: len(spec.consumers(node.name)) for node in spec.nodes}
    argmax: Dict[str, np.ndarray] = {}

    for node in spec.nodes:
        if node.kind == "input":
            continue
        upstream = [maps[u] for u in node.inputs]
        x = upstream[0]
        if node.kind == "conv":
            w = params.weights[node.name].astype(precision, copy=False)
            out = engine.conv_forward(node.name, x, w, plan.sparsity[node.name])
            out += params.biases[node.name].astype(precision, copy=False)[:, None, None, None]
        elif node.kind == "max_filter":
            out, winners = engine.max_filter_forward(x, node.window, plan.sparsity[node.name])
            if keep_maps:
                argmax[node.name] = winners
        elif node.kind == "activation":
            out = np.maximum(x, 0.0) if node.function == "relu" else np.tanh(x)
        elif node.kind == "concat":
            out = np.concatenate(upstream, axis=0)
        else:
            out = softmax2(x)
        maps[node.name] = out

        if not keep_maps:
            for u in node.inputs:
                remaining[u] -= 1
                if remaining[u] == 0:
                    del maps[u]

    return ForwardResult(maps=maps, argmax=argmax, output_name=spec.output_name)


def backward(spec: NetworkSpec, params: ParamState, activations: ForwardResult,
             labels: np.ndarray, weights: np.ndarray,
             engine: Optional[ConvolutionEngine] = None,
             plan: Optional[SparsityPlan] = None) -> ParamGradients:
    """
    Gradient of the weighted cross-entropy with respect to every parameter.

    The softmax and the loss are fused: the gradient at the output logits is
    weight * (p - y) per class.

    Args:
        spec: Network spec
        params: Parameters used in the forward pass
        activations: Result of forward(..., keep_maps=True)
        labels: Boundary labels in {0, 1}, shaped like the output
        weights: Per-voxel loss weights, shaped like the output
        engine: Convolution engine
        plan: Precomputed plan

    Returns:
        ParamGradients (not yet divided by the patch size)

    Raises:
        ShapeError: On mismatched labels/weights or a forward pass without kept maps
    """
    engine = engine or ConvolutionEngine()
    plan = plan or infer_plan(spec)
    maps = activations.maps
    probs = activations.probabilities
    out_dims = probs.shape[1:]
    precision = probs.dtype
    labels = np.asarray(labels, dtype=precision)
    weights = np.asarray(weights, dtype=precision)
    if labels.shape != out_dims or weights.shape != out_dims:
        raise ShapeError("labels and weights must match the output dims", out_dims,
                         labels.shape if labels.shape != out_dims else weights.shape)
    missing = [node.name for node in spec.nodes if node.name not in maps]
    if missing:
        raise ShapeError(f"backward needs a keep_maps forward pass; missing {missing[:3]}")

    grads: Dict[str, np.ndarray] = {}
    result = ParamGradients()

    def accumulate(name: str, g: np.ndarray) -> None:
        if spec.node(name).kind == "input":
            return
        if name in grads:
            grads[name] = grads[name] + g
        else:
            grads[name] = g

    for node in reversed(spec.nodes):
        if node.kind == "output":
            target = np.stack([1.0 - labels, labels])
            accumulate(node.inputs[0], (weights * (probs - target)).astype(precision, copy=False))
            continue
        if node.kind == "input" or node.name not in grads:
            continue

        g = grads.pop(node.name)
        out = maps[node.name]
        if node.kind == "conv":
            x = maps[node.inputs[0]]
            w = params.weights[node.name].astype(precision, copy=False)
            grad_x, grad_w = engine.conv_backward(node.name, x, w, plan.sparsity[node.name], g)
            result.weights[node.name] = grad_w
            result.biases[node.name] = g.sum(axis=(1, 2, 3), dtype=np.float64).astype(precision)
            accumulate(node.inputs[0], grad_x)
        elif node.kind == "activation":
            if node.function == "relu":
                accumulate(node.inputs[0], g * (out > 0))
            else:
                accumulate(node.inputs[0], g * (1.0 - out * out))
        elif node.kind == "max_filter":
            dims = maps[node.inputs[0]].shape[1:]
            accumulate(node.inputs[0],
                       engine.max_filter_backward(activations.argmax[node.name], g, dims))
        elif node.kind == "concat":
            start = 0
            for u in node.inputs:
                width = maps[u].shape[0]
                accumulate(u, g[start:start + width])
                start += width

    for node in spec.conv_nodes:
        if node.name not in result.weights:
            result.weights[node.name] = np.zeros_like(params.weights[node.name])
            result.biases[node.name] = np.zeros_like(params.biases[node.name])
    return result
