"""
Network Models for EM Boundary Net.

This module defines the Pydantic models that describe a network and its state:
1. NodeSpec / NetworkSpec - the layer DAG parsed from a spec file
2. SparsityPlan - per-node filter sparsity and accumulated field of view
3. ParamState / ParamGradients - trainable arrays and their gradients
4. ForwardResult - dense feature maps produced by a forward pass
"""

from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


Dims = Tuple[int, int, int]

NodeKind = Literal["input", "conv", "max_filter", "activation", "concat", "output"]
ActivationName = Literal["relu", "tanh"]


class NodeSpec(BaseModel):
    """
    One node of the network DAG.

    Only the fields relevant to `kind` are set: conv nodes carry a filter shape
    and feature-map count, max_filter nodes a window, activation nodes a
    function name and input nodes a channel count.
    """

    name: str = Field(
        description="Unique node identifier"
    )
    kind: NodeKind = Field(
        description="Node type"
    )
    inputs: List[str] = Field(
        default_factory=list,
        description="Names of upstream nodes"
    )
    filter_shape: Optional[Dims] = Field(
        default=None,
        description="Conv filter extent (kx, ky, kz)"
    )
    out_maps: Optional[int] = Field(
        default=None,
        description="Number of feature maps a conv node produces"
    )
    window: Optional[Dims] = Field(
        default=None,
        description="Max-filter window (wx, wy, wz)"
    )
    function: Optional[ActivationName] = Field(
        default=None,
        description="Activation function"
    )
    channels: int = Field(
        default=1,
        description="Channel count of an input node"
    )
    line_number: Optional[int] = Field(
        default=None,
        description="Source line in the spec file, for diagnostics"
    )

    @model_validator(mode='after')
    def validate_kind_fields(self):
        """Validate that each kind carries its arguments and upstream arity."""
        arity = len(self.inputs)
        if self.kind == "input":
            if arity:
                raise ValueError('input nodes take no upstream nodes')
            if self.channels < 1:
                raise ValueError('input channel count must be positive')
        elif self.kind == "concat":
            if arity < 2:
                raise ValueError('concat needs at least two upstream nodes')
        elif arity != 1:
            raise ValueError(f'{self.kind} needs exactly one upstream node')

        if self.kind == "conv":
            if self.filter_shape is None or self.out_maps is None:
                raise ValueError('conv needs a filter shape and a feature-map count')
            if min(self.filter_shape) < 1 or self.out_maps < 1:
                raise ValueError('conv filter shape and feature-map count must be positive')
        if self.kind == "max_filter":
            if self.window is None or min(self.window) < 1:
                raise ValueError('max_filter needs a positive window')
        if self.kind == "activation" and self.function is None:
            raise ValueError('activation needs a function name')
        return self

    @property
    def extent(self) -> Dims:
        """Spatial footprint of a filtering node, (1,1,1) for the others."""
        if self.kind == "conv":
            return self.filter_shape
        if self.kind == "max_filter":
            return self.window
        return (1, 1, 1)


class NetworkSpec(BaseModel):
    """
    A validated network: nodes in topological order plus the source text.
    """

    nodes: List[NodeSpec] = Field(
        description="Nodes in topological order"
    )
    source_text: str = Field(
        default="",
        description="Spec file text the network was parsed from"
    )

    @field_validator('nodes')
    @classmethod
    def validate_nodes(cls, v):
        """Validate node names are unique and there is exactly one output."""
        names = [node.name for node in v]
        if len(set(names)) != len(names):
            raise ValueError('node names must be unique')
        if sum(node.kind == "output" for node in v) != 1:
            raise ValueError('a network has exactly one output node')
        if not any(node.kind == "input" for node in v):
            raise ValueError('a network has at least one input node')
        return v

    def node(self, name: str) -> NodeSpec:
        """Get a node by name."""
        for node in self.nodes:
            if node.name == name:
                return node
        raise KeyError(name)

    @property
    def input_names(self) -> List[str]:
        """Names of the input nodes in declaration order."""
        return [node.name for node in self.nodes if node.kind == "input"]

    @property
    def output_name(self) -> str:
        """Name of the output node."""
        return next(node.name for node in self.nodes if node.kind == "output")

    @property
    def conv_nodes(self) -> List[NodeSpec]:
        """Conv nodes in topological order."""
        return [node for node in self.nodes if node.kind == "conv"]

    def consumers(self, name: str) -> List[str]:
        """Names of the nodes reading from `name`."""
        return [node.name for node in self.nodes if name in node.inputs]

    def channels(self) -> Dict[str, int]:
        """
        Get the number of feature maps every node produces.

        Returns:
            Dictionary from node name to channel count
        """
        counts: Dict[str, int] = {}
        for node in self.nodes:
            if node.kind == "input":
                counts[node.name] = node.channels
            elif node.kind == "conv":
                counts[node.name] = node.out_maps
            elif node.kind == "concat":
                counts[node.name] = sum(counts[u] for u in node.inputs)
            else:
                counts[node.name] = counts[node.inputs[0]]
        return counts

    def in_maps(self, name: str) -> int:
        """Number of feature maps feeding a node."""
        node = self.node(name)
        counts = self.channels()
        return sum(counts[u] for u in node.inputs)


class SparsityPlan(BaseModel):
    """
    Per-node filter sparsity and field-of-view bookkeeping.

    `sparsity[n]` is the tap spacing applied by node n (the cumulative product
    of upstream max-filter windows). `margin[n]` is how many voxels per axis the
    dense maps have lost between the inputs and the output of n.
    """

    sparsity: Dict[str, Dims] = Field(
        description="Tap spacing per node"
    )
    margin: Dict[str, Dims] = Field(
        description="Accumulated field-of-view growth (fov - 1) after each node"
    )
    output_name: str = Field(
        description="Name of the output node"
    )

    def field_of_view(self) -> Dims:
        """Field of view of one output voxel."""
        return tuple(m + 1 for m in self.margin[self.output_name])


class ParamState(BaseModel):
    """
    Trainable parameters of every conv node plus their momentum buffers.

    Weights are float32 arrays of shape (out_maps, in_maps, kx, ky, kz) and
    biases float32 arrays of shape (out_maps,).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Filter taps per conv node"
    )
    biases: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Bias per output map per conv node"
    )
    weight_momentum: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Momentum buffers shaped like weights"
    )
    bias_momentum: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Momentum buffers shaped like biases"
    )

    def copy(self) -> "ParamState":
        """Deep copy of every array."""
        return ParamState(
            weights={k: v.copy() for k, v in self.weights.items()},
            biases={k: v.copy() for k, v in self.biases.items()},
            weight_momentum={k: v.copy() for k, v in self.weight_momentum.items()},
            bias_momentum={k: v.copy() for k, v in self.bias_momentum.items()},
        )

    def ensure_momentum(self) -> "ParamState":
        """Add zero momentum buffers for arrays stored without one."""
        for name, w in self.weights.items():
            self.weight_momentum.setdefault(name, np.zeros_like(w))
        for name, b in self.biases.items():
            self.bias_momentum.setdefault(name, np.zeros_like(b))
        return self

    def total_parameters(self) -> int:
        """Number of trainable scalars (momentum excluded)."""
        return int(sum(w.size for w in self.weights.values())
                   + sum(b.size for b in self.biases.values()))

    def equals(self, other: "ParamState") -> bool:
        """Exact equality of weights and biases."""
        if self.weights.keys() != other.weights.keys():
            return False
        return all(np.array_equal(self.weights[k], other.weights[k])
                   and np.array_equal(self.biases[k], other.biases[k])
                   for k in self.weights)


class ParamGradients(BaseModel):
    """Gradients of the loss with respect to every conv parameter."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    weights: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Gradient per weight array"
    )
    biases: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Gradient per bias array"
    )


class ForwardResult(BaseModel):
    """
    Dense maps of a forward pass.

    `maps` holds the (channels, x, y, z) output of every retained node; the
    output node's entry is the 2-class softmax. `argmax` holds the winner
    indices of every max_filter node, needed by the backward pass.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    maps: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Feature maps by node name"
    )
    argmax: Dict[str, np.ndarray] = Field(
        default_factory=dict,
        description="Max-filter winner indices by node name"
    )
    output_name: str = Field(
        description="Name of the output node"
    )

    @property
    def probabilities(self) -> np.ndarray:
        """Softmax output, shape (2, x, y, z)."""
        return self.maps[self.output_name]

    @property
    def boundary(self) -> np.ndarray:
        """Class-1 (boundary) probability, shape (x, y, z)."""
        return self.maps[self.output_name][1]
