"""
Network spec parser for EM Boundary Net.

This module reads the line-oriented network description format and turns it
into a validated NetworkSpec. The grammar, one node per line:

    name kind args... [<- upstream[,upstream...]]

    image   input [channels]
    conv1a  conv 3x3x1 24         <- image
    relu1a  activation relu       <- conv1a
    pool1   max_filter 2x2x1      <- relu1a
    join    concat                <- a,b
    prob    output                <- conv_last

Text after `#` is a comment; blank lines are ignored. Nodes may be declared
in any order; they are re-ordered topologically (declaration order breaks
ties).
"""

import heapq
import logging
import re
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import ValidationError

from ..models.errors import SpecError
from ..models.network import NetworkSpec, NodeSpec

logger = logging.getLogger(__name__)

NAME_PATTERN = re.compile(r"^[A-Za-z_][A-Za-z0-9_.\-]*$")
KINDS = ("input", "conv", "max_filter", "activation", "concat", "output")
SHIPPED_NETS = ("n4", "vd2d", "vd2d3d", "small2d", "small2d3d")


def _parse_dims(token: str, line_number: int, line: str) -> Tuple[int, int, int]:
    """Parse `AxBxC` into a positive integer triple."""
    parts = token.lower().split("x")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise SpecError(f"expected extent like 3x3x1, got {token!r}", line_number, line)
    dims = tuple(int(p) for p in parts)
    if min(dims) < 1:
        raise SpecError("extents must be positive", line_number, line)
    return dims


def _parse_int(token: str, what: str, line_number: int, line: str) -> int:
    if not token.isdigit() or int(token) < 1:
        raise SpecError(f"{what} must be a positive integer, got {token!r}", line_number, line)
    return int(token)


def _parse_line(line_number: int, line: str) -> Optional[NodeSpec]:
    """
    Parse one line of a spec file.

    Args:
        line_number: 1-based line number
        line: Raw line text

    Returns:
        NodeSpec, or None for blank and comment-only lines

    Raises:
        SpecError: If the line is malformed
    """
    text = line.split("#", 1)[0].strip()
    if not text:
        return None

    if "<-" in text:
        head, tail = text.split("<-", 1)
        inputs = [u.strip() for u in tail.split(",")]
        if not all(inputs):
            raise SpecError("empty upstream name", line_number, line)
    else:
        head, inputs = text, []

    tokens = head.split()
    if len(tokens) < 2:
        raise SpecError("expected `name kind args...`", line_number, line)
    name, kind, args = tokens[0], tokens[1], tokens[2:]
    if not NAME_PATTERN.match(name):
        raise SpecError(f"invalid node name {name!r}", line_number, line)
    if kind not in KINDS:
        raise SpecError(f"unknown node kind {kind!r}", line_number, line)

    fields: Dict[str, object] = {"name": name, "kind": kind, "inputs": inputs,
                                 "line_number": line_number}
    expected_args = {"input": (0, 1), "conv": (2, 2), "max_filter": (1, 1),
                     "activation": (1, 1), "concat": (0, 0), "output": (0, 0)}[kind]
    if not expected_args[0] <= len(args) <= expected_args[1]:
        raise SpecError(f"{kind} takes {expected_args[1]} argument(s), got {len(args)}",
                        line_number, line)

    if kind == "input" and args:
        fields["channels"] = _parse_int(args[0], "channel count", line_number, line)
    elif kind == "conv":
        fields["filter_shape"] = _parse_dims(args[0], line_number, line)
        fields["out_maps"] = _parse_int(args[1], "feature-map count", line_number, line)
    elif kind == "max_filter":
        fields["window"] = _parse_dims(args[0], line_number, line)
    elif kind == "activation":
        if args[0] not in ("relu", "tanh"):
            raise SpecError(f"unknown activation {args[0]!r}", line_number, line)
        fields["function"] = args[0]

    try:
        return NodeSpec(**fields)
    except ValidationError as e:
        message = "; ".join(err["msg"] for err in e.errors())
        raise SpecError(message, line_number, line)


def _topological_order(nodes: List[NodeSpec], lines: Dict[int, str]) -> List[NodeSpec]:
    """Kahn's algorithm, declaration order breaking ties; reports cycles."""
    position = {node.name: i for i, node in enumerate(nodes)}
    pending = {node.name: len(node.inputs) for node in nodes}
    consumers: Dict[str, List[str]] = {node.name: [] for node in nodes}
    for node in nodes:
        for upstream in node.inputs:
            consumers[upstream].append(node.name)

    ready = [position[name] for name, count in pending.items() if count == 0]
    heapq.heapify(ready)
    ordered: List[NodeSpec] = []
    while ready:
        node = nodes[heapq.heappop(ready)]
        ordered.append(node)
        for consumer in consumers[node.name]:
            pending[consumer] -= 1
            if pending[consumer] == 0:
                heapq.heappush(ready, position[consumer])

    if len(ordered) != len(nodes):
        stuck = [node for node in nodes if pending[node.name] > 0]
        names = ", ".join(node.name for node in stuck)
        first = stuck[0]
        raise SpecError(f"cycle through nodes {names}", first.line_number,
                        lines.get(first.line_number, ""))
    return ordered


def parse_spec(text: str) -> NetworkSpec:
    """
    Parse and validate a network spec.

    Args:
        text: Spec file contents

    Returns:
        Structurally valid NetworkSpec in topological order

    Raises:
        SpecError: On unknown kinds, duplicate names, dangling references,
            cycles, or an output that is not a 2-map softmax head
    """
    lines = {i: line for i, line in enumerate(text.splitlines(), start=1)}
    nodes: List[NodeSpec] = []
    seen: Dict[str, int] = {}
    for line_number, line in lines.items():
        node = _parse_line(line_number, line)
        if node is None:
            continue
        if node.name in seen:
            raise SpecError(f"duplicate node name {node.name!r} (first on line {seen[node.name]})",
                            line_number, line)
        seen[node.name] = line_number
        nodes.append(node)

    if not nodes:
        raise SpecError("spec declares no nodes")

    for node in nodes:
        for upstream in node.inputs:
            if upstream not in seen:
                raise SpecError(f"unknown upstream node {upstream!r}", node.line_number,
                                lines[node.line_number])
            if upstream == node.name:
                raise SpecError(f"cycle through nodes {node.name}", node.line_number,
                                lines[node.line_number])

    outputs = [node for node in nodes if node.kind == "output"]
    if len(outputs) != 1:
        raise SpecError(f"expected exactly one output node, found {len(outputs)}")
    if not any(node.kind == "input" for node in nodes):
        raise SpecError("spec declares no input node")

    ordered = _topological_order(nodes, lines)
    spec = NetworkSpec(nodes=ordered, source_text=text)

    output = spec.node(spec.output_name)
    if spec.consumers(output.name):
        raise SpecError("the output node cannot feed other nodes", output.line_number,
                        lines[output.line_number])
    head_maps = spec.channels()[output.inputs[0]]
    if head_maps != 2:
        raise SpecError(f"output needs exactly 2 upstream maps for the 2-class softmax, "
                        f"got {head_maps}", output.line_number, lines[output.line_number])

    _check_reachability(spec, lines)
    logger.info(f"Parsed network spec: {len(spec.nodes)} nodes, inputs {spec.input_names}")
    return spec


def _check_reachability(spec: NetworkSpec, lines: Dict[int, str]) -> None:
    """Every input must reach the output; nodes that do not are reported."""
    reaches_output = {spec.output_name}
    for node in reversed(spec.nodes):
        if node.name in reaches_output:
            reaches_output.update(node.inputs)
    for name in spec.input_names:
        if name not in reaches_output:
            node = spec.node(name)
            raise SpecError(f"input {name!r} does not reach the output", node.line_number,
                            lines.get(node.line_number, ""))
    dead = [node.name for node in spec.nodes if node.name not in reaches_output]
    if dead:
        logger.warning(f"Nodes not contributing to the output: {', '.join(dead)}")


def load_spec(source: Union[str, Path]) -> NetworkSpec:
    """
    Load a spec from a file path or the name of a shipped network.

    Args:
        source: Path to a spec file, or one of the shipped names (e.g. "vd2d")

    Returns:
        Parsed NetworkSpec
    """
    path = Path(source)
    if not path.exists() and str(source) in SHIPPED_NETS:
        text = resources.files("em_boundary_net.nets").joinpath(f"{source}.net").read_text()
        return parse_spec(text)
    return parse_spec(path.read_text())
