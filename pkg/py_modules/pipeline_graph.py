"""Command/artifact dependency graph of the pipeline.

Commands and the artifacts they read or write form a bipartite DAG
(artifact -> command for requirements, command -> artifact for products).
The CLI checks a command's requirements against the artifact root before
running it; reports and `status` render the graph as Mermaid.
"""
import os
from typing import Dict, Iterable, List, Mapping, Optional

import networkx as nx

from checkpoints import checkpoint_paths
from errors import DependencyError, InvalidArgumentError

# (command, requires, produces)
PIPELINE = (
    ("make-data", (), ("data",)),
    ("train-gen", ("data",), ("generator",)),
    ("fit-depth-prior", ("generator",), ("depth_prior",)),
    ("train-encoder", ("data", "generator", "depth_prior"), ("encoder",)),
    ("train-afa", ("data", "generator", "encoder", "depth_prior"), ("afa",)),
    ("invert", ("generator", "encoder", "afa"), ("bundle",)),
    ("render", ("generator", "bundle"), ("views",)),
    ("fit-direction", ("generator",), ("direction",)),
    ("edit", ("generator", "bundle", "direction"), ("views",)),
    ("eval", ("generator", "encoder", "afa", "data"), ("report",)),
)


def build_pipeline_graph() -> nx.DiGraph:
    graph = nx.DiGraph()
    for command, requires, produces in PIPELINE:
        graph.add_node(command, kind="command")
        for artifact in requires:
            graph.add_node(artifact, kind="artifact")
            graph.add_edge(artifact, command)
        for artifact in produces:
            graph.add_node(artifact, kind="artifact")
            graph.add_edge(command, artifact)
    if not nx.is_directed_acyclic_graph(graph):
        raise InvalidArgumentError("pipeline graph has a cycle")
    return graph


def artifact_paths(out_dir: str, extra: Optional[Mapping[str, str]] = None) -> Dict[str, str]:
    """Artifact name -> path whose existence marks the artifact present."""
    paths = checkpoint_paths(out_dir)
    paths["data"] = os.path.join(paths["data"], "dataset.json")
    paths["report"] = os.path.join(out_dir, "reports", "metrics.csv")
    paths.update(extra or {})
    return paths


def pipeline_status(out_dir: str, extra: Optional[Mapping[str, str]] = None) -> Dict[str, bool]:
    graph = build_pipeline_graph()
    paths = artifact_paths(out_dir, extra)
    return {node: bool(paths.get(node)) and os.path.exists(paths[node])
            for node, kind in graph.nodes(data="kind") if kind == "artifact"}


def upstream_commands(graph: nx.DiGraph, artifacts: Iterable[str], status: Mapping[str, bool]) -> List[str]:
    """Commands that must run (topological order) to produce the given missing artifacts."""
    needed, stack = set(), list(artifacts)
    while stack:
        artifact = stack.pop()
        for producer in graph.predecessors(artifact):
            if producer in needed:
                continue
            needed.add(producer)
            stack.extend(a for a in graph.predecessors(producer) if not status.get(a, False))
    return [n for n in nx.topological_sort(graph) if n in needed]


def check_requirements(command: str, out_dir: str, skip: Iterable[str] = (),
                       extra: Optional[Mapping[str, str]] = None) -> None:
    graph = build_pipeline_graph()
    if command not in graph or graph.nodes[command]["kind"] != "command":
        raise InvalidArgumentError(f"unknown command '{command}'")
    status = pipeline_status(out_dir, extra)
    paths = artifact_paths(out_dir, extra)
    skip = set(skip)
    missing = [a for a in graph.predecessors(command) if a not in skip and not status.get(a, False)]
    if missing:
        listed = ", ".join(f"{a} ({paths.get(a, '?')})" for a in missing)
        todo = [c for c in upstream_commands(graph, missing, status) if c != command]
        hint = f"; run first: {' -> '.join(todo)}" if todo else ""
        raise DependencyError(f"{command} is missing {listed}{hint}")


def _node_id(name: str) -> str:
    return name.replace("-", "_")


def to_mermaid(graph: Optional[nx.DiGraph] = None, status: Optional[Mapping[str, bool]] = None) -> str:
    graph = build_pipeline_graph() if graph is None else graph
    status = status or {}
    mer = ["```mermaid", "graph LR"]
    mer.append("  classDef present fill:#c8e6c9;")
    mer.append("  classDef missing fill:#ffcdd2;")
    for node in nx.topological_sort(graph):
        nid = _node_id(node)
        if graph.nodes[node]["kind"] == "command":
            mer.append(f"  {nid}([\"{node}\"])")
        else:
            mer.append(f"  {nid}[\"{node}\"]")
            if node in status:
                mer.append(f"  class {nid} {'present' if status[node] else 'missing'};")
    for src, dst in sorted(graph.edges()):
        mer.append(f"  {_node_id(src)} --> {_node_id(dst)}")
    mer.append("```")
    return "\n".join(mer) + "\n"
