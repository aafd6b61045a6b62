import os

import networkx as nx
import pytest

from errors import DependencyError, InvalidArgumentError
from pipeline_graph import (
    PIPELINE,
    build_pipeline_graph,
    check_requirements,
    pipeline_status,
    to_mermaid,
    upstream_commands,
)


def _touch(path):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    open(path, "wb").close()


class TestGraph:
    def test_bipartite_dag(self):
        graph = build_pipeline_graph()
        assert nx.is_directed_acyclic_graph(graph)
        commands = {n for n, kind in graph.nodes(data="kind") if kind == "command"}
        assert commands == {c for c, _, _ in PIPELINE}
        for src, dst in graph.edges():
            assert graph.nodes[src]["kind"] != graph.nodes[dst]["kind"]

    def test_upstream_chain(self):
        graph = build_pipeline_graph()
        assert upstream_commands(graph, ["encoder"], {}) == \
            ["make-data", "train-gen", "fit-depth-prior", "train-encoder"]
        assert upstream_commands(graph, ["encoder"], {"data": True, "generator": True, "depth_prior": True}) == \
            ["train-encoder"]


class TestRequirements:
    def test_empty_root(self, tmp_path):
        status = pipeline_status(str(tmp_path))
        assert status and not any(status.values())
        with pytest.raises(DependencyError, match="run first: make-data -> train-gen -> fit-depth-prior"):
            check_requirements("train-encoder", str(tmp_path))

    def test_skipped_artifact(self, tmp_path):
        with pytest.raises(DependencyError) as info:
            check_requirements("train-encoder", str(tmp_path), skip=("depth_prior",))
        assert "depth_prior" not in str(info.value)
        assert str(info.value).endswith("run first: make-data -> train-gen")

    def test_present_artifacts(self, tmp_path):
        _touch(str(tmp_path / "data" / "dataset.json"))
        _touch(str(tmp_path / "checkpoints" / "generator.tpck"))
        check_requirements("fit-depth-prior", str(tmp_path))
        check_requirements("train-gen", str(tmp_path))
        assert pipeline_status(str(tmp_path))["generator"]

    def test_extra_artifact_paths(self, tmp_path):
        _touch(str(tmp_path / "checkpoints" / "generator.tpck"))
        bundle = str(tmp_path / "b.tpck")
        with pytest.raises(DependencyError, match="b.tpck"):
            check_requirements("render", str(tmp_path), extra={"bundle": bundle})
        _touch(bundle)
        check_requirements("render", str(tmp_path), extra={"bundle": bundle})

    @pytest.mark.parametrize("name", ["bogus", "data"])
    def test_unknown_command(self, tmp_path, name):
        with pytest.raises(InvalidArgumentError):
            check_requirements(name, str(tmp_path))


class TestMermaid:
    def test_nodes_edges_and_status(self):
        text = to_mermaid(status={"data": True, "generator": False})
        assert text.startswith("```mermaid\ngraph LR\n") and text.endswith("```\n")
        assert '  make_data(["make-data"])' in text
        assert '  depth_prior["depth_prior"]' in text
        assert "  data --> train_gen" in text
        assert "  class data present;" in text and "  class generator missing;" in text
        assert "class encoder" not in text
