import numpy as np
import pytest

from nefsim import graph as gr
from nefsim.errors import (
    DuplicateIdError,
    FrozenGraphError,
    LearningOnNodeError,
    ShapeMismatchError,
    UnknownEndpointError,
)


def small_graph():
    g = gr.ModelGraph()
    g.add_node(gr.NodeSpec("in", 2, gr.EXTERNAL_INPUT))
    g.add_node(gr.NodeSpec("out", 1, gr.EXTERNAL_OUTPUT))
    g.add_ensemble(gr.Ensemble("a", n_neurons=40, dimensions=2))
    return g


class TestConstruction:
    def test_add_ensemble(self):
        g = gr.ModelGraph()
        g.add_ensemble(gr.Ensemble("a", n_neurons=10, dimensions=1))
        assert [e.id for e in g.ensembles] == ["a"]

    def test_duplicate_id(self):
        g = gr.ModelGraph()
        g.add_ensemble(gr.Ensemble("a", n_neurons=10, dimensions=1))
        with pytest.raises(DuplicateIdError):
            g.add_ensemble(gr.Ensemble("a", n_neurons=5, dimensions=1))

    def test_degenerate_count_deferred_to_validation(self):
        g = gr.ModelGraph()
        g.add_ensemble(gr.Ensemble("a", n_neurons=0, dimensions=1))
        diags = g.validate()
        assert any(d.code == "InvalidParam" and d.subject == "a" for d in diags)

    def test_connect_identity(self):
        g = small_graph()
        g.connect(gr.ConnectionSpec("c", "in", "a"))
        assert g.connection("c").transform.shape == (2, 2)

    def test_connect_shape_mismatch(self):
        g = small_graph()
        with pytest.raises(ShapeMismatchError):
            g.connect(gr.ConnectionSpec("c", "a", "out",
                                        transform=np.ones((1, 3))))

    def test_connect_unknown_endpoint(self):
        g = small_graph()
        with pytest.raises(UnknownEndpointError):
            g.connect(gr.ConnectionSpec("c", "in", "missing"))

    def test_learning_on_node_source(self):
        g = small_graph()
        g.add_node(gr.NodeSpec("mid", 2, gr.PASSTHROUGH))
        with pytest.raises(LearningOnNodeError):
            g.connect(gr.ConnectionSpec(
                "c", "in", "mid", learning=gr.PESConfig(1e-3, "out")))


class TestValidation:
    def test_control_style_graph_is_clean(self):
        # two ensembles fed by one input node, two decoded outputs
        g = gr.ModelGraph()
        g.register_function("norm", lambda v: np.array([np.linalg.norm(v)]))
        g.add_node(gr.NodeSpec("sense", 3, gr.EXTERNAL_INPUT))
        g.add_node(gr.NodeSpec("motor", 2, gr.EXTERNAL_OUTPUT))
        g.add_ensemble(gr.Ensemble("drive", n_neurons=64, dimensions=2))
        g.add_ensemble(gr.Ensemble("steer", n_neurons=64, dimensions=3))
        g.connect(gr.ConnectionSpec("s1", "sense", "drive",
                                    transform=np.eye(2, 3)))
        g.connect(gr.ConnectionSpec("s2", "sense", "steer"))
        g.connect(gr.ConnectionSpec("o1", "drive", "motor", function_tag="norm",
                                    transform=[[1.0], [0.0]], synapse=0.02))
        g.connect(gr.ConnectionSpec("o2", "steer", "motor", function_tag="norm",
                                    transform=[[0.0], [1.0]], synapse=0.02))
        assert g.validate() == []

    def test_dangling_error_source(self):
        g = small_graph()
        g.register_function("z1", lambda v: np.zeros(1))
        g.connect(gr.ConnectionSpec("c", "a", "out", function_tag="z1",
                                    learning=gr.PESConfig(1e-3, "missing")))
        diags = g.validate()
        assert len(diags) == 1
        assert diags[0].code == "UnknownEndpoint"

    def test_boundary_intercept_range(self):
        g = gr.ModelGraph()
        g.add_ensemble(gr.Ensemble("a", n_neurons=10, dimensions=1,
                                   intercept_range=(1.0, 1.0)))
        diags = g.validate()
        assert len(diags) == 1
        assert diags[0].code == "InvalidParam"

    def test_external_io_direction(self):
        g = small_graph()
        g.connect(gr.ConnectionSpec("bad_in", "a", "in",
                                    transform=np.eye(2)))
        diags = g.validate()
        assert any("inbound" in d.message for d in diags)

    def test_max_rate_ceiling(self):
        g = gr.ModelGraph()
        g.add_ensemble(gr.Ensemble("a", n_neurons=10, dimensions=1,
                                   max_rate_range=(400.0, 600.0)))
        assert any("ceiling" in d.message for d in g.validate())

    def test_frozen_after_clean_validation(self):
        g = small_graph()
        g.connect(gr.ConnectionSpec("c", "in", "a"))
        assert g.validate() == []
        with pytest.raises(FrozenGraphError):
            g.add_node(gr.NodeSpec("late", 1, gr.PASSTHROUGH))

    def test_probe_sample_every_must_be_dt_multiple(self):
        g = small_graph()
        g.add_probe(gr.ProbeSpec("p", "a", gr.DECODED_OUTPUT,
                                 sample_every=0.0015))
        assert any("multiple of dt" in d.message for d in g.validate())

    def test_nonpositive_synapse_rejected(self):
        g = small_graph()
        g.connect(gr.ConnectionSpec("c", "in", "a", synapse=0.0))
        assert any("synapse" in d.message for d in g.validate())

    def test_node_cycle_detected(self):
        g = gr.ModelGraph()
        g.add_node(gr.NodeSpec("p1", 1, gr.PASSTHROUGH))
        g.add_node(gr.NodeSpec("p2", 1, gr.PASSTHROUGH))
        g.connect(gr.ConnectionSpec("c1", "p1", "p2"))
        g.connect(gr.ConnectionSpec("c2", "p2", "p1"))
        assert any(d.code == "CyclicNodes" for d in g.validate())


class TestCanonicalForm:
    def test_order_independence(self):
        def build(order):
            g = gr.ModelGraph()
            parts = {
                "n_in": lambda: g.add_node(gr.NodeSpec("in", 1, gr.EXTERNAL_INPUT)),
                "n_out": lambda: g.add_node(gr.NodeSpec("out", 1, gr.EXTERNAL_OUTPUT)),
                "e_a": lambda: g.add_ensemble(gr.Ensemble("a", 30, 1)),
                "e_b": lambda: g.add_ensemble(gr.Ensemble("b", 30, 1)),
            }
            for name in order:
                parts[name]()
            g.connect(gr.ConnectionSpec("c1", "in", "a"))
            g.connect(gr.ConnectionSpec("c2", "a", "b", synapse=0.005))
            g.connect(gr.ConnectionSpec("c3", "b", "out", synapse=0.01))
            return g

        base = build(["n_in", "n_out", "e_a", "e_b"]).canonical_form()
        for order in (["e_b", "e_a", "n_out", "n_in"],
                      ["e_a", "n_in", "e_b", "n_out"]):
            assert build(order).canonical_form() == base

    def test_different_graphs_differ(self):
        g1 = small_graph()
        g2 = small_graph()
        g2.connect(gr.ConnectionSpec("c", "in", "a"))
        assert g1.canonical_form() != g2.canonical_form()
