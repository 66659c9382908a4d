import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfcam.explainability import (Edge, InfluenceGraph, InfluenceQuery, Node, OrderingError,
                                  aggregate_attention, alpha_csv, attention_csv,
                                  build_influence_hierarchy, chained_influence, export_graph,
                                  feature_importance, graph_from_json, graph_to_json,
                                  parse_node_id, temporal_profile)


def _column_stochastic(rng, B, T, causal=True):
    A = rng.random((B, T, T))
    if causal:
        A = np.triu(A)
    return A / A.sum(axis=1, keepdims=True)


# --- aggregation ----------------------------------------------------------

def test_aggregate_single_slice_is_identity(rng):
    a = rng.random((2, 1, 1, 3, 3))
    assert np.array_equal(aggregate_attention(a), a[:, 0, 0])


def test_aggregate_two_heads_is_average(rng):
    P, Q = rng.random((3, 3)), rng.random((3, 3))
    out = aggregate_attention(np.stack([P, Q])[None, None])
    np.testing.assert_allclose(out[0], (P + Q) / 2, atol=1e-15)


def test_aggregate_matches_loop_oracle(rng):
    a = rng.random((2, 2, 3, 4, 4))
    expected = np.zeros((2, 4, 4))
    for b in range(2):
        for l in range(2):
            for h in range(3):
                expected[b] += a[b, l, h]
    np.testing.assert_allclose(aggregate_attention(a), expected / 6, atol=1e-15)


def test_aggregate_preserves_normalization(rng):
    heads = np.stack([_column_stochastic(rng, 2, 5) for _ in range(6)], axis=1).reshape(2, 2, 3, 5, 5)
    np.testing.assert_allclose(aggregate_attention(heads).sum(axis=1), 1.0, atol=1e-9)


def test_aggregate_errors():
    with pytest.raises(ValueError):
        aggregate_attention(np.zeros((1, 0, 2, 3, 3)))
    with pytest.raises(ValueError):
        aggregate_attention(np.zeros((3, 3)))


# --- chained influence ----------------------------------------------------

def test_influence_trivial_cases():
    C = np.zeros((1, 2, 2))
    A = np.zeros((1, 2, 2))
    C[0, 0, 0] = C[0, 1, 1] = A[0, 0, 1] = 1.0
    assert chained_influence(C, A, 0, 0, 1, 1).tolist() == [1.0]
    assert chained_influence(C, A, 0, 1, 1, 1).tolist() == [0.0]


def test_influence_matches_direct_product_and_mean(rng):
    C, A = rng.normal(size=(4, 5, 3)), _column_stochastic(rng, 4, 5)
    per = chained_influence(C, A, 1, 2, 3, 0)
    expected = [C[b, 1, 2] * A[b, 1, 3] * C[b, 3, 0] for b in range(4)]
    np.testing.assert_allclose(per, expected, atol=1e-12)
    assert chained_influence(C, A, 1, 2, 3, 0, reduce="mean") == pytest.approx(np.mean(expected))


def test_influence_ignores_other_entries(rng):
    C, A = rng.normal(size=(2, 4, 3)), _column_stochastic(rng, 2, 4)
    before = chained_influence(C, A, 0, 1, 2, 2)
    C2 = C.copy()
    C2[:, 3] = 99.0
    C2[:, 1] = -5.0
    assert np.array_equal(chained_influence(C2, A, 0, 1, 2, 2), before)


def test_influence_ordering_and_range_errors(rng):
    C, A = rng.normal(size=(1, 3, 2)), _column_stochastic(rng, 1, 3)
    with pytest.raises(OrderingError):
        chained_influence(C, A, 2, 0, 1, 0)
    with pytest.raises(OrderingError):
        chained_influence(C, A, 1, 0, 1, 0)
    with pytest.raises(IndexError):
        chained_influence(C, A, 0, 5, 1, 0)
    assert chained_influence(C, A, 2, 0, 1, 0, causal=False).shape == (1,)


# --- temporal profile -----------------------------------------------------

def test_profile_single_patient():
    prof = temporal_profile([[0.2, 0.8]], [1])
    assert prof.mean_alpha_all.tolist() == prof.mean_alpha_positive.tolist() == [0.2, 0.8]
    assert prof.mean_alpha_negative is None
    assert prof.warnings == ["negative stratum empty"]


def test_profile_crossing_hand_example():
    prof = temporal_profile([[1.0, 0.0], [0.0, 1.0]], [1, 0])
    assert prof.crossings == [(0, 1)]
    assert prof.mean_alpha_all.tolist() == [0.5, 0.5]


def test_profile_uniform_has_no_crossings():
    prof = temporal_profile(np.full((4, 3), 1 / 3), [0, 1, 0, 1])
    assert prof.crossings == []


def test_profile_crossing_skips_ties():
    # gap: +, 0, - -> one crossing spanning the tie
    alpha = np.array([[0.5, 0.3, 0.2], [0.3, 0.3, 0.4]])
    assert temporal_profile(alpha, [1, 0]).crossings == [(0, 2)]


# --- feature importance ---------------------------------------------------

def test_importance_zeros_are_lexicographic():
    imp = feature_importance(np.zeros((2, 2, 3)), ["c", "a", "b"])
    assert imp.names == ["a", "b", "c"] and imp.scores.tolist() == [0, 0, 0]


def test_importance_single_entry():
    C = np.zeros((1, 1, 3))
    C[0, 0, 2] = 5.0
    assert feature_importance(C, ["x", "y", "z"]).ranking[0] == ("z", 5.0)


def test_importance_matches_loop_oracle(rng):
    C = rng.normal(size=(3, 2, 4))
    names = ["f0", "f1", "f2", "f3"]
    oracle = {}
    for i, n in enumerate(names):
        oracle[n] = sum(abs(C[b, t, i]) for b in range(3) for t in range(2)) / 6
    imp = feature_importance(C, names)
    for name, score in imp.ranking:
        assert score == pytest.approx(oracle[name], abs=1e-14)
    assert imp.names == sorted(names, key=lambda n: -oracle[n])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 1000))
def test_importance_sorted_descending(B, T, seed):
    C = np.random.default_rng(seed).normal(size=(B, T, 5))
    scores = feature_importance(C, list("edcba")).scores
    assert np.all(np.diff(scores) <= 0)


# --- influence hierarchy --------------------------------------------------

# Hand-filled toy instance, T=3, F=2 (features "a", "b").
#   C[t0] = ( 1.0, -2.0)   C[t1] = (0.5, 3.0)   C[t2] = (-4.0, 1.0)
#   A[0,1] = 0.6, A[0,2] = 0.2, A[1,2] = 0.5 (columns sum to 1)
TOY_C = np.array([[[1.0, -2.0], [0.5, 3.0], [-4.0, 1.0]]])
TOY_A = np.array([[[1.0, 0.6, 0.2], [0.0, 0.4, 0.5], [0.0, 0.0, 0.3]]])


def test_hierarchy_toy_depth3_k1():
    # level 1: |C[t2]| = (4, 1)               -> a@t2, weight -4
    # level 2: I(t1,i; t2,a) = C[t1,i]*0.5*-4  -> (-1, -6)  -> b@t1, weight -6
    # level 3: I(t0,i; t1,b) = C[t0,i]*0.6*3   -> (1.8, -3.6) -> b@t0, weight -3.6
    g = build_influence_hierarchy(InfluenceQuery(depth=3, fan_out=1), TOY_C, TOY_A, ["a", "b"])
    assert g.node_ids() == ["prediction", "a@t2", "b@t1", "b@t0"]
    got = [(e.source, e.target, e.weight) for e in g.edges]
    expected = [("a@t2", "prediction", -4.0), ("b@t1", "a@t2", -6.0), ("b@t0", "b@t1", -3.6)]
    for (s, t, w), (es, et, ew) in zip(got, expected):
        assert (s, t) == (es, et) and w == pytest.approx(ew, abs=1e-12)
    assert not g.truncated


def test_hierarchy_toy_depth2_k2():
    # level 2 for b@t2: C[t1,i]*0.5*1 -> (0.25, 1.5): b@t1 then a@t1
    g = build_influence_hierarchy(InfluenceQuery(depth=2, fan_out=2), TOY_C, TOY_A, ["a", "b"])
    assert g.node_ids() == ["prediction", "a@t2", "b@t2", "b@t1", "a@t1"]
    pairs = [(e.source, e.target) for e in g.edges]
    assert pairs == [("a@t2", "prediction"), ("b@t2", "prediction"),
                     ("b@t1", "a@t2"), ("a@t1", "a@t2"), ("b@t1", "b@t2"), ("a@t1", "b@t2")]
    weights = [e.weight for e in g.edges]
    np.testing.assert_allclose(weights, [-4.0, 1.0, -6.0, -1.0, 1.5, 0.25], atol=1e-12)


def test_hierarchy_single_dominant_feature():
    C = np.array([[[0.0, 0.0], [0.1, -7.0]]])
    A = np.array([[[1.0, 0.5], [0.0, 0.5]]])
    g = build_influence_hierarchy(InfluenceQuery(depth=1, fan_out=1), C, A, ["x", "y"])
    assert g.node_ids() == ["prediction", "y@t1"]
    assert len(g.edges) == 1 and g.edges[0].weight == -7.0


def test_hierarchy_ties_break_by_name():
    C = np.ones((1, 2, 3))
    A = np.array([[[1.0, 0.5], [0.0, 0.5]]])
    g = build_influence_hierarchy(InfluenceQuery(depth=1, fan_out=2), C, A, ["z", "m", "b"])
    assert g.node_ids() == ["prediction", "b@t1", "m@t1"]


def test_hierarchy_truncates_when_history_is_short():
    g = build_influence_hierarchy(InfluenceQuery(depth=5, fan_out=1), TOY_C, TOY_A, ["a", "b"])
    assert g.truncated and len(g.nodes) == 4
    g = build_influence_hierarchy(InfluenceQuery(root="a@t1", depth=3, fan_out=2),
                                  TOY_C, TOY_A, ["a", "b"])
    assert g.truncated and g.node_ids() == ["a@t1", "b@t0", "a@t0"]


def test_hierarchy_feature_root_and_scope(rng):
    C, A = rng.normal(size=(3, 4, 2)), _column_stochastic(rng, 3, 4)
    g = build_influence_hierarchy(InfluenceQuery(root="b@t3", depth=2, fan_out=1, scope="patient:Q2"),
                                  C, A, ["a", "b"], patient_ids=["Q0", "Q1", "Q2"])
    single = build_influence_hierarchy(InfluenceQuery(root="b@t3", depth=2, fan_out=1),
                                       C[2], A[2], ["a", "b"])
    assert [(e.source, e.target, e.weight) for e in g.edges] == \
        [(e.source, e.target, e.weight) for e in single.edges]
    with pytest.raises(KeyError):
        build_influence_hierarchy(InfluenceQuery(scope="patient:nobody"), C, A, ["a", "b"], ["x"] * 3)
    with pytest.raises(ValueError):
        build_influence_hierarchy(InfluenceQuery(root="c@t1"), C, A, ["a", "b"])


def test_cohort_scope_is_mean_of_products():
    C = np.array([[[1.0], [1.0]], [[-1.0], [1.0]], [[2.0], [2.0]]])
    A = np.tile(np.array([[1.0, 0.5], [0.0, 0.5]]), (3, 1, 1))
    g = build_influence_hierarchy(InfluenceQuery(depth=2, fan_out=1), C, A, ["f"])
    # mean of 1*.5*1, -1*.5*1, 2*.5*2 = (0.5 - 0.5 + 2) / 3
    assert g.edges[1].weight == pytest.approx(2 / 3, abs=1e-15)


def test_query_validation():
    with pytest.raises(ValueError):
        InfluenceQuery(depth=0)
    with pytest.raises(ValueError):
        InfluenceQuery(scope="ward:3")
    with pytest.raises(ValueError):
        InfluenceQuery(root="egfr")
    assert InfluenceQuery(scope="patient:P7").patient_id == "P7"
    assert parse_node_id("serum@creatinine@t3") == ("serum@creatinine", 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3), st.integers(1, 3),
       st.floats(0.01, 100.0))
def test_hierarchy_structure_and_scaling(seed, depth, k, lam):
    rng = np.random.default_rng(seed)
    C, A = rng.normal(size=(3, 5, 4)), _column_stochastic(rng, 3, 5)
    names = ["w", "x", "y", "z"]
    q = InfluenceQuery(depth=depth, fan_out=k)
    g = build_influence_hierarchy(q, C, A, names)
    assert g.is_acyclic() and g.is_time_monotone()
    assert len(g.nodes) <= sum(k ** i for i in range(depth + 1))
    scaled = build_influence_hierarchy(q, lam * C, A, names)
    assert scaled.node_ids() == g.node_ids()
    for e, s in zip(g.edges, scaled.edges):
        assert (e.source, e.target) == (s.source, s.target)
        factor = lam if e.target == "prediction" else lam ** 2
        assert s.weight == pytest.approx(factor * e.weight, rel=1e-9, abs=1e-300)
    again = build_influence_hierarchy(q, C, A, names)
    assert graph_to_json(again) == graph_to_json(g)


def test_structure_checks_detect_violations():
    g = InfluenceGraph([Node("a", 1), Node("b", 0)], [Edge("a@t1", "b@t0", 1.0)])
    assert not g.is_time_monotone()
    cyc = InfluenceGraph([Node("a", 0), Node("b", 1)],
                         [Edge("a@t0", "b@t1", 1.0), Edge("b@t1", "a@t0", 1.0)])
    assert not cyc.is_acyclic()


# --- export ---------------------------------------------------------------

def test_export_empty_graph():
    g = InfluenceGraph()
    assert export_graph(g, "dot") == b"digraph influence {\n  rankdir=LR;\n}\n"
    doc = json.loads(export_graph(g, "json"))
    assert doc["nodes"] == [] and doc["edges"] == []


def test_export_colors_follow_sign():
    g = InfluenceGraph([Node("prediction"), Node("x", 0), Node("y", 0)],
                       [Edge("x@t0", "prediction", -0.5), Edge("y@t0", "prediction", 2.0)])
    dot = export_graph(g, "dot").decode()
    assert '"x@t0" -> "prediction" [color=red' in dot
    assert '"y@t0" -> "prediction" [color=blue' in dot
    assert 'label="x@t0"' in dot


def test_export_unknown_format():
    with pytest.raises(ValueError, match="format"):
        export_graph(InfluenceGraph(), "png")


def test_json_round_trip_is_byte_identical():
    g = build_influence_hierarchy(InfluenceQuery(depth=2, fan_out=2), TOY_C, TOY_A, ["a", "b"])
    first = export_graph(g, "json")
    assert export_graph(graph_from_json(first), "json") == first
    assert b"\n" == first[-1:]


# --- CSV helpers ----------------------------------------------------------

def test_alpha_and_attention_csv_layout():
    text = alpha_csv(np.array([[0.25, 0.75]]), ["P1"])
    assert text == "patient_id,t0,t1\nP1,0.25,0.75\n"
    att = attention_csv(np.eye(2), ["cohort"]).splitlines()
    assert att == ["block,source,t0,t1", "cohort,t0,1.0,0.0", "cohort,t1,0.0,1.0"]
