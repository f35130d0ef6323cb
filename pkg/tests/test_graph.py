import numpy as np
import pytest

from alignment_engine.config import TrainConfig
from alignment_engine.evaluation import (
    METRIC_NAMES,
    evaluate_model,
    metrics_frame,
    scores_frame,
    sparsity_violations,
    usage_frame,
)
from alignment_engine.assignment import AssignmentMatrix
from alignment_engine.objective import forward
from alignment_engine.semantics import init_model
from data_io.samples import TokenGrid
from graph.nodes.router import select_route
from graph.state import ScoringState
from graph.workflow import build_workflow, score_sample
from middleware.guards import DatasetError

from tests.conftest import make_sample


@pytest.fixture
def sequential():
    return build_workflow(use_langgraph=False)


# ── Routing ───────────────────────────────────────────────────────────────────

def test_route_table():
    assert select_route(True, True, "ot") == "dynamic_ot"
    assert select_route(True, True, "van") == "dynamic_van"
    assert select_route(True, False, "ot") == "base_only"
    assert select_route(False, True, "van") == "dynamic_only"


@pytest.mark.parametrize(
    "overrides, path",
    [
        ({}, ["intake", "projection", "router", "base_alignment", "dynamic_alignment", "fusion", "output"]),
        ({"use_dynamic": False}, ["intake", "projection", "router", "base_alignment", "fusion", "output"]),
        ({"use_base": False}, ["intake", "projection", "router", "dynamic_alignment", "fusion", "output"]),
    ],
)
def test_node_path_follows_the_route(sequential, overrides, path):
    cfg = TrainConfig(n_subspaces=2).with_overrides(**overrides)
    state = score_sample(init_model(8, 2), cfg, make_sample(0), sequential)
    assert state.status == "SCORED"
    assert state.node_path == path
    assert state.result.node_path == tuple(path)


# ── Scoring ───────────────────────────────────────────────────────────────────

def test_scored_sample_has_pixel_resolution_maps(sequential):
    cfg = TrainConfig(n_subspaces=2)
    sample = make_sample(1)
    state = score_sample(init_model(8, 2), cfg, sample, sequential)
    assert state.pixel_map.as_grid().shape == sample.mask.shape
    assert state.patch_map.as_grid().shape == (4, 4)
    assert np.all((state.pixel_map.scores > 0) & (state.pixel_map.scores < 1))
    assert 0.0 <= state.image_score <= 0.75
    assert state.result.route == "dynamic_ot"
    assert set(state.plans) == {"n", "a"}


def test_bare_grid_is_scored_at_patch_resolution(sequential):
    cfg = TrainConfig(n_subspaces=2)
    state = score_sample(init_model(8, 2), cfg, make_sample(2).grid, sequential)
    assert state.pixel_map.as_grid().shape == (4, 4)
    assert state.result.label is None


def test_graph_maps_agree_with_the_training_forward_pass(sequential):
    cfg = TrainConfig(n_subspaces=3)
    model = init_model(8, 3, seed=1)
    sample = make_sample(3)
    state = score_sample(model, cfg, sample, sequential)
    _, cache = forward(model, sample, cfg)
    np.testing.assert_allclose(state.base_map.scores, cache.s_base[1])
    np.testing.assert_allclose(state.dynamic_map.scores, cache.s_da[1])
    for c in ("n", "a"):
        np.testing.assert_array_equal(state.assignments[c].weights, cache.assignments[c].weights)


def test_fused_patch_map_is_the_branch_mean(sequential):
    state = score_sample(init_model(8, 2), TrainConfig(n_subspaces=2), make_sample(4), sequential)
    np.testing.assert_allclose(state.patch_map.scores, 0.5 * (state.base_map.scores + state.dynamic_map.scores))


def test_balanced_image_score(sequential):
    cfg = TrainConfig(n_subspaces=2, image_score_formula="balanced")
    state = score_sample(init_model(8, 2), cfg, make_sample(5), sequential)
    expected = 0.5 * (state.p_a_global + float(state.pixel_map.scores.max()))
    assert state.image_score == pytest.approx(expected)


# ── Rejection ─────────────────────────────────────────────────────────────────

def test_zero_token_grid_is_rejected(sequential):
    tokens = np.ones((16, 8))
    tokens[5] = 0.0
    state = score_sample(init_model(8, 2), TrainConfig(n_subspaces=2), TokenGrid(tokens, 4, 4), sequential)
    assert state.status == "REJECTED"
    assert state.node_path == ["intake", "output"]
    assert state.result.image_score is None and state.result.pixel_map is None
    assert state.errors and "row 5" in state.errors[0]


def test_width_mismatch_is_rejected(sequential):
    state = score_sample(init_model(6, 2), TrainConfig(n_subspaces=2), make_sample(6), sequential)
    assert state.status == "REJECTED"
    assert state.result.route == "rejected"


def test_missing_inputs_are_rejected(sequential):
    state = sequential(ScoringState(grid=make_sample(7).grid))
    assert state.status == "REJECTED"


# ── LangGraph parity ──────────────────────────────────────────────────────────

def test_compiled_graph_matches_sequential_runner(sequential):
    pytest.importorskip("langgraph")
    compiled = build_workflow(use_langgraph=True)
    cfg = TrainConfig(n_subspaces=2)
    model = init_model(8, 2, seed=2)
    sample = make_sample(8)
    a = score_sample(model, cfg, sample, compiled)
    b = score_sample(model, cfg, sample, sequential)
    assert isinstance(a, ScoringState)
    assert a.node_path == b.node_path
    assert a.image_score == b.image_score
    np.testing.assert_array_equal(a.pixel_map.scores, b.pixel_map.scores)


def test_compiled_graph_rejects_like_sequential_runner():
    pytest.importorskip("langgraph")
    tokens = np.ones((16, 8))
    tokens[0] = 0.0
    state = score_sample(init_model(8, 2), TrainConfig(n_subspaces=2), TokenGrid(tokens, 4, 4),
                         build_workflow(use_langgraph=True))
    assert state.status == "REJECTED"
    assert state.node_path == ["intake", "output"]


# ── Evaluation ────────────────────────────────────────────────────────────────

def test_evaluation_report(tiny_data, sequential):
    _, test = tiny_data
    cfg = TrainConfig(n_subspaces=2)
    report = evaluate_model(init_model(8, 2), cfg, test, sequential)
    assert set(report.metrics) == set(METRIC_NAMES)
    assert all(0.0 <= v <= 1.0 for v in report.metrics.values())
    assert report.assignment_violations == 0
    assert report.assignment_rows == 2 * 16 * len(test)
    assert set(report.usage) == {"n", "a"}
    assert report.usage["n"].frequency.shape == (2,)

    assert metrics_frame(report.metrics)["metric"].tolist() == list(METRIC_NAMES)
    assert len(usage_frame(report.usage)) == 4
    assert scores_frame(report.results)["name"].tolist() == [s.name for s in test]


def test_evaluation_without_dynamic_branch_has_no_usage(tiny_data, sequential):
    _, test = tiny_data
    report = evaluate_model(init_model(8, 2), TrainConfig(n_subspaces=2, use_dynamic=False), test, sequential)
    assert report.usage == {} and report.assignment_rows == 0


def test_evaluation_fails_on_rejected_samples(tiny_data, sequential):
    _, test = tiny_data
    with pytest.raises(DatasetError):
        evaluate_model(init_model(6, 2), TrainConfig(n_subspaces=2), test, sequential)


def test_sparsity_violation_count():
    ok = AssignmentMatrix(np.array([[0.5, 0.5, 0.0], [0.0, 0.0, 0.0]]), k=2, epsilon=0.2)
    assert sparsity_violations(ok) == 0
    bad = AssignmentMatrix(np.array([[0.4, 0.3, 0.3], [0.5, 0.0, 0.0]]), k=2, epsilon=0.2)
    assert sparsity_violations(bad) == 2
