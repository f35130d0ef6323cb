import numpy as np

from alignment_engine.ablation import MODULE_VARIANTS, ablation_cells, run_ablation
from alignment_engine.config import TrainConfig
from alignment_engine.diagnostics import CHECK_COLUMNS, CheckSuiteConfig, double_centered_residual, run_sinkhorn_checks


def test_check_suite_rows_and_exact_properties():
    cfg = CheckSuiteConfig(n_instances=8, max_tokens=10, max_subspaces=4, n_oracle_instances=2,
                           oracle_max_iters=200, batch_seconds=60.0)
    table = run_sinkhorn_checks(cfg)
    assert list(table.columns) == CHECK_COLUMNS
    counts = table["check"].value_counts()
    for check in ("mass", "marginals", "fixed_point", "shift_invariance", "permutation"):
        assert counts[check] == 8
    assert counts["exact_ot"] == 2 and counts["batch_seconds"] == 1
    for check in ("mass", "fixed_point", "shift_invariance", "permutation"):
        assert table.loc[table["check"] == check, "passed"].all()


def test_default_check_suite_passes_every_row():
    table = run_sinkhorn_checks(CheckSuiteConfig())
    counts = table["check"].value_counts()
    for check in ("mass", "marginals", "fixed_point", "shift_invariance", "permutation"):
        assert counts[check] == 100
    assert counts["exact_ot"] == 50 and counts["batch_seconds"] == 1
    failed = table.loc[~table["passed"], ["check", "instance", "value"]]
    assert failed.empty, failed.to_string()


def test_check_suite_is_seeded():
    cfg = CheckSuiteConfig(n_instances=3, max_tokens=8, max_subspaces=3, n_oracle_instances=1, oracle_max_iters=50)
    a = run_sinkhorn_checks(cfg)
    b = run_sinkhorn_checks(cfg)
    mask = a["check"] != "batch_seconds"
    np.testing.assert_array_equal(a.loc[mask, "value"].to_numpy(), b.loc[mask, "value"].to_numpy())


def test_double_centred_residual_of_a_gibbs_plan_is_zero():
    rng = np.random.default_rng(0)
    cost = rng.uniform(size=(5, 3))
    plan = np.exp(-cost / 0.1 + rng.normal(size=(5, 1)) + rng.normal(size=(1, 3)))
    assert double_centered_residual(plan, cost, 0.1) < 1e-10
    plan[0, 0] = 0.0
    assert double_centered_residual(plan, cost, 0.1) == float("inf")


def test_ablation_grids():
    assert len(ablation_cells()) == 12
    extended = ablation_cells(extended=True)
    assert len(extended) == 12 + 8 + len(MODULE_VARIANTS)
    assert {c.axis for c in extended} == {"n_subspaces", "k", "epsilon", "eta", "xi", "module"}


def test_ablation_table(tiny_data):
    train, test = tiny_data
    seen = []
    table = run_ablation(train, test, TrainConfig(epochs=1, batch_size=6, n_subspaces=2), on_cell=seen.append)
    assert len(table) == len(seen) == 12
    assert (table["n_seeds"] == 1).all()
    assert table["pixel_auroc"].between(0.0, 1.0).all()
