import numpy as np
import pytest

from alignment_engine.metrics import (
    ScoredSet,
    aupro,
    aupro_dense_sweep,
    auroc,
    auroc_bruteforce,
    average_precision,
)
from middleware.guards import ConfigError, EmptyInputError, ShapeMismatchError


def _random_masks(rng, n, h=12, w=12):
    masks = []
    for _ in range(n):
        mask = np.zeros((h, w), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 3))):
            top, left = rng.integers(0, h - 3), rng.integers(0, w - 3)
            mask[top:top + int(rng.integers(1, 4)), left:left + int(rng.integers(1, 4))] = 1
        masks.append(mask)
    return masks


# ── AUROC / AP ────────────────────────────────────────────────────────────────

def test_auroc_examples():
    assert auroc(ScoredSet.of([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])) == pytest.approx(1.0)
    assert auroc(ScoredSet.of([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1])) == pytest.approx(0.0)
    assert auroc(ScoredSet.of([0.5] * 4, [0, 1, 0, 1])) == pytest.approx(0.5)
    assert auroc(([0.3, 0.7], [0, 1])) == pytest.approx(1.0)


def test_auroc_matches_pairwise_count_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(4, 201))
        scores = np.round(rng.uniform(size=n), 1)
        labels = rng.integers(0, 2, size=n)
        labels[:2] = [0, 1]
        s = ScoredSet.of(scores, labels)
        assert auroc(s) == pytest.approx(auroc_bruteforce(s), abs=1e-12)


def test_auroc_is_invariant_under_monotone_transforms():
    rng = np.random.default_rng(1)
    scores, labels = rng.normal(size=40), rng.integers(0, 2, size=40)
    labels[:2] = [0, 1]
    assert auroc((np.exp(scores), labels)) == pytest.approx(auroc((scores, labels)))


def test_single_class_is_an_error():
    with pytest.raises(EmptyInputError):
        auroc(ScoredSet.of([0.1, 0.2], [1, 1]))
    with pytest.raises(EmptyInputError):
        average_precision(ScoredSet.of([0.1, 0.2], [0, 0]))


def test_scored_set_shapes_must_agree():
    with pytest.raises(ShapeMismatchError):
        ScoredSet.of([0.1, 0.2, 0.3], [0, 1])


def test_average_precision_examples():
    assert average_precision(ScoredSet.of([0.9, 0.1], [0, 1])) == pytest.approx(0.5)
    assert average_precision(ScoredSet.of([0.3, 0.6, 0.2], [1, 1, 1])) == pytest.approx(1.0)
    assert average_precision(ScoredSet.of([0.9, 0.8, 0.1], [1, 1, 0])) == pytest.approx(1.0)
    # tied block enters together: precision 1/2 at full recall
    assert average_precision(ScoredSet.of([0.4, 0.4], [1, 0])) == pytest.approx(0.5)


def test_average_precision_is_invariant_under_monotone_transforms():
    rng = np.random.default_rng(2)
    scores, labels = rng.normal(size=30), rng.integers(0, 2, size=30)
    labels[0] = 1
    assert average_precision((3.0 * scores + 1.0, labels)) == pytest.approx(average_precision((scores, labels)))


# ── AUPRO ─────────────────────────────────────────────────────────────────────

def test_aupro_of_the_mask_itself_is_one():
    masks = _random_masks(np.random.default_rng(3), 3)
    assert aupro([m.astype(float) for m in masks], masks) == pytest.approx(1.0)


def test_aupro_of_the_inverted_mask_is_zero():
    masks = _random_masks(np.random.default_rng(4), 3)
    assert aupro([1.0 - m for m in masks], masks) == pytest.approx(0.0)


def test_aupro_matches_the_dense_sweep_on_quantised_scores():
    rng = np.random.default_rng(5)
    for _ in range(5):
        masks = _random_masks(rng, 4)
        maps = [rng.integers(0, 11, size=m.shape) / 10.0 for m in masks]
        assert aupro(maps, masks) == pytest.approx(aupro_dense_sweep(maps, masks), abs=1e-9)


def test_aupro_grows_with_the_fpr_limit():
    rng = np.random.default_rng(6)
    masks = _random_masks(rng, 4)
    maps = [0.5 * m + rng.uniform(size=m.shape) for m in masks]
    values = [aupro(maps, masks, limit) for limit in (0.05, 0.1, 0.3, 0.6, 1.0)]
    assert all(a <= b + 1e-12 for a, b in zip(values, values[1:]))
    assert all(0.0 <= v <= 1.0 for v in values)


def test_aupro_averages_over_regions():
    # one region fully found before any false positive, the other never above normals
    mask = np.zeros((4, 6), dtype=np.uint8)
    mask[0, 0:2] = 1
    mask[3, 4:6] = 1
    score = np.full((4, 6), 0.5)
    score[0, 0:2] = 1.0
    score[3, 4:6] = 0.0
    assert aupro([score], [mask], fpr_limit=0.3) == pytest.approx(0.5)


def test_aupro_needs_regions_and_normal_pixels():
    with pytest.raises(EmptyInputError):
        aupro([np.zeros((3, 3))], [np.zeros((3, 3))])
    with pytest.raises(EmptyInputError):
        aupro([np.zeros((2, 2))], [np.ones((2, 2))])


def test_aupro_limit_must_be_a_rate():
    masks = _random_masks(np.random.default_rng(7), 1)
    with pytest.raises(ConfigError):
        aupro([m.astype(float) for m in masks], masks, fpr_limit=0.0)
    with pytest.raises(ConfigError):
        aupro([m.astype(float) for m in masks], masks, fpr_limit=1.5)
