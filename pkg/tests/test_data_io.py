import struct

import numpy as np
import pytest

from alignment_engine.config import TrainConfig, config_to_text, load_config_file, parse_config_text
from alignment_engine.semantics import PARAMETER_GROUPS, init_model
from data_io.dataset import load_dataset, read_index, save_dataset
from data_io.formats import (
    load_anomaly_map,
    load_checkpoint,
    load_mask,
    load_token_file,
    quantize_scores,
    save_anomaly_map,
    save_checkpoint,
    save_mask,
    save_token_file,
)
from data_io.samples import TokenGrid
from data_io.synthetic import SyntheticSpec, anomalous_count, generate_synthetic
from middleware.guards import (
    BadMagicError,
    ConfigError,
    DatasetError,
    DimensionMismatchError,
    PGMFormatError,
    TruncatedFileError,
    VersionMismatchError,
)


# ── Synthetic generator ───────────────────────────────────────────────────────

def test_generation_is_seeded(tiny_spec):
    a_train, a_test = generate_synthetic(tiny_spec)
    b_train, b_test = generate_synthetic(tiny_spec)
    for a, b in zip(a_train + a_test, b_train + b_test):
        np.testing.assert_array_equal(a.grid.tokens, b.grid.tokens)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.name == b.name


def test_generated_samples_are_consistent(tiny_data, tiny_spec):
    train, test = tiny_data
    assert len(train) == 6 and len(test) == 4
    assert train[0].name == "train_0000" and test[-1].name == "test_0003"
    for sample in train + test:
        sample.validate()
        assert sample.mask.shape == (8, 8)
        assert sample.grid.tokens.shape == (16, 8)


def test_anomalous_count_rounds_half_up():
    assert anomalous_count(50, 0.5) == 25
    assert anomalous_count(5, 0.5) == 3
    assert anomalous_count(10, 0.0) == 0
    spec = SyntheticSpec(n_train=3, n_test=50, h=4, w=4, d=8, s=1, rect_min=1, rect_max=2)
    _, test = generate_synthetic(spec)
    assert sum(s.label for s in test) == 25


def test_zero_anomaly_rate_gives_normal_images_only():
    spec = SyntheticSpec(n_train=4, n_test=4, h=4, w=4, d=8, s=1, rect_min=1, rect_max=2, anomaly_rate=0.0)
    train, test = generate_synthetic(spec)
    assert all(s.label == 0 and not s.mask.any() for s in train + test)


def test_anomalous_rectangle_respects_the_size_bounds(tiny_data):
    train, test = tiny_data
    for sample in train + test:
        if sample.label:
            patch = sample.mask[::2, ::2]
            rows, cols = np.nonzero(patch)
            assert 1 <= rows.max() - rows.min() + 1 <= 2
            assert 1 <= cols.max() - cols.min() + 1 <= 2


def test_rectangle_larger_than_grid_is_rejected():
    with pytest.raises(DatasetError):
        generate_synthetic(SyntheticSpec(h=4, w=4, rect_min=2, rect_max=5))


def test_invalid_spec_values_are_rejected():
    with pytest.raises(ConfigError):
        SyntheticSpec(anomaly_rate=1.5).validate()
    with pytest.raises(ConfigError):
        SyntheticSpec(d=2, n_normal_clusters=2).validate()


# ── Token files ───────────────────────────────────────────────────────────────

def test_token_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tokens = rng.normal(size=(6, 5)).astype(np.float32).astype(np.float64)
    glob = rng.normal(size=5).astype(np.float32).astype(np.float64)
    path = tmp_path / "grid.tokb"
    save_token_file(path, TokenGrid(tokens, 2, 3, glob))
    loaded = load_token_file(path)
    assert (loaded.h, loaded.w) == (2, 3)
    np.testing.assert_array_equal(loaded.tokens, tokens)
    np.testing.assert_array_equal(loaded.global_embedding, glob)


def test_token_file_without_global_embedding(tmp_path):
    path = tmp_path / "grid.tokb"
    save_token_file(path, TokenGrid(np.ones((4, 2)), 2, 2))
    assert load_token_file(path).global_embedding is None


def test_token_file_bad_magic(tmp_path):
    path = tmp_path / "grid.tokb"
    save_token_file(path, TokenGrid(np.ones((4, 2)), 2, 2))
    data = bytearray(path.read_bytes())
    data[0:4] = b"XXXX"
    path.write_bytes(bytes(data))
    with pytest.raises(BadMagicError):
        load_token_file(path)


def test_token_file_header_dimension_mismatch(tmp_path):
    path = tmp_path / "grid.tokb"
    header = struct.pack("<4sBIIIIB", b"TOKB", 1, 5, 2, 2, 2, 0)
    path.write_bytes(header + np.zeros(10, dtype="<f4").tobytes())
    with pytest.raises(DimensionMismatchError):
        load_token_file(path)


def test_token_file_truncated_payload(tmp_path):
    path = tmp_path / "grid.tokb"
    save_token_file(path, TokenGrid(np.ones((4, 2)), 2, 2))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(TruncatedFileError):
        load_token_file(path)


def test_token_file_version_mismatch(tmp_path):
    path = tmp_path / "grid.tokb"
    save_token_file(path, TokenGrid(np.ones((4, 2)), 2, 2))
    data = bytearray(path.read_bytes())
    data[4] = 2
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatchError):
        load_token_file(path)


# ── PGM masks and anomaly maps ────────────────────────────────────────────────

def test_mask_round_trip(tmp_path):
    mask = np.zeros((6, 4), dtype=np.uint8)
    mask[2:4, 1:3] = 1
    save_mask(tmp_path / "m.pgm", mask)
    np.testing.assert_array_equal(load_mask(tmp_path / "m.pgm"), mask)

    save_mask(tmp_path / "empty.pgm", np.zeros((3, 3)))
    assert not load_mask(tmp_path / "empty.pgm").any()


def test_mask_header_may_carry_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# written by hand\n2 1\n255\n" + bytes([0, 255]))
    np.testing.assert_array_equal(load_mask(path), [[0, 1]])


def test_mask_with_intermediate_values_is_rejected(tmp_path):
    path = tmp_path / "grey.pgm"
    path.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 128]))
    with pytest.raises(PGMFormatError):
        load_mask(path)


def test_non_binary_pgm_is_rejected(tmp_path):
    path = tmp_path / "ascii.pgm"
    path.write_bytes(b"P2\n2 1\n255\n0 255\n")
    with pytest.raises(PGMFormatError):
        load_mask(path)
    path.write_bytes(b"P5\n1 1\n65535\n" + bytes([0, 0]))
    with pytest.raises(PGMFormatError):
        load_mask(path)


def test_score_quantisation_rounds_half_up(tmp_path):
    np.testing.assert_array_equal(quantize_scores(np.array([0.0, 0.5, 1.0, 1.3, -0.2])), [0, 128, 255, 255, 0])
    save_anomaly_map(tmp_path / "a.pgm", np.array([[0.5, 1.0]]))
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw[-2:] == bytes([128, 255])
    np.testing.assert_allclose(load_anomaly_map(tmp_path / "a.pgm"), [[128 / 255, 1.0]])


# ── Checkpoints ───────────────────────────────────────────────────────────────

def test_checkpoint_round_trip(tmp_path):
    model = init_model(6, 3, seed=4)
    cfg = TrainConfig(n_subspaces=3, epsilon=0.3, hinge_literal=True, lr=2.5e-4)
    path = tmp_path / "model.tkcp"
    save_checkpoint(path, model, cfg)
    loaded, loaded_cfg = load_checkpoint(path)
    assert loaded_cfg == cfg
    for name in PARAMETER_GROUPS:
        np.testing.assert_array_equal(getattr(loaded, name), getattr(model, name))


def test_checkpoint_version_and_magic_are_checked(tmp_path):
    path = tmp_path / "model.tkcp"
    save_checkpoint(path, init_model(4, 1), TrainConfig(n_subspaces=1))
    good = path.read_bytes()

    path.write_bytes(good[:4] + bytes([9]) + good[5:])
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)

    path.write_bytes(b"NOPE" + good[4:])
    with pytest.raises(BadMagicError):
        load_checkpoint(path)

    path.write_bytes(good[:-8])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(path)


# ── Config files ──────────────────────────────────────────────────────────────

def test_config_text_with_comments():
    text = "# sweep cell\nn_subspaces = 4\nepsilon = 0.3  # threshold\nuse_base = false\n"
    cfg = parse_config_text(text, TrainConfig)
    assert cfg.n_subspaces == 4 and cfg.epsilon == 0.3 and cfg.use_base is False
    assert cfg.k == TrainConfig().k


def test_config_layers_over_a_base():
    base = TrainConfig(k=3)
    cfg = parse_config_text("epochs = 5\n", TrainConfig, base)
    assert cfg.k == 3 and cfg.epochs == 5


def test_config_errors():
    with pytest.raises(ConfigError):
        parse_config_text("n_subspace = 4\n", TrainConfig)
    with pytest.raises(ConfigError):
        parse_config_text("epochs = many\n", TrainConfig)
    with pytest.raises(ConfigError):
        parse_config_text("use_base = maybe\n", TrainConfig)
    with pytest.raises(ConfigError):
        TrainConfig(k=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(use_base=False, use_dynamic=False).validate()


def test_config_text_round_trips(tmp_path):
    cfg = TrainConfig(eta=2.5, assignment="van", decouple_global=False, sinkhorn_tol=1e-7,
                      sinkhorn_refine_steps=0, image_score_formula="balanced")
    path = tmp_path / "train.cfg"
    path.write_text(config_to_text(cfg))
    assert load_config_file(path) == cfg

    spec = SyntheticSpec(n_train=7, noise_scale=0.05)
    assert parse_config_text(config_to_text(spec), SyntheticSpec) == spec


# ── Dataset directories ───────────────────────────────────────────────────────

def test_dataset_round_trip(tmp_path, tiny_spec, tiny_data):
    train, test = tiny_data
    written = save_dataset(tmp_path, {"train": train, "test": test}, tiny_spec)
    assert len(written) == 2 * (len(train) + len(test)) + 2
    assert read_index(tmp_path)["split"].tolist() == ["train"] * 6 + ["test"] * 4

    loaded = load_dataset(tmp_path, "test")
    assert [s.name for s in loaded] == [s.name for s in test]
    for a, b in zip(loaded, test):
        np.testing.assert_array_equal(a.grid.tokens, b.grid.tokens)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.label == b.label
    assert load_config_file(tmp_path / "spec.cfg", SyntheticSpec) == tiny_spec


def test_missing_dataset_pieces_are_reported(tmp_path, tiny_data):
    with pytest.raises(DatasetError):
        load_dataset(tmp_path, "train")

    train, _ = tiny_data
    save_dataset(tmp_path, {"train": train})
    with pytest.raises(DatasetError):
        load_dataset(tmp_path, "test")

    (tmp_path / "train" / "train_0000.tokb").unlink()
    with pytest.raises(DatasetError):
        load_dataset(tmp_path, "train")
