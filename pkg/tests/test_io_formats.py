"""Feature-pack and model-file serialization tests."""

import json

import numpy as np
import pytest

from rde.detector import DetectorConfig, fit, score
from rde.errors import (
    DigestMismatch,
    IoFailure,
    MalformedManifest,
    SizeMismatch,
    TruncatedSection,
    UnknownDtype,
    ValidationError,
    VersionMismatch,
)
from rde.io_formats import (
    read_feature_pack,
    read_labels_file,
    save_model,
    load_model,
    write_feature_pack,
)
from rde.kpca import KernelConfig
from rde.mcd import McdConfig


@pytest.fixture()
def small_training_set():
    rng = np.random.default_rng(0)
    features = np.concatenate(
        [rng.normal(size=(40, 6)), rng.normal(size=(40, 6)) + 4.0]
    ).astype(np.float32)
    labels = np.repeat([0, 1], 40)
    return features, labels


class TestFeaturePack:
    def test_round_trip(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "train.pack"
        digest = write_feature_pack(features, path, labels=labels)
        pack = read_feature_pack(path)
        np.testing.assert_array_equal(pack.features, features)
        np.testing.assert_array_equal(pack.labels, labels)
        assert pack.sha256 == digest
        assert pack.features.dtype == np.float32

    def test_manifest_layout(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "train.pack"
        write_feature_pack(features, path, labels=labels, creator="unit-test")
        manifest = json.loads(path.read_text())
        assert manifest["format"] == "feature-pack"
        assert manifest["version"] == 1
        assert manifest["n_rows"] == 80
        assert manifest["n_cols"] == 6
        assert manifest["dtype"] == "f32"
        assert manifest["creator"] == "unit-test"
        assert (tmp_path / manifest["data_file"]).exists()
        assert (tmp_path / manifest["labels_file"]).exists()
        # human-readable: the manifest is pretty-printed
        assert "\n" in path.read_text().strip()

    def test_data_file_is_raw_float32(self, tmp_path):
        features = np.arange(6, dtype=np.float32).reshape(2, 3)
        path = tmp_path / "p.pack"
        write_feature_pack(features, path)
        raw = np.frombuffer((tmp_path / "p.pack.bin").read_bytes(), dtype="<f4")
        np.testing.assert_array_equal(raw.reshape(2, 3), features)

    def test_float64_input_is_cast(self, tmp_path):
        rng = np.random.default_rng(1)
        features = rng.normal(size=(5, 4))
        path = tmp_path / "p.pack"
        write_feature_pack(features, path)
        pack = read_feature_pack(path)
        np.testing.assert_array_equal(pack.features, features.astype(np.float32))

    def test_labels_optional(self, tmp_path):
        path = tmp_path / "p.pack"
        write_feature_pack(np.zeros((3, 2), dtype=np.float32), path)
        assert read_feature_pack(path).labels is None

    def test_labels_file_round_trip(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "p.pack"
        write_feature_pack(features, path, labels=labels)
        read = read_labels_file(tmp_path / "p.pack.labels")
        np.testing.assert_array_equal(read, labels)

    def test_corrupt_payload_detected(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "p.pack"
        write_feature_pack(features, path, labels=labels)
        bin_path = tmp_path / "p.pack.bin"
        blob = bytearray(bin_path.read_bytes())
        blob[17] ^= 0xFF
        bin_path.write_bytes(bytes(blob))
        with pytest.raises(DigestMismatch):
            read_feature_pack(path)

    def test_truncated_payload_detected(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "p.pack"
        write_feature_pack(features, path, labels=labels)
        bin_path = tmp_path / "p.pack.bin"
        bin_path.write_bytes(bin_path.read_bytes()[:-8])
        with pytest.raises(SizeMismatch):
            read_feature_pack(path)

    def test_label_count_mismatch_detected(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "p.pack"
        write_feature_pack(features, path, labels=labels)
        (tmp_path / "p.pack.labels").write_text("1\n2\n3\n")
        with pytest.raises(SizeMismatch):
            read_feature_pack(path)

    def test_unknown_dtype_rejected(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "p.pack"
        write_feature_pack(features, path, labels=labels)
        manifest = json.loads(path.read_text())
        manifest["dtype"] = "f64"
        path.write_text(json.dumps(manifest))
        with pytest.raises(UnknownDtype):
            read_feature_pack(path)

    def test_version_mismatch_rejected(self, tmp_path, small_training_set):
        features, labels = small_training_set
        path = tmp_path / "p.pack"
        write_feature_pack(features, path, labels=labels)
        manifest = json.loads(path.read_text())
        manifest["version"] = 99
        path.write_text(json.dumps(manifest))
        with pytest.raises(VersionMismatch):
            read_feature_pack(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "p.pack"
        path.write_text("{not json")
        with pytest.raises(MalformedManifest):
            read_feature_pack(path)

    def test_missing_file_is_io_failure(self, tmp_path):
        with pytest.raises(IoFailure):
            read_feature_pack(tmp_path / "absent.pack")

    def test_non_finite_rejected(self, tmp_path):
        bad = np.array([[1.0, np.inf]], dtype=np.float32)
        with pytest.raises(ValidationError):
            write_feature_pack(bad, tmp_path / "p.pack")

    def test_overwrite_replaces_cleanly(self, tmp_path):
        path = tmp_path / "p.pack"
        write_feature_pack(np.zeros((2, 2), dtype=np.float32), path)
        write_feature_pack(np.ones((3, 3), dtype=np.float32), path)
        pack = read_feature_pack(path)
        assert pack.features.shape == (3, 3)


class TestModelFile:
    def fit_model(self, small_training_set, variant="rde"):
        features, labels = small_training_set
        config = DetectorConfig(
            variant=variant,
            p=4,
            kernel=KernelConfig("rbf", gamma=0.2),
            mcd=McdConfig(n_initial_subsets=50),
            seed=1,
        )
        if variant == "mle":
            config = DetectorConfig(variant="mle", seed=1)
        return fit(features, labels, config)

    def test_round_trip_scores_bit_identical(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        loaded = load_model(path)
        rng = np.random.default_rng(2)
        queries = rng.normal(size=(25, 6)).astype(np.float32)
        labels = rng.integers(0, 2, size=25)
        before = score(model, queries, labels)
        after = score(loaded, queries, labels)
        np.testing.assert_array_equal(before, after)

    def test_round_trip_preserves_config_and_params(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.config == model.config
        assert loaded.classes == model.classes
        assert loaded.class_counts == model.class_counts
        for cls in model.classes:
            a, b = model.class_params[cls], loaded.class_params[cls]
            np.testing.assert_array_equal(a.mean, b.mean)
            np.testing.assert_array_equal(a.covariance, b.covariance)
            np.testing.assert_array_equal(a.chol_lower, b.chol_lower)
            assert a.log_det == b.log_det
            assert a.jitter == b.jitter
        np.testing.assert_array_equal(model.kpca.coefficients, loaded.kpca.coefficients)

    def test_mle_variant_round_trip(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set, variant="mle")
        path = tmp_path / "model.rdem"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.kpca is None
        rng = np.random.default_rng(3)
        queries = rng.normal(size=(10, 6))
        labels = rng.integers(0, 2, size=10)
        np.testing.assert_array_equal(score(model, queries, labels), score(loaded, queries, labels))

    def test_header_is_single_json_line(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        first_line = path.read_bytes().split(b"\n", 1)[0]
        header = json.loads(first_line)
        assert header["format"] == "rde-model"
        assert header["version"] == 1
        assert header["classes"] == [0, 1]
        assert header["input_dim"] == 6
        names = [section["name"] for section in header["sections"]]
        assert "kpca.train_vectors" in names
        assert "class.0.covariance" in names
        # timing is a run artifact, not part of the model
        assert "fit_seconds" not in json.dumps(header)

    def test_tampered_section_detected(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        blob = bytearray(path.read_bytes())
        blob[-5] ^= 0x01
        path.write_bytes(bytes(blob))
        with pytest.raises(DigestMismatch):
            load_model(path)

    def test_truncated_file_detected(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(TruncatedSection):
            load_model(path)

    def test_trailing_bytes_detected(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(MalformedManifest):
            load_model(path)

    def test_wrong_version_detected(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        path = tmp_path / "model.rdem"
        save_model(model, path)
        header_line, rest = path.read_bytes().split(b"\n", 1)
        header = json.loads(header_line)
        header["version"] = 2
        path.write_bytes(json.dumps(header).encode() + b"\n" + rest)
        with pytest.raises(VersionMismatch):
            load_model(path)

    def test_pack_file_is_not_a_model(self, tmp_path, small_training_set):
        features, labels = small_training_set
        pack_path = tmp_path / "train.pack"
        write_feature_pack(features, pack_path, labels=labels)
        with pytest.raises(MalformedManifest):
            load_model(pack_path)

    def test_fit_seconds_resets_on_load(self, tmp_path, small_training_set):
        model = self.fit_model(small_training_set)
        assert model.fit_seconds > 0.0
        path = tmp_path / "model.rdem"
        save_model(model, path)
        assert load_model(path).fit_seconds == 0.0
