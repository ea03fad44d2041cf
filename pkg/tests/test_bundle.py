import numpy as np
import pytest

from quorumexit.bundle import (
    BundleValidationError,
    CostModel,
    LabelVector,
    PredictionTensor,
    read_bundle,
    write_bundle,
)

from conftest import random_bundle


def tiny_bundle():
    probs = np.array(
        [[[[0.25, 0.75]]], [[[0.6, 0.4]]]], dtype=np.float32
    )  # K=2, E=1, N=1, C=2
    return PredictionTensor(probs), LabelVector(np.array([0])), CostModel(
        np.array([[5.0], [7.0]])
    )


def test_round_trip_identity(tmp_path):
    tensor, labels, costs = tiny_bundle()
    path = str(tmp_path / "bundle")
    write_bundle(tensor, labels, costs, path)
    for name in ("manifest.txt", "predictions.bin", "labels.bin", "costs.csv"):
        assert (tmp_path / "bundle" / name).is_file()
    loaded = read_bundle(path)
    assert np.array_equal(loaded.tensor.probs, tensor.probs)
    assert np.array_equal(loaded.labels.y, labels.y)
    assert np.array_equal(loaded.costs.costs, costs.costs)


def test_row_sum_violation_rejected():
    probs = np.array([[[[0.3, 0.5]]], [[[0.6, 0.4]]]], dtype=np.float32)
    with pytest.raises(BundleValidationError, match="row sum"):
        PredictionTensor(probs)


def test_single_learner_rejected():
    probs = np.array([[[[0.5, 0.5]]]], dtype=np.float32)
    with pytest.raises(BundleValidationError, match="K >= 2"):
        PredictionTensor(probs)


def test_truncated_predictions_rejected(tmp_path):
    tensor, labels, costs = tiny_bundle()
    path = str(tmp_path / "bundle")
    write_bundle(tensor, labels, costs, path)
    pred_file = tmp_path / "bundle" / "predictions.bin"
    pred_file.write_bytes(pred_file.read_bytes()[:-4])
    with pytest.raises(BundleValidationError, match="size mismatch"):
        read_bundle(path)


def test_label_out_of_range_rejected(tmp_path):
    tensor, labels, costs = tiny_bundle()
    path = str(tmp_path / "bundle")
    write_bundle(tensor, labels, costs, path)
    (tmp_path / "bundle" / "labels.bin").write_bytes(
        np.array([2], dtype="<u4").tobytes()
    )
    with pytest.raises(BundleValidationError, match="out of range"):
        read_bundle(path)


def test_missing_file_rejected(tmp_path):
    tensor, labels, costs = tiny_bundle()
    path = str(tmp_path / "bundle")
    write_bundle(tensor, labels, costs, path)
    (tmp_path / "bundle" / "costs.csv").unlink()
    with pytest.raises(BundleValidationError, match="missing bundle file"):
        read_bundle(path)


def test_loader_rejects_row_sums_beyond_tolerance(tmp_path):
    tensor, labels, costs = tiny_bundle()
    path = str(tmp_path / "bundle")
    write_bundle(tensor, labels, costs, path)
    bad = np.array([[[[0.3, 0.6]]], [[[0.6, 0.4]]]], dtype="<f4")
    (tmp_path / "bundle" / "predictions.bin").write_bytes(bad.tobytes())
    with pytest.raises(BundleValidationError, match="row sum"):
        read_bundle(path)


def test_dimension_mismatch_names_axis():
    tensor, labels, _ = tiny_bundle()
    with pytest.raises(BundleValidationError, match="cost table shape"):
        CostModel(np.array([[5.0, 6.0], [7.0, 8.0]])).check_against(tensor)
    with pytest.raises(BundleValidationError, match="label count"):
        LabelVector(np.array([0, 1])).check_against(tensor)


def test_random_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    for trial in range(10):
        k = int(rng.integers(2, 6))
        e = int(rng.integers(1, 4))
        n = int(rng.integers(1, 9))
        c = int(rng.integers(2, 5))
        bundle = random_bundle(rng, k, e, n, c, integer_costs=False)
        path = str(tmp_path / f"b{trial}")
        write_bundle(bundle.tensor, bundle.labels, bundle.costs, path)
        loaded = read_bundle(path)
        assert np.array_equal(loaded.tensor.probs, bundle.tensor.probs)
        assert np.array_equal(loaded.labels.y, bundle.labels.y)
        assert np.array_equal(loaded.costs.costs, bundle.costs.costs)
