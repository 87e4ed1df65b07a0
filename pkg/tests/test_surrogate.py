import numpy as np
import pytest
import torch

from conftest import ToyModel, toy_dataset
from utils.errors import DimensionMismatchError, SingleClassError, WeightsFormatError
from utils.surrogate.dataset import (
    Dataset,
    ExcitationPlan,
    ThetaVector,
    assign_split,
    load_dataset,
    save_dataset,
    sliding_windows,
    theta_columns,
)
from utils.surrogate.networks import ConstraintClassifier, ResidualLSTM, predict_y, predict_zbar, rollout
from utils.surrogate.serialization import load_weights, save_weights
from utils.surrogate.training import (
    TrainingReport,
    gradient_check,
    train_classifier,
    train_linear,
    train_residual_net,
)


def test_theta_columns_oldest_first():
    assert theta_columns(1) == ["y_k-1", "y_k", "u_k-1", "u_k", "q_k-1", "q_k"]
    assert len(theta_columns(10)) == 33


def test_theta_vector():
    theta = ThetaVector.from_array(np.arange(9.0))
    assert theta.N == 2
    assert np.array_equal(theta.u_hist, [3.0, 4.0, 5.0])
    assert np.array_equal(theta.as_array(), np.arange(9.0))
    with pytest.raises(DimensionMismatchError):
        ThetaVector([1.0, 2.0], [1.0], [1.0, 2.0])
    with pytest.raises(DimensionMismatchError):
        ThetaVector.from_array(np.arange(7.0))


def test_sliding_windows():
    y = np.arange(6.0)
    z = np.array([0.0, 0.0, 0.0, 0.0, 1.0, 0.0])
    u = 10 + np.arange(5.0)
    q = 20 + np.arange(5.0)
    theta, y_next, zbar = sliding_windows(y, z, u, q, N=2, z_tol=0.5)
    assert theta.shape == (3, 9)
    assert np.array_equal(theta[0], [0, 1, 2, 10, 11, 12, 20, 21, 22])
    assert np.array_equal(y_next, [3, 4, 5])
    assert np.array_equal(zbar, [1, 0, 1])


def test_assign_split_sizes():
    labels = assign_split(10, (0.8, 0.1, 0.1), seed=0)
    assert [int(np.sum(labels == s)) for s in ("train", "val", "test")] == [8, 1, 1]
    labels = assign_split(3, (0.98, 0.01, 0.01), seed=0)
    assert sorted(labels) == ["test", "train", "val"]
    assert np.array_equal(assign_split(50, (0.8, 0.1, 0.1), 3), assign_split(50, (0.8, 0.1, 0.1), 3))


def test_excitation_plan_covers_saturation():
    plan = ExcitationPlan(4, 200, (5.0, 80.0), (80.0, 120.0), saturated_share=0.5, u_saturation=60.0, seed=1)
    sequences = plan.sequences()
    assert len(sequences) == 4
    for u_seq, q_seq in sequences:
        assert len(u_seq) == len(q_seq) == 200
        assert np.all((u_seq >= 5.0) & (u_seq <= 80.0))
        assert np.all((q_seq >= 80.0) & (q_seq <= 120.0))
    assert np.mean(sequences[0][0] >= 60.0) > 0.3
    assert np.array_equal(plan.sequences()[3][0], sequences[3][0])


def test_dataset_csv_round_trip(tmp_path):
    dataset = toy_dataset(n=20)
    save_dataset(dataset, tmp_path / "dataset.csv")
    loaded = load_dataset(tmp_path / "dataset.csv")
    assert loaded.N == dataset.N
    assert np.allclose(loaded.theta, dataset.theta, atol=1e-8)
    assert np.array_equal(loaded.zbar_next, dataset.zbar_next)
    assert list(loaded.split) == list(dataset.split)


def test_dataset_rejects_wrong_width():
    with pytest.raises(DimensionMismatchError):
        Dataset(2, np.zeros((4, 6)), np.zeros(4), np.zeros(4, dtype=int), np.array(["train"] * 4))


def test_backprop_matches_finite_differences():
    torch.manual_seed(0)
    theta = torch.randn(16, 9)
    target = torch.randn(16)
    assert gradient_check(ResidualLSTM(N=2, hidden=5, layers=2), theta, target) < 1e-4
    assert gradient_check(ConstraintClassifier(9, hidden=6, layers=2), theta, target) < 1e-4


def test_linear_stage_recovers_linear_law():
    dataset = toy_dataset(n=300).fit_normalization()
    report = TrainingReport()
    linear = train_linear(dataset, report=report)
    theta, y, _ = dataset.normalized("test")
    assert np.max(np.abs(linear(theta) - y)) < 1e-8
    assert report.linear_train_mse < 1e-16
    assert not report.ridge_used


def test_rank_deficient_design_falls_back_to_ridge():
    dataset = toy_dataset(n=200)
    dataset.theta[:, 0] = 0.5
    report = TrainingReport()
    train_linear(dataset.fit_normalization(), report=report)
    assert report.ridge_used


def test_residual_net_learns_zero_residual():
    dataset = toy_dataset(n=512).fit_normalization()
    linear = train_linear(dataset)
    report = TrainingReport()
    net = train_residual_net(
        dataset, linear, epochs=40, lr=5e-3, batch=64, hidden=4, layers=1, optimizer="adam", report=report
    )
    assert report.residual_losses[-1] < 1e-3
    assert report.residual_losses[-1] < report.residual_losses[0]
    theta, _, _ = dataset.normalized("val")
    with torch.no_grad():
        assert float(net(torch.as_tensor(theta)).abs().mean()) < 0.05


def test_classifier_separates_flow_threshold():
    dataset = toy_dataset(n=512).fit_normalization()
    report = TrainingReport()
    train_classifier(dataset, epochs=60, lr=1e-2, batch=64, hidden=8, layers=1, optimizer="adam", report=report)
    assert report.val_accuracy >= 0.9
    assert report.test_accuracy >= 0.9


def test_single_class_labels_are_rejected():
    dataset = toy_dataset(n=100)
    dataset.zbar_next[:] = 1
    with pytest.raises(SingleClassError):
        train_classifier(dataset.fit_normalization(), epochs=1, lr=1e-3, batch=16)


def test_rollout_matches_manual_recursion():
    model = ToyModel(N=2)
    u_path = np.array([20.0, 25.0, 30.0, 35.0, 40.0])
    q_path = np.array([100.0, 100.0, 105.0, 110.0, 95.0])
    y_hat, zbar = rollout(model, np.array([0.5, 0.6, 0.7]), u_path, q_path)
    assert y_hat.shape == zbar.shape == (1, 3)

    expected, y = [], 0.7
    for j in range(3):
        y = model.a * y + model.b * u_path[j + 2] + model.c * q_path[j + 2] + model.d
        expected.append(y)
    assert np.allclose(y_hat[0], expected)
    assert np.all(zbar == 1)


def test_rollout_broadcasts_candidates():
    model = ToyModel(N=1, u_unsafe=30.0)
    u_paths = np.array([[20.0, 20.0, 20.0], [20.0, 40.0, 20.0]])
    y_hat, zbar = rollout(model, np.array([0.5, 0.5]), u_paths, np.full(3, 100.0))
    assert y_hat.shape == (2, 2)
    assert list(zbar[:, 0]) == [1, 0]
    with pytest.raises(DimensionMismatchError):
        rollout(model, np.array([0.5, 0.5, 0.5]), u_paths, np.full(3, 100.0))


def test_single_vector_predictions(tiny_surrogate):
    theta = toy_dataset(n=4).theta
    y_batch, p_safe = tiny_surrogate.predict_batch(theta)
    assert predict_y(tiny_surrogate, theta[1]) == pytest.approx(y_batch[1])
    assert predict_zbar(tiny_surrogate, theta[1]) == int(p_safe[1] >= 0.5)
    with pytest.raises(DimensionMismatchError):
        tiny_surrogate.predict_batch(theta[:, :-1])
    with pytest.raises(DimensionMismatchError):
        predict_y(tiny_surrogate, theta)


def test_weights_round_trip(tiny_surrogate, tmp_path):
    path = tmp_path / "model" / "surrogate.pt"
    save_weights(tiny_surrogate, path)
    loaded = load_weights(path)
    theta = toy_dataset(n=32, seed=9).theta
    expected_y, expected_p = tiny_surrogate.predict_batch(theta)
    y, p = loaded.predict_batch(theta)
    assert np.array_equal(y, expected_y)
    assert np.array_equal(p, expected_p)
    assert loaded.N == tiny_surrogate.N


def test_truncated_weights_file(tiny_surrogate, tmp_path):
    path = tmp_path / "surrogate.pt"
    save_weights(tiny_surrogate, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(WeightsFormatError):
        load_weights(path)


def test_foreign_weights_file(tmp_path):
    path = tmp_path / "other.pt"
    torch.save({"magic": "something-else", "version": 1}, path)
    with pytest.raises(WeightsFormatError):
        load_weights(path)
    with pytest.raises(WeightsFormatError):
        load_weights(tmp_path / "missing.pt")
