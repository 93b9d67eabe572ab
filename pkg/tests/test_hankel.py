"""Hankel construction, past/future partition, and trajectory completion."""

import numpy as np
import pytest

from ddpc.hankel import HankelBlocks, build_hankel, partition_blocks, trajectory_completion
from ddpc.plant import LtiPlant, simulate


def two_state_plant(x0=None):
    # stable, controllable, observable; lag 2
    A = np.array([[0.8, 0.3], [-0.2, 0.6]])
    B = np.array([[1.0], [0.5]])
    C = np.array([[1.0, 0.0]])
    return LtiPlant(A=A, B=B, C=C, x0=x0)


def recorded_blocks(T_ini, N, T=120, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(T, 1))
    y = simulate(two_state_plant(), u)
    return partition_blocks(u, y, T_ini, N), u, y


class TestBuildHankel:
    def test_hand_example(self):
        data = np.arange(10.0).reshape(5, 2)  # rows [0,1], [2,3], ...
        H = build_hankel(data, depth=3)
        assert H.shape == (6, 3)
        assert np.array_equal(H[:, 0], [0, 1, 2, 3, 4, 5])
        assert np.array_equal(H[:, 1], [2, 3, 4, 5, 6, 7])
        assert np.array_equal(H[:, 2], [4, 5, 6, 7, 8, 9])

    def test_column_count(self):
        H = build_hankel(np.zeros((20, 3)), depth=7)
        assert H.shape == (21, 14)

    def test_shift_structure(self):
        rng = np.random.default_rng(1)
        data = rng.normal(size=(30, 2))
        H = build_hankel(data, depth=4)
        # dropping the first block row of column j gives the head of column j+1
        assert np.array_equal(H[2:, :-1], H[:-2, 1:])

    def test_depth_one_is_transpose(self):
        data = np.random.default_rng(2).normal(size=(6, 2))
        assert np.array_equal(build_hankel(data, 1), data.T)

    def test_validation(self):
        with pytest.raises(ValueError, match="depth"):
            build_hankel(np.zeros((5, 1)), 0)
        with pytest.raises(ValueError, match="samples"):
            build_hankel(np.zeros((3, 1)), 4)


class TestPartition:
    def test_shapes_and_counts(self):
        blocks, _, _ = recorded_blocks(T_ini=2, N=5, T=40)
        assert blocks.U_p.shape == (2, 34)
        assert blocks.U_f.shape == (5, 34)
        assert blocks.Y_p.shape == (2, 34)
        assert blocks.Y_f.shape == (5, 34)
        assert blocks.M == 34 and blocks.L == 7

    def test_rows_are_contiguous_windows(self):
        blocks, u, y = recorded_blocks(T_ini=3, N=4, T=30)
        j = 11
        assert np.array_equal(blocks.U_p[:, j], u[j:j + 3, 0])
        assert np.array_equal(blocks.U_f[:, j], u[j + 3:j + 7, 0])
        assert np.array_equal(blocks.Y_p[:, j], y[j:j + 3, 0])
        assert np.array_equal(blocks.Y_f[:, j], y[j + 3:j + 7, 0])

    def test_multichannel_interleaving(self):
        rng = np.random.default_rng(4)
        u = rng.normal(size=(25, 2))
        y = rng.normal(size=(25, 3))
        blocks = partition_blocks(u, y, T_ini=2, N=3)
        # column j stacks samples time-major, channels fastest
        assert np.array_equal(blocks.U_p[:, 0], u[:2].reshape(-1))
        assert np.array_equal(blocks.Y_f[:, 0], y[2:5].reshape(-1))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="samples"):
            partition_blocks(np.zeros((10, 1)), np.zeros((9, 1)), 2, 3)

    def test_block_validation_rejects_bad_rows(self):
        with pytest.raises(ValueError, match="rows"):
            HankelBlocks(U_p=np.zeros((3, 5)), U_f=np.zeros((4, 5)),
                         Y_p=np.zeros((2, 5)), Y_f=np.zeros((4, 5)),
                         T_ini=2, N=4, n_u=1, n_y=1)


class TestCompletion:
    def test_matches_true_simulation(self):
        blocks, _, _ = recorded_blocks(T_ini=2, N=8, T=150, seed=5)
        # fresh trajectory from a state never visited in the record
        plant = two_state_plant(x0=[0.7, -1.2])
        rng = np.random.default_rng(6)
        u_all = rng.uniform(-1, 1, size=(10, 1))
        y_all = simulate(plant, u_all)
        pred = trajectory_completion(blocks, u_ini=u_all[:2], y_ini=y_all[:2],
                                     u_future=u_all[2:])
        assert np.max(np.abs(pred - y_all[2:])) < 1e-8

    def test_short_past_cannot_pin_down_state(self):
        # x2 is a pure delay toward y; one past pair leaves it undetermined
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        C = np.array([[1.0, 0.0]])
        rng = np.random.default_rng(7)
        u = rng.normal(size=(60, 1))
        y = simulate(LtiPlant(A=A, B=B, C=C), u)

        u_test = rng.normal(size=(6, 1))
        y_true = simulate(LtiPlant(A=A, B=B, C=C, x0=[0.0, 2.0]), u_test)

        short = partition_blocks(u, y, T_ini=1, N=4)
        pred_short = trajectory_completion(short, u_test[:1], y_true[:1], u_test[1:5])
        assert np.max(np.abs(pred_short - y_true[1:5])) > 1e-3

        full = partition_blocks(u, y, T_ini=2, N=4)
        pred_full = trajectory_completion(full, u_test[:2], y_true[:2], u_test[2:])
        assert np.max(np.abs(pred_full - y_true[2:])) < 1e-8

    def test_inconsistent_window_raises(self):
        # three zero-input outputs of a 2-state system live on a 2-dim
        # subspace; a generic triple is not a trajectory at all
        blocks, _, _ = recorded_blocks(T_ini=3, N=5, T=100, seed=8)
        with pytest.raises(ValueError, match="not consistent"):
            trajectory_completion(blocks, u_ini=np.zeros((3, 1)),
                                  y_ini=np.array([[1.0], [-1.0], [2.0]]),
                                  u_future=np.zeros((5, 1)))

    def test_size_validation(self):
        blocks, _, _ = recorded_blocks(T_ini=2, N=5)
        with pytest.raises(ValueError, match="u_ini"):
            trajectory_completion(blocks, np.zeros(3), np.zeros(2), np.zeros(5))
        with pytest.raises(ValueError, match="u_future"):
            trajectory_completion(blocks, np.zeros(2), np.zeros(2), np.zeros(4))
