import itertools
import json
import math

import numpy as np
import pytest

from ccan import clustering as cl
from ccan import tensor as T
from ccan.autoencoder import NetworkConfig
from ccan.clustering import RunReport, TrainConfig
from ccan.errors import ConfigError, DegenerateClusterError, InitializationError
from ccan.tensor import Tensor

from oracles import central_diff, rel_error


# -- K-means ---------------------------------------------------------------------


def test_kmeans_repeated_points():
    pts = np.array([[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]])
    x = np.repeat(pts, 4, axis=0)
    r = cl.kmeans(x, 3, seed=0)
    assert r.inertia == 0.0
    assert sorted(map(tuple, r.centers)) == sorted(map(tuple, pts))


def test_kmeans_one_dimensional_oracle():
    x = np.array([[0.0], [1.0], [10.0], [11.0]])
    r = cl.kmeans(x, 2, seed=3)
    assert sorted(r.centers[:, 0]) == [0.5, 10.5]
    # exhaustive partition oracle
    best = min(
        sum(((x[[i for i in range(4) if s[i] == g]] - x[[i for i in range(4) if s[i] == g]].mean()) ** 2).sum()
            for g in (0, 1))
        for s in itertools.product((0, 1), repeat=4) if 0 < sum(s) < 4
    )
    assert r.inertia == pytest.approx(best)


def test_kmeans_permutation_invariant_inertia(rng):
    x = rng.normal(size=(60, 3))
    a = cl.kmeans(x, 4, seed=0)
    b = cl.kmeans(x[rng.permutation(60)], 4, seed=0)
    assert a.inertia == pytest.approx(b.inertia, rel=1e-9)


def test_kmeans_no_empty_clusters(rng):
    x = np.concatenate([np.zeros((20, 2)), rng.normal(size=(3, 2)) + 50])
    r = cl.kmeans(x, 5, seed=1, n_init=3)
    assert np.bincount(r.labels, minlength=5).min() >= 1


def test_kmeans_too_few_points():
    with pytest.raises(InitializationError):
        cl.kmeans(np.zeros((3, 2)), 4)


def test_initialization_error_is_a_config_error():
    assert issubclass(InitializationError, ConfigError)


# -- soft assignment ---------------------------------------------------------------


def test_equidistant_point_is_uniform():
    centers = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    np.testing.assert_allclose(cl.soft_assign_np(np.zeros((1, 2)), centers), 0.25)


def test_two_centre_case():
    q = cl.soft_assign_np(np.zeros((1, 1)), np.array([[0.0], [1.0]]))
    np.testing.assert_allclose(q, [[2 / 3, 1 / 3]], atol=1e-15)


def test_argmax_is_nearest_centre(rng):
    z, c = rng.normal(size=(200, 9)), rng.normal(size=(9, 9))
    q = cl.soft_assign_np(z, c)
    np.testing.assert_array_equal(cl.hard_labels(q), np.argmin(((z[:, None] - c[None]) ** 2).sum(-1), axis=1))
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-10)


def test_soft_assign_dimension_mismatch():
    with pytest.raises(ConfigError):
        cl.soft_assign(np.zeros((2, 3)), np.zeros((2, 4)))


def test_soft_assign_gradients(rng):
    for _ in range(5):
        z, c = rng.normal(size=(4, 3)), rng.normal(size=(3, 3))
        r = rng.normal(size=(4, 3))
        tz, tc = Tensor(z.copy(), requires_grad=True), Tensor(c.copy(), requires_grad=True)
        (cl.soft_assign(tz, tc) * Tensor(r)).sum().backward()
        fz, fc = central_diff(lambda a, b: float((cl.soft_assign_np(a, b) * r).sum()), [z.copy(), c.copy()])
        assert rel_error(tz.grad, fz) < 1e-6
        assert rel_error(tc.grad, fc) < 1e-6


# -- targets -----------------------------------------------------------------------


def test_one_hot_balanced_is_fixed_point():
    q = np.eye(3)[[0, 1, 2, 0, 1, 2]]
    np.testing.assert_array_equal(cl.target_distribution(q), q)


def test_two_by_two_target():
    p = cl.target_distribution(np.array([[0.6, 0.4], [0.4, 0.6]]))
    np.testing.assert_allclose(p, [[9 / 13, 4 / 13], [4 / 13, 9 / 13]], atol=1e-15)
    assert p[0, 0] == pytest.approx(0.6923, abs=1e-4)


def test_target_preserves_argmax_with_equal_column_sums(rng):
    for _ in range(50):
        q = rng.dirichlet(np.ones(4), size=4)
        q = np.concatenate([q[np.roll(np.arange(4), s)][:, np.roll(np.arange(4), s)] for s in range(4)])
        q = np.concatenate([np.roll(row[None], s, axis=1) for s in range(4) for row in q[:4]])
        np.testing.assert_allclose(q.sum(axis=0), q.sum(axis=0)[0])
        np.testing.assert_array_equal(cl.hard_labels(cl.target_distribution(q)), cl.hard_labels(q))


def test_target_rows_sum_to_one(rng):
    p = cl.target_distribution(rng.dirichlet(np.ones(5), size=40))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-10)


def test_empty_column_is_degenerate():
    with pytest.raises(DegenerateClusterError, match=r"\[1\]"):
        cl.target_distribution(np.array([[1.0, 0.0], [1.0, 0.0]]))


# -- KL ----------------------------------------------------------------------------


def test_kl_identical_is_zero(rng):
    q = rng.dirichlet(np.ones(4), size=5)
    assert cl.clustering_loss(q, Tensor(q)).item() == pytest.approx(0.0, abs=1e-14)


def test_kl_ln2():
    assert cl.clustering_loss(np.array([[1.0, 0.0]]), Tensor(np.array([[0.5, 0.5]]))).item() == pytest.approx(math.log(2))


def test_kl_is_non_negative(rng):
    for _ in range(1000):
        k = rng.integers(2, 8)
        p, q = rng.dirichlet(np.ones(k), size=1), rng.dirichlet(np.ones(k), size=1)
        assert cl.clustering_loss(p, Tensor(q)).item() >= 0.0


def test_kl_mean_reduction(rng):
    p, q = rng.dirichlet(np.ones(3), size=4), rng.dirichlet(np.ones(3), size=4)
    total = cl.clustering_loss(p, Tensor(q)).item()
    assert cl.clustering_loss(p, Tensor(q), "mean").item() == pytest.approx(total / 4)
    with pytest.raises(ConfigError):
        cl.clustering_loss(p, Tensor(q), "max")


def test_kl_gradient_flows_to_q_only(rng):
    for _ in range(5):
        p = rng.dirichlet(np.ones(4), size=3)
        logits = rng.normal(size=(3, 4))
        t = Tensor(logits.copy(), requires_grad=True)
        cl.clustering_loss(p, T.softmax(t, axis=1)).backward()
        fd = central_diff(lambda a: cl.clustering_loss(p, T.softmax(Tensor(a), axis=1)).item(), [logits.copy()])[0]
        assert rel_error(t.grad, fd) < 1e-6


# -- joint loss ---------------------------------------------------------------------


def test_joint_loss_cases():
    assert cl.joint_loss(3.5, 100.0, 0.0) == 3.5
    assert cl.joint_loss(1.0, 2.0, 0.1) == pytest.approx(1.2)
    assert cl.joint_loss(1.0, 2.5, 0.1) >= cl.joint_loss(1.0, 2.0, 0.1)
    with pytest.raises(ConfigError):
        cl.joint_loss(1.0, 1.0, -0.1)


def test_label_change_fraction():
    assert cl.label_change_fraction([0, 1, 2], [0, 1, 2]) == 0.0
    assert cl.label_change_fraction([0, 1, 2, 3], [0, 1, 0, 0]) == 0.5


@pytest.mark.parametrize("kw", [dict(alpha=-1), dict(epsilon=1.5), dict(n_clusters=1),
                                dict(target_update_interval=0), dict(kl_reduction="median"),
                                dict(joint_unit="day")])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


# -- training ----------------------------------------------------------------------


def small_net():
    return NetworkConfig(input_shape=(8, 6), conv_channels=(4, 4), conv_strides=((2, 1), (1, 1)),
                         primary_grid=(2, 2), primary_types=2, primary_dim=3, class_capsules=3,
                         class_dim=4, fc_width=8, deconv_channels=(2, 2))


def blobs(seed=0, per_class=12):
    rng = np.random.default_rng(seed)
    means = rng.normal(size=(3, 1, 8, 6)) * 3
    x = np.concatenate([m + 0.3 * rng.normal(size=(per_class, 1, 8, 6)) for m in means])
    return x.astype(np.float32), np.repeat(np.arange(3), per_class)


def small_train(**kw):
    base = dict(n_clusters=3, pretrain_iterations=5, max_iterations=3, batch_size=8, kmeans_restarts=3)
    base.update(kw)
    return TrainConfig(**base)


def test_epsilon_one_stops_at_first_comparison():
    x, y = blobs()
    r = cl.train(x, small_net(), small_train(epsilon=1.0, max_iterations=10), labels=y, progress=lambda s: None)
    assert r.report.converged
    assert r.report.joint_iterations == 1
    assert [e["iteration"] for e in r.report.label_change] == [0, 1]


@pytest.mark.parametrize("unit", ["batch", "epoch"])
def test_joint_unit_sets_steps_per_iteration(unit, monkeypatch):
    x, _ = blobs()
    steps = []
    real_step = cl.Optimizer.step
    monkeypatch.setattr(cl.Optimizer, "step", lambda self: (steps.append(len(self.params)), real_step(self))[1])
    r = cl.train(x, small_net(), small_train(epsilon=0.0, joint_unit=unit), progress=lambda s: None)
    assert r.report.joint_iterations == 3
    per_iteration = 1 if unit == "batch" else -(-len(x) // 8)
    n_net = len(r.model.parameters())
    # pretraining optimizes the network; the joint phase adds the centres to the same optimizer
    assert steps == [n_net] * 5 + [n_net + 1] * (3 * per_iteration)


def test_alpha_zero_leaves_centres_at_kmeans_init():
    x, _ = blobs()
    cfg = small_train(alpha=0.0, epsilon=0.0)
    r = cl.train(x, small_net(), cfg, progress=lambda s: None)
    assert r.report.joint_iterations == 3
    # rerun pretraining + K-means alone with the same seed for the initial centres
    init = cl.train(x, small_net(), small_train(alpha=0.0, max_iterations=0), progress=lambda s: None)
    np.testing.assert_array_equal(r.centers.data, init.centers.data)
    assert all(e["L_J"] == e["L_r"] for e in r.report.joint)


def test_no_joint_phase_without_iterations():
    x, y = blobs()
    r = cl.train(x, small_net(), small_train(max_iterations=0), labels=y, progress=lambda s: None)
    assert r.report.joint == [] and r.report.label_change == []
    assert len(r.report.pretrain_loss) == 5
    assert set(r.report.metrics) >= {"ca", "nmi_arithmetic", "nmi_sqrt"}


def test_training_is_reproducible():
    x, y = blobs()

    def run():
        rep = cl.train(x, small_net(), small_train(), labels=y, progress=lambda s: None).report.to_dict()
        rep.pop("timings")
        return rep

    assert run() == run()


def test_state_is_consistent():
    x, _ = blobs()
    r = cl.train(x, small_net(), small_train(epsilon=0.0), progress=lambda s: None)
    s = r.state
    np.testing.assert_allclose(s.q.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_allclose(s.p.sum(axis=1), 1.0, atol=1e-10)
    np.testing.assert_array_equal(s.labels, s.q.argmax(axis=1))
    z = r.model.embed(x)
    np.testing.assert_allclose(cl.soft_assign_np(z, s.centers), s.q, atol=1e-6)


def test_too_few_samples():
    with pytest.raises(InitializationError):
        cl.train(np.zeros((2, 1, 8, 6), dtype=np.float32), small_net(), small_train())


def test_report_json_round_trip():
    rep = RunReport(config={"a": 1}, seed=3, pretrain_loss=[1.5, 0.25],
                    joint=[{"iteration": 0, "L_r": 1.0, "L_c": 0.1, "L_J": 1.01}],
                    metrics={"ca": 0.5}, notes=["x"])
    text = rep.to_json()
    assert RunReport.from_json(text) == rep
    assert json.loads(text)["seed"] == 3
