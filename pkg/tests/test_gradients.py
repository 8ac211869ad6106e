import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorlab.gradients import (
    finite_diff,
    grad_log_prob,
    grad_prob,
    grad_support_mass,
    max_relative_error,
)
from anchorlab.policy import softmax


def random_case(rng, v):
    z = rng.normal(0.0, 1.5, size=v)
    return z, softmax(z)


class TestGradLogProb:
    def test_symmetric_case(self):
        np.testing.assert_allclose(grad_log_prob(np.array([0.5, 0.5]), 0), [0.5, -0.5])

    def test_uniform_four(self):
        # Frozen from the finite-difference oracle on log softmax at z = 0.
        z = np.zeros(4)
        fd = finite_diff(lambda zz: np.log(softmax(zz)[2]), z)
        np.testing.assert_allclose(fd, [-0.25, -0.25, 0.75, -0.25], atol=1e-9)
        np.testing.assert_allclose(grad_log_prob(softmax(z), 2), [-0.25, -0.25, 0.75, -0.25])

    def test_out_of_range_target(self):
        with pytest.raises(ValueError):
            grad_log_prob(np.array([0.5, 0.5]), 2)
        with pytest.raises(ValueError):
            grad_log_prob(np.array([0.5, 0.5]), -1)


class TestGradProb:
    def test_squeezing_entry(self):
        dist = np.array([0.5, 0.3, 0.2])
        dz = grad_prob(dist, 0)
        assert dz[1] == pytest.approx(-0.15, abs=1e-15)
        assert dz[0] == pytest.approx(0.25, abs=1e-15)

    def test_saturated_softmax_zero_gradient(self):
        np.testing.assert_allclose(grad_prob(np.array([1.0, 0.0]), 0), [0.0, 0.0])

    def test_squeezing_proportionality(self):
        # Off-target entries all share the same ratio -pi(err) to their own
        # probability: redistribution is proportional to current mass.
        rng = np.random.default_rng(5)
        for _ in range(100):
            v = int(rng.integers(2, 12))
            _, dist = random_case(rng, v)
            err = int(rng.integers(v))
            dz = grad_prob(dist, err)
            others = [k for k in range(v) if k != err]
            ratios = dz[others] / dist[others]
            np.testing.assert_allclose(ratios, -dist[err], rtol=0, atol=1e-12)


class TestGradSupportMass:
    def test_half_uniform_set(self):
        dist = np.full(4, 0.25)
        dz = grad_support_mass(dist, {0, 1})
        assert dz[0] == pytest.approx(0.125, abs=1e-15)
        assert dz[2] == pytest.approx(-0.125, abs=1e-15)
        fd = finite_diff(lambda zz: float(softmax(zz)[[0, 1]].sum()), np.zeros(4))
        np.testing.assert_allclose(dz, fd, atol=1e-9)

    def test_full_vocabulary_is_constant(self):
        rng = np.random.default_rng(1)
        _, dist = random_case(rng, 6)
        np.testing.assert_allclose(grad_support_mass(dist, range(6)), np.zeros(6))

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError):
            grad_support_mass(np.full(4, 0.25), set())

    def test_out_of_range_member_rejected(self):
        with pytest.raises(ValueError):
            grad_support_mass(np.full(4, 0.25), {0, 4})


class TestFiniteDiff:
    def test_linear_function(self):
        fd = finite_diff(lambda z: z[0], np.array([3.0, -1.0, 2.0]))
        np.testing.assert_allclose(fd, [1.0, 0.0, 0.0], atol=1e-9)

    def test_constant_function(self):
        fd = finite_diff(lambda z: 7.5, np.zeros(5))
        np.testing.assert_allclose(fd, np.zeros(5), atol=1e-9)

    def test_matches_grad_log_prob(self):
        rng = np.random.default_rng(2)
        z, dist = random_case(rng, 6)
        fd = finite_diff(lambda zz: np.log(softmax(zz)[3]), z)
        assert max_relative_error(grad_log_prob(dist, 3), fd) < 1e-6

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            finite_diff(lambda z: z[0], np.zeros(2), h=0.0)

    def test_non_finite_loss_rejected(self):
        with pytest.raises(ValueError):
            finite_diff(lambda z: float("nan"), np.zeros(2))


def test_kernels_match_finite_differences_across_sizes():
    # The module-level contract: 1000 seeded random distributions over
    # V in {2, 4, 8, 32}, every kernel within 1e-6 of the oracle.
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(1000):
        v = (2, 4, 8, 32)[case % 4]
        z, dist = random_case(rng, v)
        target = int(rng.integers(v))
        members = tuple(
            int(i) for i in rng.choice(v, size=int(rng.integers(1, v + 1)), replace=False)
        )
        checks = [
            (grad_log_prob(dist, target), lambda zz: np.log(softmax(zz)[target])),
            (grad_prob(dist, target), lambda zz: softmax(zz)[target]),
            (
                grad_support_mass(dist, members),
                lambda zz: float(softmax(zz)[list(members)].sum()),
            ),
        ]
        for analytic, loss in checks:
            worst = max(worst, max_relative_error(analytic, finite_diff(loss, z)))
    assert worst < 1e-6


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-30, 30), min_size=2, max_size=16),
    st.data(),
)
def test_zero_sum_tangent_property(logits, data):
    dist = softmax(logits)
    v = dist.size
    target = data.draw(st.integers(0, v - 1))
    size = data.draw(st.integers(1, v))
    members = data.draw(
        st.sets(st.integers(0, v - 1), min_size=size, max_size=size)
    )
    assert abs(grad_log_prob(dist, target).sum()) < 1e-9
    assert abs(grad_prob(dist, target).sum()) < 1e-9
    assert abs(grad_support_mass(dist, members).sum()) < 1e-9
