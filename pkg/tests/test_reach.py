import numpy as np
import pytest

from campc.lti import LtiSystem, PolyhedralSet, build_prediction
from campc.reach import (UNIVERSAL, BoxSet, EllipsoidSet, ReachTubes,
                         backward_box_recursion, forward_box_recursion,
                         shift_tube)


def stable_system(seed, n=3, m=2):
    r = np.random.default_rng(seed)
    A = r.standard_normal((n, n))
    A *= 0.8 / max(1.0, np.abs(np.linalg.eigvals(A)).max())
    return LtiSystem(A=A, B=r.standard_normal((n, m)))


class TestForward:
    def test_scalar_geometric(self):
        sys = LtiSystem(A=[[0.5]], B=[[1.0]])
        U = BoxSet.from_bounds([0.0], [1.0])
        boxes = forward_box_recursion(sys, U, 2)
        lo0, hi0 = boxes[0].bounds()
        lo1, hi1 = boxes[1].bounds()
        np.testing.assert_allclose([lo0[0], hi0[0]], [0.0, 1.0])
        np.testing.assert_allclose([lo1[0], hi1[0]], [0.0, 1.5])

    def test_autonomous_images(self):
        sys = LtiSystem(A=[[0.5, 0.1], [0.0, 0.25]], B=np.zeros((2, 1)))
        U = BoxSet.from_bounds([0.0], [0.0])
        X0 = BoxSet.from_bounds([-1.0, -1.0], [1.0, 1.0])
        boxes = forward_box_recursion(sys, U, 3, X0=X0)
        # widths follow |A|^k applied to the start widths
        l = X0.l
        for box in boxes:
            l = np.abs(sys.A) @ l
            np.testing.assert_allclose(box.l, l)

    @pytest.mark.parametrize("seed", range(5))
    def test_monte_carlo_containment(self, seed):
        sys = stable_system(seed)
        r = np.random.default_rng(1000 + seed)
        U = BoxSet.from_bounds([-1.0, 0.0], [1.0, 0.5])
        N = 6
        boxes = forward_box_recursion(sys, U, N)
        X = np.zeros((1000, sys.n))
        for i in range(N):
            u = r.uniform(U.q - U.l, U.q + U.l, (1000, sys.m))
            X = X @ sys.A.T + u @ sys.B.T
            lo, hi = boxes[i].bounds()
            assert (X - hi).max() <= 1e-9
            assert (lo - X).max() <= 1e-9


class TestShift:
    def test_zero_shift(self, ):
        sys = stable_system(7)
        tubes = ReachTubes(
            forward=tuple(forward_box_recursion(
                sys, BoxSet.from_bounds([-1, -1], [1, 1]), 3)),
            backward=(None, None, UNIVERSAL), N=3)
        pred = build_prediction(sys, 3)
        shifted = shift_tube(tubes, pred, np.zeros(sys.n))
        for a, b in zip(shifted, tubes.forward):
            np.testing.assert_array_equal(a.q, b.q)

    def test_scalar_shift_by_free_response(self):
        sys = LtiSystem(A=[[2.0]], B=[[1.0]])
        tubes = ReachTubes(
            forward=tuple(forward_box_recursion(
                sys, BoxSet.from_bounds([0.0], [1.0]), 2)),
            backward=(None, UNIVERSAL), N=2)
        pred = build_prediction(sys, 2)
        shifted = shift_tube(tubes, pred, [1.0])
        assert shifted[1].q[0] == tubes.forward[1].q[0] + 4.0

    def test_shift_equals_recursion_from_state(self):
        sys = stable_system(13)
        U = BoxSet.from_bounds([-0.5, -0.5], [0.5, 0.5])
        x = np.array([0.3, -0.2, 0.8])
        tubes = ReachTubes(forward=tuple(forward_box_recursion(sys, U, 4)),
                           backward=(None, None, None, UNIVERSAL), N=4)
        pred = build_prediction(sys, 4)
        shifted = shift_tube(tubes, pred, x)
        direct = forward_box_recursion(sys, U, 4,
                                       X0=BoxSet.from_bounds(x, x))
        for a, b in zip(shifted, direct):
            np.testing.assert_allclose(a.q, b.q, atol=1e-12)
            np.testing.assert_allclose(a.l, b.l, atol=1e-12)
        # the shift is exactly the free response
        base = shift_tube(tubes, pred, np.zeros(3))
        for i, (a, b) in enumerate(zip(shifted, base), start=1):
            np.testing.assert_allclose(
                a.q - b.q, pred.Phi[(i - 1) * 3 : i * 3] @ x, atol=1e-12)


class TestBackward:
    def test_scalar_preimage(self):
        sys = LtiSystem(A=[[0.5]], B=np.zeros((1, 1)))
        XT = PolyhedralSet.box([0.0], [1.0])
        sets = backward_box_recursion(sys, BoxSet.from_bounds([0.0], [0.0]),
                                      XT, 2)
        assert sets[-1] is UNIVERSAL
        lo, hi = sets[0].bounds()
        np.testing.assert_allclose([lo[0], hi[0]], [0.0, 2.0])

    def test_universal_marker_required(self):
        with pytest.raises(ValueError):
            ReachTubes(forward=(None,), backward=(None,), N=1)

    def test_singular_dynamics_refused(self):
        sys = LtiSystem(A=np.zeros((2, 2)), B=np.eye(2))
        with pytest.raises(ValueError):
            backward_box_recursion(
                sys, BoxSet.from_bounds(np.zeros(2), np.ones(2)),
                PolyhedralSet.box(np.zeros(2), np.ones(2)), 3)

    @pytest.mark.parametrize("seed", range(4))
    def test_monte_carlo_preimage_soundness(self, seed):
        r = np.random.default_rng(2000 + seed)
        A = r.standard_normal((2, 2)) + 2 * np.eye(2)
        sys = LtiSystem(A=A, B=r.standard_normal((2, 1)))
        U = BoxSet.from_bounds([-0.3], [0.3])
        XT = PolyhedralSet.box([-1.0, -1.0], [1.0, 1.0])
        N = 4
        sets = backward_box_recursion(sys, U, XT, N)
        for k in range(N - 1, 0, -1):
            target = sets[k]
            if target is UNIVERSAL:
                continue
            lo_t, hi_t = target.bounds()
            x = r.uniform(-3, 3, (4000, 2))
            u = r.uniform(-0.3, 0.3, (4000, 1))
            y = x @ sys.A.T + u @ sys.B.T
            lands = np.all((y >= lo_t - 1e-12) & (y <= hi_t + 1e-12), axis=1)
            lo_p, hi_p = sets[k - 1].bounds()
            inside = np.all((x >= lo_p - 1e-9) & (x <= hi_p + 1e-9), axis=1)
            assert np.all(inside[lands])


def test_ellipsoid_membership():
    e = EllipsoidSet(L=np.eye(2), q=np.zeros(2))
    assert e.contains([0.6, 0.6])
    assert not e.contains([1.2, 0.0])
    squashed = EllipsoidSet(L=np.diag([2.0, 1.0]), q=[1.0, 0.0])
    assert squashed.contains([1.5, 0.0])
    assert not squashed.contains([1.6, 0.0])


def test_box_general_metric_membership():
    P = np.array([[1.0, 1.0], [0.0, 1.0]])
    box = BoxSet(q=np.zeros(2), l=np.ones(2), P=P)
    assert box.contains([0.0, 0.0])
    assert box.contains([2.0, -1.0])  # P(x-q) = (1, -1)
    assert not box.contains([2.0, 0.0])  # P(x-q) = (2, 0)
    with pytest.raises(ValueError):
        BoxSet(q=np.zeros(2), l=np.ones(2), P=np.zeros((2, 2)))
