import numpy as np
import pytest

from panodepth import autodiff as ad
from panodepth.autodiff import Tape, Tensor
from panodepth.errors import InvalidInputError, NonFiniteError, UsageError
from panodepth.gradcheck import OP_CASES, injected_fault, run_case


def grads_of(f, *arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = f(*leaves)
    tape.backward(out)
    return [t.grad for t in leaves]


class TestExamples:
    def test_product_rule(self):
        gx, gy = grads_of(lambda x, y: x * y, 3.0, 4.0)
        assert gx == 4.0 and gy == 3.0

    def test_atan2(self):
        gy, gx = grads_of(ad.atan2, 1.0, 1.0)
        assert gy == pytest.approx(0.5, abs=1e-15)
        assert gx == pytest.approx(-0.5, abs=1e-15)

    def test_forward_values_match_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0.5, 2, 10), rng.uniform(0.5, 2, 10)
        ta, tb = Tensor(a), Tensor(b)
        np.testing.assert_allclose(ad.atan2(ta, tb).data, np.arctan2(a, b), rtol=1e-12)
        np.testing.assert_allclose(ad.sqrt(ta).data, np.sqrt(a), rtol=1e-12)
        np.testing.assert_allclose((ta / tb).data, a / b, rtol=1e-12)
        np.testing.assert_allclose(ad.softmax_rows(Tensor(a.reshape(2, 5))).data.sum(axis=1), 1, atol=1e-12)

    def test_smoothed_abs_is_zero_at_zero(self):
        assert ad.abs(Tensor(0.0)).item() == 0.0
        assert ad.abs(Tensor(-0.3)).item() == pytest.approx(0.3, abs=1e-6)

    def test_clamp_boundary_counts_inside(self):
        (g,) = grads_of(lambda x: ad.clamp(x, 0.0, 1.0).sum(), np.array([0.0, 1.0, 1.5, -1.0, 0.5]))
        np.testing.assert_array_equal(g, [1, 1, 0, 0, 1])


class TestTape:
    def test_backward_off_tape(self):
        with pytest.raises(UsageError):
            Tensor(1.0).backward()

    def test_backward_on_wrong_tape(self):
        x = Tensor(2.0, requires_grad=True)
        with Tape():
            y = x * x
        with pytest.raises(UsageError):
            Tape().backward(y)

    def test_no_grad_inputs_get_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        c = Tensor(np.full(3, 2.0))
        with Tape() as tape:
            out = (x * c).sum()
        tape.backward(out)
        assert c.grad is None
        np.testing.assert_array_equal(x.grad, [2, 2, 2])

    def test_unrecorded_outside_tape(self):
        x = Tensor(2.0, requires_grad=True)
        y = x * x
        assert y._tape is None

    def test_accumulates_over_reuse(self):
        (g,) = grads_of(lambda x: x * x + x * x + x, 3.0)
        assert g == 13.0

    def test_branch_order_independent(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(4, 5))

        def f1(x):
            return ad.sin(x).sum() + ad.exp(x).mean() + (x * x).sum()

        def f2(x):
            return (x * x).sum() + ad.exp(x).mean() + ad.sin(x).sum()

        (g1,) = grads_of(f1, a)
        (g2,) = grads_of(f2, a)
        assert np.max(np.abs(g1 - g2)) < 1e-12

    def test_broadcast_gradient_reduced(self):
        (g, _) = grads_of(lambda s, m: (s * m).sum(), 2.0, np.ones((3, 4)))
        assert g == 12.0

    def test_non_finite_trips(self):
        with pytest.raises(NonFiniteError):
            ad.log(Tensor(-1.0))

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))
        with pytest.raises(InvalidInputError):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestGradCheck:
    def test_quadratic(self):
        x = np.random.default_rng(2).normal(size=(2, 2))
        report = ad.grad_check(lambda t: (t * t).sum(), [x])
        assert report.passed and report.max_error < 1e-8

    def test_non_scalar_rejected(self):
        with pytest.raises(UsageError):
            ad.grad_check(lambda t: t * t, [np.ones(3)])

    def test_step_range(self):
        with pytest.raises(InvalidInputError):
            ad.grad_check(lambda t: t.sum(), [np.ones(3)], h=1e-2)

    def test_mutation_detected(self):
        x = np.random.default_rng(3).normal(size=(3, 4))
        with injected_fault("sin"):
            report = ad.grad_check(lambda t: ad.sin(t).sum(), [x])
        assert not report.passed

    @pytest.mark.parametrize("name", sorted(OP_CASES))
    def test_every_op(self, name):
        reports = run_case(name, instances=20)
        worst = max(r.max_error for r in reports)
        assert all(r.passed for r in reports), f"{name}: {worst:.3g}"


class TestSampling:
    def test_splat_gather_adjoint(self):
        rng = np.random.default_rng(4)
        v, u = rng.normal(size=(2, 4, 8)), rng.normal(size=(2, 4, 8))
        tx, ty = rng.uniform(-5, 12, (4, 8)), rng.uniform(-1, 4, (4, 8))
        lhs = np.sum(ad.bilinear_splat(Tensor(v), tx, ty).data * u)
        rhs = np.sum(v * ad.bilinear_gather(Tensor(u), tx, ty).data)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_splat_conserves_mass(self):
        rng = np.random.default_rng(5)
        v = rng.uniform(size=(1, 4, 8))
        out = ad.bilinear_splat(Tensor(v), rng.uniform(-20, 20, (4, 8)), rng.uniform(0, 3, (4, 8)))
        assert out.data.sum() == pytest.approx(v.sum(), rel=1e-12)

    def test_integer_coordinates_copy(self):
        rng = np.random.default_rng(6)
        v = rng.normal(size=(3, 4, 8))
        ys, xs = np.mgrid[0:4, 0:8].astype(float)
        np.testing.assert_allclose(ad.bilinear_gather(Tensor(v), xs, ys).data, v, atol=1e-15)
        np.testing.assert_allclose(ad.bilinear_splat(Tensor(v), xs, ys).data, v, atol=1e-15)

    def test_wraps_columns(self):
        v = np.zeros((1, 2, 4))
        v[0, 0, 0] = 1.0
        out = ad.bilinear_splat(Tensor(v), np.full((2, 4), 3.5), np.zeros((2, 4))).data
        np.testing.assert_allclose(out[0, 0], [0.5, 0, 0, 0.5])
