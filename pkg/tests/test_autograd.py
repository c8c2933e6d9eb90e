import numpy as np
import pytest

from resguide.autograd import (ContractError, Tape, Variable, backward, detach, grad_check, rel_error,
                               zero_grads)
from resguide.ops import ConvParams, add, conv2d, mean, mul, scale


def param(shape, seed=0, name="p"):
    return Variable(np.random.default_rng(seed).standard_normal(shape), requires_grad=True, name=name)


def test_mean_grad_is_uniform():
    x = Variable(np.arange(4.0).reshape(1, 1, 2, 2), requires_grad=True)
    backward(mean(x))
    assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 0.25))


def test_sum_rule():
    x = param((1, 1, 2, 2))
    backward(mean(add(x, x)))
    assert np.array_equal(x.grad, np.full((1, 1, 2, 2), 0.5))


def test_reused_weight_accumulates_both_paths():
    w = param((1, 1, 3, 3), 1, "w")
    x = Variable(np.random.default_rng(2).standard_normal((1, 1, 3, 3)))
    f = lambda: mean(mul(mul(w, x), w))
    backward(f())
    expected = 2 * w.value * x.value / 9
    assert np.allclose(w.grad, expected, rtol=1e-14, atol=0)
    rep = grad_check(f, [w])
    assert rep.passed and rep.max_rel_error < 1e-8


def test_non_scalar_loss_rejected():
    with pytest.raises(ContractError):
        backward(param((1, 1, 2, 2)))


def test_unreachable_params_untouched():
    a, b = param((1, 1, 2, 2), 0, "a"), param((1, 1, 2, 2), 1, "b")
    backward(mean(a))
    assert b.grad is None
    assert a.grad is not None


def test_zero_then_constant_backward():
    a = param((1, 1, 2, 2))
    backward(mean(scale(a, 3.0)))
    zero_grads([a])
    assert np.array_equal(a.grad, np.zeros_like(a.value))
    backward(mean(Variable(np.ones((1, 1, 2, 2)))))
    assert np.array_equal(a.grad, np.zeros_like(a.value))


def test_detach_is_value_equal_and_stops_gradient():
    a = param((1, 1, 2, 2))
    d = detach(a)
    assert np.array_equal(d.value, a.value) and d.parents == () and not d.requires_grad
    backward(mean(add(mul(a, a), mul(d, a))))
    zero = a.grad.copy()
    zero_grads([a])
    # same graph with the detached operand replaced by a constant copy
    backward(mean(add(mul(a, a), mul(Variable(a.value.copy()), a))))
    assert np.array_equal(zero, a.grad)


def test_backward_is_deterministic():
    p = ConvParams.zeros(2, 3, 3, np.float64)
    rng = np.random.default_rng(0)
    p.kernel.value[...] = rng.standard_normal(p.kernel.shape)
    x = Variable(rng.standard_normal((2, 2, 6, 6)), requires_grad=True)
    grads = []
    for _ in range(2):
        zero_grads([x, p.kernel, p.bias])
        backward(mean(mul(conv2d(x, p), conv2d(x, p))))
        grads.append((x.grad.copy(), p.kernel.grad.copy(), p.bias.grad.copy()))
    for a, b in zip(*grads):
        assert np.array_equal(a, b)


def test_gradcheck_linear_is_tight():
    # coefficients of order one keep the difference quotient's roundoff near 1e-10
    w = param((1, 1, 2, 2))
    c = Variable(np.random.default_rng(5).uniform(1, 2, (1, 1, 2, 2)))
    rep = grad_check(lambda: mean(mul(w, c)), [w], eps=1e-6)
    assert rep.max_rel_error < 1e-9


def test_gradcheck_samples_large_params():
    w = param((1, 4, 10, 10))
    rep = grad_check(lambda: mean(mul(w, w)), [w], sample=50)
    assert rep.params[0].entries == 50 and rep.passed


def test_gradcheck_flags_wrong_gradient():
    w = param((1, 1, 2, 2))
    from resguide.autograd import record

    def bad():
        return mean(record(w.value * 2, "bad", (w,), lambda g: (g,)))

    rep = grad_check(bad, [w])
    assert not rep.passed and rep.max_rel_error > 0.1


def test_gradcheck_reports_nonfinite_location():
    w = Variable(np.zeros((1, 1, 1, 2)), requires_grad=True, name="w")
    from resguide.autograd import record

    def f():
        v = w.value
        out = np.where(v.sum() > 0, np.inf, 0.0) * np.ones((1, 1, 1, 1))
        return record(out, "step", (w,), lambda g: (np.zeros_like(v),))

    rep = grad_check(f, [w])
    assert rep.failure is not None and "w(0, 0, 0, 0)" in rep.failure


def test_gradcheck_preconditions():
    w = param((1, 1, 2, 2))
    with pytest.raises(ContractError):
        grad_check(lambda: mean(w), [w], eps=1e-3)
    w32 = Variable(np.zeros((1, 1, 2, 2), np.float32), requires_grad=True)
    with pytest.raises(ContractError):
        grad_check(lambda: mean(w32), [w32])


def test_gradcheck_restores_values():
    w = param((1, 1, 3, 3))
    before = w.value.copy()
    grad_check(lambda: mean(mul(w, w)), [w])
    assert np.array_equal(before, w.value)


def test_rel_error_guard():
    assert rel_error(0.0, 0.0) == 0.0
    assert rel_error(1e-12, 0.0) == pytest.approx(1e-4)
    assert rel_error(2.0, 1.0) == pytest.approx(0.5)


def test_tape_counts_and_accesses():
    a = param((1, 1, 2, 2))
    with Tape() as tape:
        mean(add(a, a))
    assert tape.count() == 2 and tape.count("add") == 1 and tape.count("mean") == 1
    # add(a, a) reads its operand twice
    assert tape.accesses()[a.id] == 2
    tape.reset()
    assert tape.count() == 0


def test_tapes_are_thread_local():
    import threading

    counts = {}

    def work(k):
        with Tape() as t:
            x = param((1, 1, 2, 2), k)
            for _ in range(k):
                x = add(x, x)
        counts[k] = t.count()

    threads = [threading.Thread(target=work, args=(k,)) for k in (3, 7)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counts == {3: 3, 7: 7}
