import numpy as np
import pytest

from resguide import checks
from resguide.autograd import Variable
from resguide.ops import leaky_relu, mean

REQUIRED_OPS = ["conv2d 3x3", "conv2d 1x1", "leaky_relu", "concat", "residual_add", "ssim", "mse_loss",
                "ssim_loss", "block_loss", "total_loss"]


def test_op_tier_covers_every_differentiable_op():
    names = [c[0] for c in checks.op_cases(0)]
    for op in REQUIRED_OPS:
        assert op in names


@pytest.mark.parametrize("build", [checks.op_cases, checks.block_cases, checks.full_cases])
def test_cases_run_in_double_precision(build):
    for name, f, params, eps in build(1):
        assert all(p.value.dtype == np.float64 for p in params), name
        assert f().value.dtype == np.float64
        assert 1e-7 <= eps <= 1e-4


@pytest.mark.parametrize("build", [checks.block_cases, checks.full_cases])
@pytest.mark.parametrize("seed", [0, 6])
def test_network_cases_keep_clear_of_kinks(build, seed):
    for name, f, _, eps in build(seed):
        assert checks.kink_margin(f) >= checks.KINK_FACTOR * eps, name


def test_kink_margin_measures_leaky_relu_inputs():
    x = Variable(np.array([[[[-0.5, 0.003, 2.0]]]]))
    assert checks.kink_margin(lambda: mean(leaky_relu(x))) == pytest.approx(0.003)
    assert checks.kink_margin(lambda: mean(x)) == np.inf


def test_cases_are_seed_deterministic():
    a = checks.full_cases(3)[0]
    b = checks.full_cases(3)[0]
    assert a[1]().value == b[1]().value


def test_run_level_tiers():
    assert [r.name for r in checks.run_level("ops")] == [c[0] for c in checks.op_cases(0)]
    with pytest.raises(ValueError):
        checks.run_level("everything")


def test_block_tier_passes_for_several_seeds():
    for seed in (0, 1):
        for r in checks.run_level("blocks", seed)[-3:]:
            assert r.passed, (seed, r)


def test_format_table():
    rows = [checks.CheckResult("a", 1e-7, 1e-5, 10, 0.1), checks.CheckResult("long name", 2e-5, 1e-5, 3, 0.1)]
    lines = checks.format_table(rows).splitlines()
    assert lines[0].split() == ["check", "entries", "max", "rel", "err", "tol", "result"]
    assert lines[1].endswith("PASS") and lines[2].endswith("FAIL")
