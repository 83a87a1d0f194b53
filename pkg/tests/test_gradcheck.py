import numpy as np
import pytest

from sdl import checks, ops
from sdl.gradcheck import GradCheckError, gradcheck
from sdl.tensor import Tensor


class TestGradcheck:
    def test_passes_on_correct_rule(self):
        x = Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 2, 4, 4)),
                   requires_grad=True)
        err = gradcheck(lambda: ops.reduce_sum(ops.mul(x, x)), [x])
        assert err < 1e-8

    def test_detects_corrupted_rule(self):
        result = checks.run_negative_control()
        assert result.want_failure
        assert result.error > 1e-1
        assert result.passed

    def test_nan_forward_raises(self):
        x = Tensor(np.full((1, 1, 2, 2), np.nan), requires_grad=True)
        with pytest.raises(GradCheckError, match="non-finite"):
            gradcheck(lambda: ops.reduce_sum(x), [x])


class TestOpChecks:
    def test_all_ops_within_tolerance(self):
        results = checks.run_op_checks(dtype=np.float64, threshold=1e-4)
        names = [r.name for r in results]
        for expected in ("conv2d", "conv2d.stride2", "down2", "up2", "add",
                         "mul", "scalar_mul", "prelu", "relu", "charb_atom",
                         "split_concat", "charbonnier_loss"):
            assert expected in names
        failing = [r.describe() for r in results if not r.passed]
        assert failing == []

    def test_describe_format(self):
        r = checks.CheckResult("demo", 1e-9, 1e-4)
        text = r.describe()
        assert "demo" in text and "ok" in text
