"""Central finite-difference oracle for tape gradients."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError, ContractError, OracleInvalidError
from .prng import Prng
from .tensor import GradientTape, Tensor, backward


def _scalar(t: Tensor) -> float:
    if not isinstance(t, Tensor) or t.data.size != 1:
        raise ContractError("gradient check function must return a one-element tensor")
    return float(t.data.reshape(-1)[0])


def finite_diff_check(fn: Callable[[dict], Tensor], params: dict, epsilon: float = 1e-5,
                      max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Worst relative error between tape gradients and central differences.

    ``fn`` maps a dict of tensors to a scalar tensor. All parameters are
    promoted to float64 for both routes. Per coordinate the error is
    ``|a - n| / max(|a|, |n|, 1e-8)``. With ``max_coords`` set, at most that
    many coordinates per parameter are probed (chosen deterministically).
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ConfigError(f"epsilon must lie in [1e-5, 1e-2], got {epsilon}")
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values: dict) -> float:
        return _scalar(fn({k: Tensor(v) for k, v in values.items()}))

    f0 = evaluate(base)
    if evaluate(base) != f0:
        raise OracleInvalidError("function returned different values for identical inputs")

    tape = GradientTape()
    loss = fn(tape.watch_all(base))
    if loss.tape is not tape:
        raise ContractError("gradient check function did not build its result from the parameters")
    analytic = backward(tape, loss)

    pick = Prng(seed)
    worst = 0.0
    for name, value in base.items():
        flat = value.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(pick.permutation(flat.size)[:max_coords])
        grad = analytic[name].reshape(-1)
        for i in coords:
            keep = flat[i]
            flat[i] = keep + epsilon
            fp = evaluate(base)
            flat[i] = keep - epsilon
            fm = evaluate(base)
            flat[i] = keep
            numeric = (fp - fm) / (2.0 * epsilon)
            a = float(grad[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
