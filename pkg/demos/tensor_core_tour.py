"""
A tour of the numpy tensor core
===============================

Reverse-mode gradients on a tape, convolutions, and the finite-difference
check that keeps every backward rule honest.
"""

import numpy as np

from ssgan.core import GradientTape, Tensor, backward, conv2d, conv2d_transpose, finite_diff_check, ops
from ssgan.gradsuite import run_gradient_suite

# record a small computation and ask for the gradient of its sum of squares
tape = GradientTape()
theta = tape.watch(np.array([[1.0, -2.0, 3.0]]), "theta")
loss = ops.total(ops.square(theta))
print("d/dtheta sum(theta^2) =", backward(tape, loss)["theta"])

# a 3x3 kernel over a 5x5 image, stride 2 and padding 1 give 3x3
rng = np.random.default_rng(0)
x = rng.normal(size=(1, 2, 5, 5))
k = rng.normal(size=(4, 2, 3, 3))
y = conv2d(x, k, np.zeros(4), stride=2, padding=1)
print("conv2d", x.shape, "->", y.shape)

# the transposed convolution is its adjoint: <conv(a), b> == <a, conv_t(b)>
b = rng.normal(size=y.shape)
lhs = float((y.data * b).sum())
rhs = float((x * conv2d_transpose(b, k, np.zeros(2), stride=2, padding=1).data).sum())
print(f"adjoint gap {abs(lhs - rhs):.2e}")

# tape gradients against central differences for a tanh layer
w = rng.normal(size=(1, 2, 4, 4))
err = finite_diff_check(lambda p: ops.total(ops.mul(ops.tanh(p["x"]), Tensor(w))), {"x": rng.normal(size=w.shape)})
print(f"tanh worst relative error {err:.1e}")

# the full suite covers every op, the four losses and a reduced G+D stack
for result in run_gradient_suite():
    print(f"{result.name:45s} {result.error:.1e} {'ok' if result.passed else 'FAIL'}")
