"""
Integrated Gradients on a function you can integrate by hand
=============================================================

Before touching a transformer, run the path integral on a small quadratic
whose exact attribution is known, and watch the midpoint rule converge.
"""

import numpy as np
import torch

from hatescope.attribution import path_alphas, path_integrated_gradients

# F(x) = sum_i a_i x_i^2 has gradient 2 a x, so along x(t) = b + t (x - b)
# the exact attribution of coordinate i is a_i (x_i^2 - b_i^2).
a = torch.tensor([1.0, -2.0, 0.5], dtype=torch.float64)
x = torch.tensor([1.0, 2.0, -3.0], dtype=torch.float64)
b = torch.zeros(3, dtype=torch.float64)
exact = a * (x**2 - b**2)


def grad(points):
    return 2 * a * points


# The midpoint rule is exact for integrands linear in t, and a quadratic F has
# a linear gradient along the path, so even one step is exact here.
for n in (1, 4, 50):
    attr = path_integrated_gradients(grad, x, b, steps=n)
    print(n, attr.numpy(), float((attr - exact).abs().max()))

# A cubic is not that forgiving: the error of the midpoint rule shrinks as 1/n^2.
cubic_exact = a * (x**3 - b**3)
print("\nsteps  max error")
for n in (1, 2, 4, 8, 16, 32):
    attr = path_integrated_gradients(lambda p: 3 * a * p**2, x, b, steps=n)
    print(f"{n:5d}  {float((attr - cubic_exact).abs().max()):.2e}")

# the sample points themselves
print("\nmidpoints for n=4:", path_alphas(4))
print("left Riemann points:", path_alphas(4, "left-riemann"))
print("sums of attributions equal F(x) - F(b):", np.isclose(float(exact.sum()), float((a * x**2).sum())))
