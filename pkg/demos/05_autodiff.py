"""Gradients, and gradients of gradients.

The engine records operations on a tape. Asking for ``higher_order=True``
records the backward pass too, which is what lets an outer loop
differentiate through an inner gradient step.
"""

import numpy as np

from urtf import autodiff as ad
from urtf.checks import quadratic_maml_error, run_suite

x = ad.tensor(np.array([[1.0, 2.0, 3.0]]))
w = ad.tensor(np.array([[0.5], [-1.0], [2.0]]))
loss = ad.sum(ad.exp(ad.matmul(x, w)))
gx, gw = ad.grad(loss, [x, w])
print("loss   :", loss.item())
print("d/dx   :", gx.data.ravel())
print("d/dw   :", gw.data.ravel())

# One inner step, then differentiate the post-step loss through that step.
start = ad.tensor(np.array([1.0, -0.5]))
a = ad.constant(np.array([2.0, 3.0]))


def inner(p):
    return ad.sum(ad.mul(ad.mul(p, p), a))


alpha = 0.1
(g,) = ad.grad(inner(start), [start], higher_order=True)
adapted = ad.sub(start, ad.scale(g, alpha))
(meta_g,) = ad.grad(inner(adapted), [start])
closed = 2 * a.data * (1 - 2 * alpha * a.data) ** 2 * start.data
print("\nthrough-the-step gradient:", meta_g.data, " closed form:", closed)

print("\nquadratic check error:", quadratic_maml_error())
for r in run_suite():
    print(f"{'ok  ' if r.passed else 'FAIL'} {r.name:40} {r.error:.1e}")
