"""Tour of the reverse-mode tensor engine.

Builds a few small graphs, runs backward, and audits the analytic gradients
against central finite differences.
"""

import numpy as np

import embrank.autodiff as ad
from embrank.autodiff import backward
from embrank.gradcheck import finite_diff_check, format_reports

rng = np.random.default_rng(0)

print("== basic ops record a tape ==")
x = ad.param(rng.normal(size=(3, 4)))
w = ad.param(rng.normal(size=(4, 2)))
y = ad.silu(ad.matmul(x, w))
loss = y.sum()
print(f"x{x.shape} @ w{w.shape} -> silu -> sum = {loss.item():.4f}")

backward(loss)
print(f"grad shapes: x {x.grad.shape}, w {w.grad.shape}")
print(f"|dL/dx| max = {np.abs(x.grad).max():.4f}")

print("\n== gradients accumulate over fan-out ==")
v = ad.param([1.0, 2.0, 3.0])
backward(ad.add(v.sum(), ad.mul(v, v).sum()))  # v used on two paths
print(f"d(sum(v) + sum(v*v))/dv = {v.grad}  (expected 1 + 2v)")

print("\n== cosine similarity is scale-invariant and differentiable ==")
a = ad.param(rng.normal(size=5))
b = ad.param(rng.normal(size=5))
s = ad.cosine_sim(a, b)
print(f"cos(a, b) = {s.item():+.5f}")
print(f"cos(3a, b) = {ad.cosine_sim(ad.mul(a, 3.0), b).item():+.5f} (same)")

print("\n== finite-difference audit ==")
reports = [
    finite_diff_check(lambda t: ad.sum_all(ad.softmax_rows(t)), ad.param(rng.normal(size=(2, 5))),
                      name="softmax_rows"),
    finite_diff_check(lambda t: ad.cosine_sim(t, b), a, name="cosine_sim"),
    finite_diff_check(lambda t: ad.sum_all(ad.rms_norm(t, ad.tensor(np.ones(4)), 1e-6)),
                      ad.param(rng.normal(size=(3, 4))), name="rms_norm"),
]
print(format_reports(reports))
