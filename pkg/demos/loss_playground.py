"""A guided tour of the loss family on tiny hand-checkable fixtures.

Run:  python3 demos/loss_playground.py
"""

import numpy as np

from cipbench.losses import (
    CenterlineBank,
    LabeledBatch,
    LossConfig,
    cip_forward,
    cluster_forward,
    cluster_forward_unclipped,
    cluster_grad_feature,
    cluster_grad_feature_origin,
    normalized_weight_gradient,
    ortho_forward,
    ortho_grad_centerline,
)

np.set_printoptions(precision=4, suppress=True)

# Two classes in the plane. Class 1 features should live on the x axis,
# class 2 on the y axis; the bank carries one direction per class.
bank = CenterlineBank(np.array([[2.0, 0.0], [0.0, 2.0]]))
batch = LabeledBatch(
    np.array([[1.5, 0.2], [1.0, -0.1], [0.3, 2.0]]),
    np.array([1, 1, 2]),
)

print("pull term (clipped):   ", cluster_forward(batch, bank, d=2.0))
print("pull term (literal):   ", cluster_forward_unclipped(batch, bank, d=2.0))
print("push term:             ", ortho_forward(batch, bank))
print("combined, lambda=1:    ", cip_forward(batch, bank, LossConfig(lam=1.0, d=2.0)))

# The pull gradient is clipped so a feature on the wrong side of its
# centerline gets a bounded nudge. The unclipped original explodes as the
# inner product approaches -d.
c = np.array([1.0, 0.0])
print("\n  f.c      surrogate         unclipped original")
for x in (3.0, 0.0, -1.0, -1.9, -1.999):
    f = np.array([x, 0.0])
    s = cluster_grad_feature(f, c, d=2.0)
    try:
        o = cluster_grad_feature_origin(f, c, d=2.0)
        otxt = str(o)
    except ValueError as e:
        otxt = f"<{e}>"
    print(f"  {x:6.3f}  {s}  {otxt}")

# The averaged centerline push: one violator moves the centerline by half
# its vector, many violators by (roughly) their mean.
violators = LabeledBatch(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([2, 2]))
tilted = CenterlineBank(np.array([[1.0, 1.0], [0.0, -1.0]]))
print("\naveraged push on a centerline with 2 violators:",
      ortho_grad_centerline(violators, tilted, 1))

# Why the losses avoid weight normalization: the normalized-weight gradient
# scales as 1/|w|, so a small weight vector produces a huge update.
print("\nnormalized-weight gradient norm as |w| shrinks (f fixed):")
f = np.array([0.0, 1.0])
for scale in (1.0, 0.1, 0.01):
    w = np.array([scale, 0.0])
    print(f"  |w|={scale:5.2f}  ->  |grad| = {np.linalg.norm(normalized_weight_gradient(w, f)):.1f}")
print("(the plain inner-product gradient is just f, no matter how small w is)")
