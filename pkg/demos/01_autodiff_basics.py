"""
Reverse-mode autodiff on numpy arrays
=====================================

The networks in this package are built from a handful of differentiable
operations. This script builds a tiny graph, runs it backwards and checks
the result against central finite differences. It then takes a few Adam
steps.
"""

# %%
# A dense layer followed by tanh and a cross-entropy loss.
import numpy as np

from learnphy import autodiff as ad

rng = np.random.default_rng(0)
W = ad.parameter(rng.normal(size=(4, 3)))
b = ad.parameter(np.zeros(3))
x = ad.constant(rng.normal(size=(5, 4)))
labels = ad.one_hot([0, 1, 2, 1, 0], 3)


def loss():
    return ad.softmax_cross_entropy(ad.tanh(ad.dense(x, W, b)), labels)


L = loss()
L.backward()
print("loss", float(L.data))
print("dL/db", b.grad)

# %%
# The built-in checker perturbs every entry by +/- 1e-5 and compares.
params = ad.ParamSet(W=W, b=b)
report = ad.finite_difference_check(loss, params)
print(f"max relative error {report.max_rel_error:.2e} over {report.checked} entries, passed={report.passed}")

# %%
# With all-zero logits the loss is exactly ln(number of classes).
zero = ad.softmax_cross_entropy(ad.constant(np.zeros((1, 256))), ad.one_hot([3], 256))
print("uniform 256-way cross entropy", float(zero.data), "ln 256 =", np.log(256))

# %%
# A few optimizer steps drive the loss down.
opt = ad.AdamState(learning_rate=0.1)
for step in range(50):
    params.zero_grad()
    L = loss()
    L.backward()
    ad.adam_step(params, opt)
print("loss after 50 Adam steps", float(loss().data))
