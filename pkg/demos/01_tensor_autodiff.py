"""Tour of the tensor core: ops, tape-based gradients, finite-difference check.

Run: python demos/01_tensor_autodiff.py
"""

import numpy as np

from voxswin import tensor as tt
from voxswin.tensor import Parameter, Tensor

print("== building blocks ==")
a = Tensor([[1.0, 2.0], [3.0, 4.0]])
b = Tensor(np.eye(2))
print("a @ I =\n", (a @ b).data)

x = Tensor([0.0, np.log(3.0)])
print("softmax([0, ln 3]) =", tt.softmax(x).data, " (closed form: [0.25, 0.75])")

g = Tensor(np.ones(3))
z = Tensor(np.zeros(3))
print("layer_norm([1,2,3]) =", tt.layer_norm(Tensor([1.0, 2.0, 3.0]), g, z).data)

print("\n== reverse-mode gradients ==")
w = Parameter("w", np.random.default_rng(0).standard_normal((4, 4)) * 0.5)
v = Tensor(np.random.default_rng(1).standard_normal((2, 4)))
loss = (tt.softmax(v @ w, axis=-1) * np.arange(4.0)).sum()
loss.backward()
print("loss =", loss.item())
print("grad shape:", w.grad.shape, " grad[0] =", w.grad[0].round(4))

print("\n== gradient vs central finite differences ==")


def loss_value():
    e = np.exp(v.data @ w.data - (v.data @ w.data).max(-1, keepdims=True))
    return float(((e / e.sum(-1, keepdims=True)) * np.arange(4.0)).sum())


step = 1e-6
worst = 0.0
for i in range(4):
    for j in range(4):
        orig = w.data[i, j]
        w.data[i, j] = orig + step
        fp = loss_value()
        w.data[i, j] = orig - step
        fm = loss_value()
        w.data[i, j] = orig
        fd = (fp - fm) / (2 * step)
        worst = max(worst, abs(fd - w.grad[i, j]))
print(f"max |fd - analytic| over all 16 entries: {worst:.2e}")

print("\n== gradients accumulate until zero_grad ==")
p = Parameter("p", np.ones(3))
p.sum().backward()
p.sum().backward()
print("after two backwards:", p.grad, "(sums)")
p.zero_grad()
p.sum().backward()
print("after reset:", p.grad)
