# %% [markdown]
# The small autodiff engine behind the models: dilated causal convolution,
# a gradient check against finite differences, and Adam on a toy problem.

# %%
import numpy as np

from smarthome_ad.tensor import Adam, Conv1dParams, Tensor, backward, conv1d, mse_loss, relu, tensor_sum

x = Tensor(np.array([[1.0], [0.0], [0.0], [2.0]]))
taps = Conv1dParams(Tensor(np.ones((2, 1, 1))), Tensor(np.zeros(1)), dilation=2, padding="causal")
print(conv1d(x, taps).data.ravel())   # [1, 0, 1, 2]: each output sees t and t-2 only

# %%
rng = np.random.default_rng(0)
layer = Conv1dParams.create(3, 2, 2, dilation=2, rng=rng)
inp = Tensor(rng.uniform(-1, 1, (9, 2)), requires_grad=True)
target = rng.uniform(-1, 1, (9, 2))
backward(mse_loss(relu(conv1d(inp, layer)), target))

h = 1e-5
w = layer.weight.data
numeric = np.zeros_like(w)
for idx in np.ndindex(w.shape):
    old = w[idx]
    w[idx] = old + h
    up = mse_loss(relu(conv1d(inp.detach(), layer)), target).item()
    w[idx] = old - h
    down = mse_loss(relu(conv1d(inp.detach(), layer)), target).item()
    w[idx] = old
    numeric[idx] = (up - down) / (2 * h)
print("max |analytic - numeric|:", np.abs(layer.weight.grad - numeric).max())

# %%
p = Tensor(np.array([3.0, -4.0]), requires_grad=True)
opt = Adam([p], lr=0.1)
for step in range(300):
    opt.zero_grad()
    backward(tensor_sum(p * p))
    opt.step()
print(p.data)
