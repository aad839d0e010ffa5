"""A short tour of the tensor core: build a graph, differentiate it, check it numerically."""

import numpy as np

from ccsa import autodiff as ad
from ccsa.autodiff import Tensor, backward, grad_check

# %% A tiny two-layer network on four points
rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)))
w1 = Tensor(rng.normal(size=(3, 5)))
w2 = Tensor(rng.normal(size=(5, 2)))
probs = ad.softmax(ad.matmul(ad.relu(ad.matmul(x, w1)), w2))
print("class probabilities\n", probs.data.round(3))

# %% Reverse mode: one backward pass gives the gradient for every leaf
labels = np.array([0, 1, 1, 0])
loss = ad.scale(ad.mean(ad.log(ad.pick(probs, labels))), -1.0)
g1, g2 = backward(loss, [w1, w2])
print("loss", loss.item(), "| grad norms", np.linalg.norm(g1).round(4), np.linalg.norm(g2).round(4))

# %% Central differences agree with the analytic gradient
def network_loss(a, b):
    p = ad.softmax(ad.matmul(ad.relu(ad.matmul(x, a)), b))
    return ad.scale(ad.mean(ad.log(ad.pick(p, labels))), -1.0)

print("max relative error", grad_check(network_loss, [w1.data, w2.data]))

# %% Convolution and pooling on a 6x6 image
img = Tensor(rng.random((1, 1, 6, 6)))
kernel = Tensor(np.ones((1, 1, 3, 3)) / 9)
pooled = ad.maxpool2d(ad.conv2d(img, kernel))
print("3x3 box filter then 2x2 max-pool:", pooled.shape)
