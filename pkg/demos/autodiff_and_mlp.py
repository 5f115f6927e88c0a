"""Tensors, gradients and a small image classifier trained by hand."""

import numpy as np

import gradpipe as gp
from gradpipe import nn
from gradpipe.data import batch_iter, synth_images
from gradpipe.optim import AdamW

# a scalar graph: y = w * x, so dy/dw is x
x = gp.Tensor(1.0)
w = gp.Tensor(2.0, requires_grad=True)
y = w * x
y.backward()
print("dy/dw =", w.grad.item())

# gradients accumulate across shared subexpressions
a = gp.Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
b = a * a
(b + b).sum().backward()
print("d/da sum(2 a^2) =", a.grad.data)

# the 784 -> 100 -> 200 -> 10 network
net = nn.mlp(784, (100, 200), 10)
print(net)
print("parameters:", net.parameter_count())

task = synth_images(600, (1, 28, 28), k=10, rng=gp.RngState(0))
opt = AdamW(list(net.named_parameters()), lr=1e-3)
rng = gp.RngState(1)

for epoch in range(3):
    net.train()
    losses = []
    for batch in batch_iter(task, 64, shuffle=True, rng=rng, ingress={"image": ("lazy", ("image",))}):
        xb = gp.Tensor(batch.x["image"].reshape(len(batch), -1))
        loss = nn.cross_entropy(net(xb), batch.y)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    print(f"epoch {epoch + 1}: mean loss {np.mean(losses):.4f}")

net.eval()
with gp.no_grad():
    xs = np.stack(task.columns["image"].materialize()).reshape(task.nrow, -1)
    pred = net(gp.Tensor(xs)).data.argmax(axis=1)
print("training accuracy:", (pred == task.truth()).mean())
