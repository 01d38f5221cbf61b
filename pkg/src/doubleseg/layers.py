"""Parameterized building blocks on top of the autodiff core.

A `Layer` tracks the tensors and sub-layers assigned to its attributes, in
creation order, which makes parameter naming, checkpointing and weight
initialization deterministic.  Initialization is fan-in-scaled uniform for
conv kernels, zeros for biases, and gamma=1/beta=0 for norm layers; there is
no pretrained-weight loading anywhere in this package.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = float(np.sqrt(6.0 / max(fan_in, 1)))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Layer:
    """Base class: attribute assignment registers params, buffers, children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_buffers", {})

    def __setattr__(self, name, value):
        if isinstance(value, T.Tensor):
            self._params[name] = value
        elif isinstance(value, Layer):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, array: np.ndarray):
        self._buffers[name] = array
        object.__setattr__(self, name, array)

    def named_params(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_params(prefix + name + ".")

    def named_buffers(self, prefix: str = ""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def params(self):
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return sum(p.data.size for p in self.params())

    def zero_grads(self):
        for p in self.params():
            p.zero_grad()

    def set_training(self, flag: bool):
        for child in self._children.values():
            child.set_training(flag)

    def state_arrays(self, prefix: str = "") -> dict:
        """Params and buffers as one flat name -> array mapping."""
        out = {name: p.data for name, p in self.named_params(prefix)}
        out.update(self.named_buffers(prefix))
        return out

    def load_state_arrays(self, state: dict, prefix: str = ""):
        for name, p in self.named_params(prefix):
            arr = np.asarray(state[name], dtype=p.data.dtype).reshape(p.data.shape)
            p.data = arr.copy()
        for name, b in self.named_buffers(prefix):
            arr = np.asarray(state[name], dtype=b.dtype).reshape(b.shape)
            b[...] = arr


class LayerList(Layer):
    def __init__(self, layers=()):
        super().__init__()
        self._items = []
        for layer in layers:
            self.append(layer)

    def append(self, layer: Layer):
        setattr(self, str(len(self._items)), layer)
        self._items.append(layer)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Conv2d(Layer):
    def __init__(self, rng, cin, cout, k, stride=1, pad=None, dilation=1,
                 groups=1, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = (dilation * (k - 1)) // 2 if pad is None else pad
        self.dilation = dilation
        self.groups = groups
        fan_in = (cin // groups) * k * k
        self.w = T.Tensor(he_uniform(rng, (cout, cin // groups, k, k), fan_in),
                          requires_grad=True)
        self.b = (T.Tensor(np.zeros((1, cout, 1, 1), dtype=np.float32),
                           requires_grad=True) if bias else None)

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad,
                        dilation=self.dilation, groups=self.groups)


class ConvTranspose2d(Layer):
    def __init__(self, rng, cin, cout, k, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride = stride
        self.pad = pad
        self.w = T.Tensor(he_uniform(rng, (cin, cout, k, k), cin * k * k),
                          requires_grad=True)
        self.b = (T.Tensor(np.zeros((1, cout, 1, 1), dtype=np.float32),
                           requires_grad=True) if bias else None)

    def __call__(self, x):
        return T.conv_transpose2d(x, self.w, self.b, stride=self.stride,
                                  pad=self.pad)


class BatchNorm2d(Layer):
    def __init__(self, c, momentum=0.1, epsilon=1e-5):
        super().__init__()
        self.momentum = momentum
        self.epsilon = epsilon
        self.training = True
        self.gamma = T.Tensor(np.ones((1, c, 1, 1), dtype=np.float32),
                              requires_grad=True)
        self.beta = T.Tensor(np.zeros((1, c, 1, 1), dtype=np.float32),
                             requires_grad=True)
        self.register_buffer("running_mean", np.zeros((1, c, 1, 1), dtype=np.float32))
        self.register_buffer("running_var", np.ones((1, c, 1, 1), dtype=np.float32))

    def set_training(self, flag: bool):
        self.training = flag

    def __call__(self, x):
        return T.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                             self.running_var, training=self.training,
                             momentum=self.momentum, epsilon=self.epsilon)


class ConvNormRelu(Layer):
    """conv -> batchnorm -> relu, the workhorse of every block here."""

    def __init__(self, rng, cin, cout, k=3, stride=1, pad=None, dilation=1,
                 groups=1, act=True):
        super().__init__()
        self.conv = Conv2d(rng, cin, cout, k, stride=stride, pad=pad,
                           dilation=dilation, groups=groups, bias=False)
        self.norm = BatchNorm2d(cout)
        self.act = act

    def __call__(self, x):
        out = self.norm(self.conv(x))
        return T.relu(out) if self.act else out
