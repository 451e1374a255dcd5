"""Dense networks with hand-written reverse mode, and Adam.

Layers compute ``x @ W + b``; parameters are kept as a flat list
``[W0, b0, W1, b1, ...]`` so optimizers and soft updates can treat every model
the same way.
"""
import numpy as np

from sparsepde.errors import ConfigError, DivergenceError

ACTIVATIONS = ("relu", "tanh", "identity")


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, y, g):
    if name == "relu":
        return g * (z > 0.0)
    if name == "tanh":
        return g * (1.0 - y * y)
    return g


class GradientTape:
    """Activations of one forward pass; consumed by exactly one backward."""

    __slots__ = ("inputs", "pre", "outputs", "used")

    def __init__(self):
        self.inputs = []
        self.pre = []
        self.outputs = []
        self.used = False


class Mlp:
    def __init__(self, sizes, hidden="relu", output="identity", rng=None, params=None):
        self.sizes = tuple(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ConfigError("an MLP needs at least an input and an output size")
        self.hidden = hidden
        self.output = output
        self.activations = tuple([hidden] * (len(self.sizes) - 2) + [output])
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}")
        if params is not None:
            self.params = [np.array(p, dtype=np.float64) for p in params]
            self._check_shapes()
        else:
            rng = rng if rng is not None else np.random.default_rng()
            self.params = []
            for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                self.params.append(rng.uniform(-bound, bound, size=fan_out))

    def _check_shapes(self):
        want = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            want += [(fan_in, fan_out), (fan_out,)]
        got = [p.shape for p in self.params]
        if got != want:
            raise ConfigError(f"parameter shapes {got} do not match layer sizes {self.sizes}")

    @property
    def n_layers(self):
        return len(self.sizes) - 1

    def copy(self):
        return Mlp(self.sizes, self.hidden, self.output, params=[p.copy() for p in self.params])

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.sizes[0]:
            raise ConfigError(f"expected input of shape (B, {self.sizes[0]}), got {x.shape}")
        tape = GradientTape()
        h = x
        for i, act in enumerate(self.activations):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            z = h @ W + b
            y = _act(act, z)
            tape.inputs.append(h)
            tape.pre.append(z)
            tape.outputs.append(y)
            h = y
        return h, tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape, upstream, param_grads=True):
        """Parameter gradients (same layout as ``params``) and d/d(input).

        With ``param_grads=False`` only the input gradient is formed and the
        first element of the result is None.
        """
        if tape.used:
            raise RuntimeError("gradient tape already consumed")
        tape.used = True
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != tape.outputs[-1].shape:
            raise ConfigError(f"upstream shape {g.shape} != output shape {tape.outputs[-1].shape}")
        grads = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            g = _act_grad(self.activations[i], tape.pre[i], tape.outputs[i], g)
            if param_grads:
                grads[2 * i] = tape.inputs[i].T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return (grads if param_grads else None), g


def forward(net, x):
    return net.forward(x)


def backward(net, tape, upstream):
    return net.backward(tape, upstream)


class Adam:
    """Bias-corrected Adam over a list of arrays, updated in place."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        if len(params) != len(self.m):
            raise ConfigError("parameter list does not match optimizer state")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise DivergenceError(
                    f"non-finite gradient at optimizer step {self.t + 1} "
                    f"(max |g| = {np.nanmax(np.abs(g)):g})"
                )
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self):
        return self.m + self.v

    def load_state_arrays(self, arrays, t):
        n = len(self.m)
        self.m = [np.array(a) for a in arrays[:n]]
        self.v = [np.array(a) for a in arrays[n:]]
        self.t = int(t)


def adam_step(params, grads, state):
    state.step(params, grads)
    return params, state
