"""The three architectures: flow-activation net, single-hidden-layer net, and
the parameter-matched two-hidden-layer net; exact backprop through the Euler
steps, spectral-norm projection, renormalization, and text serialization.

States are stored row-wise: an input batch has shape (batch, m) and every
affine map applies as X @ A.T + b.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import flow as flowmod
from .errors import ParseError, PreconditionError
from .linalg import TEXT_DIGITS, as_matrix, as_vector, parse_matrix_lines, spectral_norm
from .spectral import StabilizationResult

ARCH_FLOW = "flow"
ARCH_SHALLOW = "shallow"
ARCH_TWO_HIDDEN = "two-hidden"

#: Achieved spectral norm after projection, relative tolerance.
PROJECTION_TOL = 1e-10


@dataclass(frozen=True)
class ShallowFlowNet:
    """x -> A2 @ flow(A1 x + b1) + b2 with the flow map as activation."""

    A1: np.ndarray
    b1: np.ndarray
    ode: flowmod.NeuralOde
    A2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        A1 = as_matrix(self.A1, "A1")
        b1 = as_vector(self.b1, "b1")
        A2 = as_matrix(self.A2, "A2")
        b2 = as_vector(self.b2, "b2")
        d = self.ode.dim
        if A1.shape[0] != d or b1.shape[0] != d:
            raise PreconditionError("first layer must map into the ode dimension")
        if A2.shape[1] != d or b2.shape[0] != A2.shape[0]:
            raise PreconditionError("second layer must map from the ode dimension")
        for name, val in (("A1", A1), ("b1", b1), ("A2", A2), ("b2", b2)):
            object.__setattr__(self, name, val)

    @property
    def dims(self):
        return self.A1.shape[1], self.ode.dim, self.A2.shape[0]


@dataclass(frozen=True)
class ShallowSigmaNet:
    """x -> A2 @ sigma(A1 x + b1) + b2 with a scalar activation."""

    A1: np.ndarray
    b1: np.ndarray
    A2: np.ndarray
    b2: np.ndarray
    activation: flowmod.ActivationSpec

    def __post_init__(self):
        A1 = as_matrix(self.A1, "A1")
        b1 = as_vector(self.b1, "b1")
        A2 = as_matrix(self.A2, "A2")
        b2 = as_vector(self.b2, "b2")
        if A1.shape[0] != b1.shape[0] or A2.shape[1] != A1.shape[0]:
            raise PreconditionError("inconsistent layer dimensions")
        if b2.shape[0] != A2.shape[0]:
            raise PreconditionError("inconsistent output dimensions")
        for name, val in (("A1", A1), ("b1", b1), ("A2", A2), ("b2", b2)):
            object.__setattr__(self, name, val)

    @property
    def dims(self):
        return self.A1.shape[1], self.A1.shape[0], self.A2.shape[0]


@dataclass(frozen=True)
class TwoHiddenNet:
    """x -> A3 sigma(A2 sigma(A1 x + b1) + b2) + b3; widths all equal d."""

    A1: np.ndarray
    b1: np.ndarray
    A2: np.ndarray
    b2: np.ndarray
    A3: np.ndarray
    b3: np.ndarray
    activation: flowmod.ActivationSpec

    def __post_init__(self):
        arrays = {
            "A1": as_matrix(self.A1, "A1"),
            "b1": as_vector(self.b1, "b1"),
            "A2": as_matrix(self.A2, "A2"),
            "b2": as_vector(self.b2, "b2"),
            "A3": as_matrix(self.A3, "A3"),
            "b3": as_vector(self.b3, "b3"),
        }
        d = arrays["A1"].shape[0]
        if arrays["A2"].shape != (d, d) or arrays["A3"].shape[1] != d:
            raise PreconditionError("hidden widths must match the first layer")
        for name, val in arrays.items():
            object.__setattr__(self, name, val)

    @property
    def dims(self):
        return self.A1.shape[1], self.A1.shape[0], self.A3.shape[0]


def _uniform_init(rng, rows, cols):
    scale = 1.0 / np.sqrt(cols)
    return rng.uniform(-scale, scale, size=(rows, cols))


def init_flow_net(m, d, n, activation, euler_steps=20, seed=0):
    """Flow net with fan-in-scaled uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    return ShallowFlowNet(
        A1=_uniform_init(rng, d, m),
        b1=np.zeros(d),
        ode=flowmod.NeuralOde(
            A=_uniform_init(rng, d, d),
            b=np.zeros(d),
            activation=activation,
            euler_steps=euler_steps,
        ),
        A2=_uniform_init(rng, n, d),
        b2=np.zeros(n),
    )


def init_sigma_net(m, d, n, activation, seed=0):
    rng = np.random.default_rng(seed)
    return ShallowSigmaNet(
        A1=_uniform_init(rng, d, m),
        b1=np.zeros(d),
        A2=_uniform_init(rng, n, d),
        b2=np.zeros(n),
        activation=activation,
    )


def matched_two_hidden(m, d, n, activation, seed=0):
    """Two-hidden-layer net with exactly the flow net's parameter count."""
    rng = np.random.default_rng(seed)
    net = TwoHiddenNet(
        A1=_uniform_init(rng, d, m),
        b1=np.zeros(d),
        A2=_uniform_init(rng, d, d),
        b2=np.zeros(d),
        A3=_uniform_init(rng, n, d),
        b3=np.zeros(n),
        activation=activation,
    )
    flow_count = d * m + d + d * d + d + n * d + n
    if param_count(net) != flow_count:
        raise PreconditionError("parameter counts of matched architectures differ")
    return net


def param_count(net):
    return sum(v.size for v in params(net).values())


def params(net):
    """Trainable tensors by name, in serialization order."""
    if isinstance(net, ShallowFlowNet):
        return {
            "A1": net.A1,
            "b1": net.b1,
            "A": net.ode.A,
            "b": net.ode.b,
            "A2": net.A2,
            "b2": net.b2,
        }
    if isinstance(net, ShallowSigmaNet):
        return {"A1": net.A1, "b1": net.b1, "A2": net.A2, "b2": net.b2}
    if isinstance(net, TwoHiddenNet):
        return {
            "A1": net.A1,
            "b1": net.b1,
            "A2": net.A2,
            "b2": net.b2,
            "A3": net.A3,
            "b3": net.b3,
        }
    raise PreconditionError(f"unknown architecture {type(net).__name__}")


def with_params(net, tensors):
    """Copy of the net with tensors replaced by the given name -> array map."""
    if isinstance(net, ShallowFlowNet):
        ode = replace(net.ode, A=tensors["A"], b=tensors["b"])
        return ShallowFlowNet(
            A1=tensors["A1"], b1=tensors["b1"], ode=ode, A2=tensors["A2"], b2=tensors["b2"]
        )
    if isinstance(net, ShallowSigmaNet):
        return replace(net, **{k: tensors[k] for k in ("A1", "b1", "A2", "b2")})
    if isinstance(net, TwoHiddenNet):
        keys = ("A1", "b1", "A2", "b2", "A3", "b3")
        return replace(net, **{k: tensors[k] for k in keys})
    raise PreconditionError(f"unknown architecture {type(net).__name__}")


def arch_name(net):
    return {
        ShallowFlowNet: ARCH_FLOW,
        ShallowSigmaNet: ARCH_SHALLOW,
        TwoHiddenNet: ARCH_TWO_HIDDEN,
    }[type(net)]


def _as_batch(x, m):
    x = np.asarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != m:
        raise PreconditionError(f"input must have trailing dimension {m}")
    return x, squeezed


def forward(net, x):
    """Evaluate the net on a vector or a (batch, m) block."""
    y, _ = forward_cached(net, x)
    return y


def forward_cached(net, x):
    """Forward pass that also returns the cache consumed by ``backward``."""
    m = net.dims[0]
    X, squeezed = _as_batch(x, m)
    cache = {"x": X, "squeezed": squeezed, "net": net}
    if isinstance(net, ShallowFlowNet):
        V = X @ net.A1.T + net.b1
        traj = flowmod.trajectory_states(net.ode, V)
        Y = traj[-1] @ net.A2.T + net.b2
        cache["traj"] = traj
    elif isinstance(net, ShallowSigmaNet):
        P = X @ net.A1.T + net.b1
        H = flowmod.act(net.activation, P)
        Y = H @ net.A2.T + net.b2
        cache.update(P1=P, H1=H)
    else:
        P1 = X @ net.A1.T + net.b1
        H1 = flowmod.act(net.activation, P1)
        P2 = H1 @ net.A2.T + net.b2
        H2 = flowmod.act(net.activation, P2)
        Y = H2 @ net.A3.T + net.b3
        cache.update(P1=P1, H1=H1, P2=P2, H2=H2)
    return (Y[0] if squeezed else Y), cache


@dataclass(frozen=True)
class GradientSet:
    """Parameter gradients (same shapes as ``params``) plus the input gradient."""

    tensors: dict
    d_input: np.ndarray


def _flow_backward(ode, traj, G):
    """Reverse accumulation through the Euler steps.

    ``G`` is dLoss/d(final state), shape (batch, d); returns (dA, db, dU0).
    """
    h = 1.0 / ode.euler_steps
    dA = np.zeros_like(ode.A)
    db = np.zeros_like(ode.b)
    for k in range(ode.euler_steps - 1, -1, -1):
        U = traj[k]
        S = flowmod.act_deriv(ode.activation, U @ ode.A.T + ode.b)
        W = h * (G * S)
        dA += W.T @ U
        db += W.sum(axis=0)
        G = G + W @ ode.A
    return dA, db, G


def backward(net, cache, upstream):
    """Exact gradients of the (Euler-discretized) forward map.

    ``upstream`` is dLoss/d(output), matching the forward output shape.
    """
    if not isinstance(cache, dict) or cache.get("net") is not net:
        raise PreconditionError("backward needs the cache of a forward pass on this net")
    X = cache["x"]
    G = np.asarray(upstream, dtype=np.float64)
    if cache["squeezed"]:
        G = G[None, :]
    if G.shape[0] != X.shape[0]:
        raise PreconditionError("upstream batch size does not match the forward pass")
    if isinstance(net, ShallowFlowNet):
        traj = cache["traj"]
        Z = traj[-1]
        dA2 = G.T @ Z
        db2 = G.sum(axis=0)
        GZ = G @ net.A2
        dA, db, GV = _flow_backward(net.ode, traj, GZ)
        tensors = {
            "A1": GV.T @ X,
            "b1": GV.sum(axis=0),
            "A": dA,
            "b": db,
            "A2": dA2,
            "b2": db2,
        }
        d_input = GV @ net.A1
    elif isinstance(net, ShallowSigmaNet):
        H, P = cache["H1"], cache["P1"]
        dA2 = G.T @ H
        db2 = G.sum(axis=0)
        GH = (G @ net.A2) * flowmod.act_deriv(net.activation, P)
        tensors = {"A1": GH.T @ X, "b1": GH.sum(axis=0), "A2": dA2, "b2": db2}
        d_input = GH @ net.A1
    else:
        H2, P2, H1, P1 = cache["H2"], cache["P2"], cache["H1"], cache["P1"]
        dA3 = G.T @ H2
        db3 = G.sum(axis=0)
        G2 = (G @ net.A3) * flowmod.act_deriv(net.activation, P2)
        dA2 = G2.T @ H1
        db2 = G2.sum(axis=0)
        G1 = (G2 @ net.A2) * flowmod.act_deriv(net.activation, P1)
        tensors = {
            "A1": G1.T @ X,
            "b1": G1.sum(axis=0),
            "A2": dA2,
            "b2": db2,
            "A3": dA3,
            "b3": db3,
        }
        d_input = G1 @ net.A1
    if cache["squeezed"]:
        d_input = d_input[0]
    return GradientSet(tensors=tensors, d_input=d_input)


@dataclass(frozen=True)
class NormConstraint:
    """Target spectral norms of the outer layers: ||A1||_2 = c1, ||A2||_2 = c2."""

    c1: float
    c2: float = 1.0

    def __post_init__(self):
        if self.c1 < 1.0:
            raise PreconditionError("c1 must be >= 1")


def _rescale_to_norm(Aname, A, target):
    norm = spectral_norm(A)
    if norm == 0.0:
        raise PreconditionError(f"cannot normalize the zero matrix {Aname}")
    return (target / norm) * A


def project_norms(net, constraint):
    """Rescale A1 and A2 to the constraint norms; biases untouched."""
    tensors = dict(params(net))
    tensors["A1"] = _rescale_to_norm("A1", tensors["A1"], constraint.c1)
    outer = "A3" if isinstance(net, TwoHiddenNet) else "A2"
    tensors[outer] = _rescale_to_norm(outer, tensors[outer], constraint.c2)
    return with_params(net, tensors)


def renormalize_to_fixed_norm(net, c):
    """Rewrite a flow net so the outer layers have norms (c, 1) exactly,
    compensated by linear warm-up/cool-down phases of the flow.

    Returns (constrained net, t0, T): the original net equals
    A2_hat @ piecewise_flow(ode, t0, T, A1_hat x + b1_hat) + b2 pointwise.
    """
    if not isinstance(net, ShallowFlowNet):
        raise PreconditionError("renormalization applies to flow nets")
    if c < 1.0:
        raise PreconditionError("target norm c must be >= 1")
    n1 = spectral_norm(net.A1)
    n2 = spectral_norm(net.A2)
    if n1 == 0.0 or n2 == 0.0:
        raise PreconditionError("cannot renormalize a zero layer")
    # round-off slack at the boundary; the phases are clamped to the valid side
    if n1 < c * (1.0 - 1e-12):
        raise PreconditionError(f"||A1||_2 = {n1} is below the target norm {c}")
    if n2 < 1.0 - 1e-12:
        raise PreconditionError(f"||A2||_2 = {n2} is below 1")
    scaled = ShallowFlowNet(
        A1=(c / n1) * net.A1,
        b1=(c / n1) * net.b1,
        ode=net.ode,
        A2=net.A2 / n2,
        b2=net.b2,
    )
    t0 = min(-np.log(n1 / c), 0.0)
    T = max(np.log(n2) + 1.0, 1.0)
    return scaled, float(t0), float(T)


def renormalized_forward(net, t0, T, x):
    """Forward pass of a renormalized net through the piecewise flow."""
    X, squeezed = _as_batch(x, net.dims[0])
    V = X @ net.A1.T + net.b1
    Z = flowmod.piecewise_flow(net.ode, t0, T, V)
    Y = Z @ net.A2.T + net.b2
    return Y[0] if squeezed else Y


def stabilized(net, result: StabilizationResult):
    """Copy of the net with the ODE matrix shifted by the stabilizing Delta."""
    if not isinstance(net, ShallowFlowNet):
        raise PreconditionError("stabilization applies to flow nets")
    Delta = as_matrix(result.Delta, "Delta")
    if Delta.shape != net.ode.A.shape:
        raise PreconditionError("Delta shape does not match the ode matrix")
    ode = replace(net.ode, A=net.ode.A + Delta)
    return replace(net, ode=ode)


MODEL_MAGIC = "flownet-v1"


def save_model(path, net):
    """Versioned text format; tensors in a fixed order, 17 significant digits."""
    m, d, n = net.dims
    spec = net.ode.activation if isinstance(net, ShallowFlowNet) else net.activation
    steps = net.ode.euler_steps if isinstance(net, ShallowFlowNet) else 0
    lines = [f"{MODEL_MAGIC} {arch_name(net)} {m} {d} {n} {steps} {spec.alpha:.{TEXT_DIGITS}g} {spec.kind}"]
    for name, tensor in params(net).items():
        block = tensor[None, :] if tensor.ndim == 1 else tensor
        lines.append(name)
        lines.append(f"{block.shape[0]} {block.shape[1]}")
        for row in block:
            lines.append(" ".join(f"{v:.{TEXT_DIGITS}g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty model file")
    head = lines[0].split()
    if len(head) != 8 or head[0] != MODEL_MAGIC:
        raise ParseError(f"{path}: bad model header at line 1")
    arch = head[1]
    try:
        m, d, n, steps = int(head[2]), int(head[3]), int(head[4]), int(head[5])
        alpha = float(head[6])
    except ValueError as exc:
        raise ParseError(f"{path}: non-numeric header field at line 1") from exc
    kind = head[7]
    if kind == flowmod.LEAKY:
        spec = flowmod.leaky_relu(alpha)
    elif kind == flowmod.SMOOTHED:
        spec = flowmod.smoothed_leaky_relu(alpha)
    else:
        raise ParseError(f"{path}: unknown activation kind {kind!r} at line 1")

    expected = {
        ARCH_FLOW: ("A1", "b1", "A", "b", "A2", "b2"),
        ARCH_SHALLOW: ("A1", "b1", "A2", "b2"),
        ARCH_TWO_HIDDEN: ("A1", "b1", "A2", "b2", "A3", "b3"),
    }.get(arch)
    if expected is None:
        raise ParseError(f"{path}: unknown architecture {arch!r} at line 1")
    tensors = {}
    pos = 1
    for name in expected:
        if pos >= len(lines):
            raise ParseError(f"{path}: missing tensor {name!r} at line {pos + 1}")
        if lines[pos].strip() != name:
            raise ParseError(
                f"{path}: expected tensor {name!r} at line {pos + 1}, got {lines[pos]!r}"
            )
        block, pos = parse_matrix_lines(lines, pos + 1, name=f"{path}:{name}")
        tensors[name] = block[0] if name.startswith("b") else block
    if arch == ARCH_FLOW:
        ode = flowmod.NeuralOde(
            A=tensors["A"], b=tensors["b"], activation=spec, euler_steps=steps
        )
        net = ShallowFlowNet(
            A1=tensors["A1"], b1=tensors["b1"], ode=ode, A2=tensors["A2"], b2=tensors["b2"]
        )
    elif arch == ARCH_SHALLOW:
        net = ShallowSigmaNet(activation=spec, **tensors)
    else:
        net = TwoHiddenNet(activation=spec, **tensors)
    if net.dims != (m, d, n):
        raise ParseError(f"{path}: header dims {(m, d, n)} do not match tensors {net.dims}")
    return net
