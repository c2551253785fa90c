"""Reverse-mode differentiation surface used by training.

Gradients come from torch's autograd; this module pins down the subset of
operations training is allowed to use, provides the double-backward needed by
the gradient penalty, and carries an independent central-difference validator
so every gradient path can be checked against a derivative-free oracle.
"""

from __future__ import annotations

import numpy as np
import torch


class CapabilityError(RuntimeError):
    """An op without the required derivative support appears in a graph."""


# Ops the training graphs may contain. "second" marks second-derivative
# support as required by the gradient-penalty term; leaky-relu qualifies
# because its second derivative is zero almost everywhere (the kink at the
# origin has measure zero).
CAPABILITIES = {
    "add": {"first": True, "second": True},
    "mul": {"first": True, "second": True},
    "div": {"first": True, "second": True},
    "matmul": {"first": True, "second": True},
    "conv2d": {"first": True, "second": True},
    "upsample": {"first": True, "second": True},
    "leaky_relu": {"first": True, "second": True},
    "mean": {"first": True, "second": True},
    "sum": {"first": True, "second": True},
    "square": {"first": True, "second": True},
    "sqrt": {"first": True, "second": True},
    "l2_norm": {"first": True, "second": True},
    "pow_scalar": {"first": True, "second": True},
    "exp": {"first": True, "second": True},
    "sigmoid": {"first": True, "second": True},
    "clamp_straight_through": {"first": True, "second": False},
    "clamp": {"first": True, "second": False},
}

# grad_fn class-name prefixes -> capability table keys. Structural nodes
# (views, reshapes, stacking) do not compute anything and pass through.
_GRAD_FN_OPS = {
    "AddBackward": "add", "SubBackward": "add", "AddmmBackward": "matmul",
    "MulBackward": "mul", "DivBackward": "div", "MmBackward": "matmul",
    "BmmBackward": "matmul", "MvBackward": "matmul",
    "ConvolutionBackward": "conv2d", "LeakyReluBackward": "leaky_relu",
    "UpsampleNearest2DBackward": "upsample",
    "UpsampleBilinear2DBackward": "upsample",
    "MeanBackward": "mean", "SumBackward": "sum", "PowBackward": "pow_scalar",
    "SqrtBackward": "sqrt", "LinalgVectorNormBackward": "l2_norm",
    "NormBackward": "l2_norm", "ExpBackward": "exp",
    "SigmoidBackward": "sigmoid", "ClampBackward": "clamp",
    "ClampMinBackward": "clamp", "NegBackward": "add",
    "_STClampBackward": "clamp_straight_through",
}
_STRUCTURAL_PREFIXES = (
    "View", "Reshape", "Slice", "Select", "Squeeze", "Unsqueeze", "Permute",
    "Transpose", "TBackward", "Expand", "Cat", "Stack", "Split",
    "AccumulateGrad", "Clone", "Copy", "ToCopy", "Index", "Alias", "Repeat",
    "Flatten", "ConstantPad", "ReflectionPad",
)


def _op_of(node) -> str | None:
    name = type(node).__name__
    for prefix, op in _GRAD_FN_OPS.items():
        if name.startswith(prefix):
            return op
    for prefix in _STRUCTURAL_PREFIXES:
        if name.startswith(prefix):
            return None
    raise CapabilityError(f"op {name} is not in the capability table")


def check_second_differentiable(output: torch.Tensor) -> None:
    """Walk the graph below ``output``; reject ops without second-derivative
    support (raises CapabilityError naming the op)."""
    seen = set()
    stack = [output.grad_fn]
    while stack:
        node = stack.pop()
        if node is None or node in seen:
            continue
        seen.add(node)
        op = _op_of(node)
        if op is not None and not CAPABILITIES[op]["second"]:
            raise CapabilityError(
                f"op {op} ({type(node).__name__}) lacks second-derivative "
                "support required by the gradient penalty")
        stack.extend(fn for fn, _ in node.next_functions)


class _STClamp(torch.autograd.Function):
    """Clamp-at-minimum whose backward passes gradients straight through.

    Keeps the surrogate-kernel path free of dead zones; the forward is the
    hard clamp so emitted kernels stay non-negative.
    """

    @staticmethod
    def forward(ctx, x, minimum):
        ctx.minimum = minimum
        return x.clamp(min=minimum)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def straight_through_clamp(x: torch.Tensor, minimum: float = 0.0) -> torch.Tensor:
    return _STClamp.apply(x, minimum)


def backward(loss: torch.Tensor, leaves=None) -> dict:
    """Accumulate dloss/dleaf for every requires_grad leaf.

    Returns a dict mapping each leaf tensor (or its supplied name) to the
    gradient. ``leaves`` may be a list of tensors or a name->tensor mapping;
    when omitted the gradients land on ``.grad`` as usual.
    """
    if loss.dim() != 0:
        raise ValueError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    if leaves is None:
        loss.backward()
        return {}
    named = leaves if isinstance(leaves, dict) else \
        {i: t for i, t in enumerate(leaves)}
    tensors = list(named.values())
    grads = torch.autograd.grad(loss, tensors, allow_unused=True)
    return {k: g for (k, _), g in zip(named.items(), grads)}


def grad_of_grad_norm(d_apply, b: torch.Tensor, params=None):
    """Gradient of (||grad_b D(b)||_2 - 1)^2 with respect to D's parameters.

    ``d_apply`` maps a frame tensor to a scalar score; ``params`` defaults to
    ``d_apply.parameters()`` when it is a module. Returns (penalty value,
    list of parameter gradients). The inner gradient is kept on the tape
    (create_graph) so the outer differentiation is exact double backward.
    """
    if params is None:
        if not hasattr(d_apply, "parameters"):
            raise ValueError("params required when d_apply is not a module")
        params = [p for p in d_apply.parameters() if p.requires_grad]
    params = list(params)
    b = b.detach().requires_grad_(True)
    score = d_apply(b)
    if score.dim() != 0:
        score = score.reshape(())
    check_second_differentiable(score)
    (grad_b,) = torch.autograd.grad(score, b, create_graph=True)
    penalty = (grad_b.flatten().norm() - 1.0) ** 2
    if penalty.requires_grad:
        grads = torch.autograd.grad(penalty, params, allow_unused=True)
    else:  # D constant in b: penalty is the constant (0-1)^2, no flow back
        grads = [None] * len(params)
    grads = [torch.zeros_like(p) if g is None else g
             for p, g in zip(params, grads)]
    return penalty.detach(), grads


def grad_check(fn, params, h: float = 1e-5, max_coords: int = 64,
               seed: int = 0) -> float:
    """Central-difference validation of autograd gradients.

    ``fn`` is a pure function of ``params`` (a list of fp64 tensors with
    requires_grad) returning a scalar tensor. Up to ``max_coords`` coordinates
    per tensor are probed (all of them for small tensors). Returns the
    maximum relative error between analytic and finite-difference values.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = list(params)
    loss = fn(*params)
    analytic = torch.autograd.grad(loss, params, allow_unused=True)
    rng = np.random.Generator(np.random.Philox(
        key=np.array([seed % 2**64, 0xFD], dtype=np.uint64)))
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.numel()
        coords = (np.arange(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        g_flat = (torch.zeros(n, dtype=p.dtype) if g is None
                  else g.detach().reshape(-1))
        # floor the denominator at a fraction of the tensor's gradient scale
        # so coordinates with (near-)zero gradient measure finite-difference
        # noise against the scale that matters, not against themselves
        gscale = float(g_flat.abs().max()) if n else 0.0
        for c in coords:
            orig = flat[c].item()
            with torch.no_grad():
                flat[c] = orig + h
                up = float(fn(*params))
                flat[c] = orig - h
                dn = float(fn(*params))
                flat[c] = orig
            fd = (up - dn) / (2.0 * h)
            a = float(g_flat[c])
            denom = max(abs(a), abs(fd), 1e-3 * gscale, 1e-12)
            err = abs(a - fd) / denom
            worst = max(worst, err)
    return worst
