"""Central-finite-difference verification of reverse-mode gradients.

grad_check() compares the tape's gradient of a scalar-valued function
against central differences at 64-bit. CHECKS is the registry of every
differentiable op (and key composites); `crossloc gradcheck` iterates it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

FD_STEP = 1e-5
REL_EPS = 1e-8


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_error: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        msg = f"{self.op_name:<28s} max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e} {status}"
        if self.detail:
            msg += f"  ({self.detail})"
        return msg


def _as_scalar(out: Tensor) -> Tensor:
    return out if out.data.size == 1 else out.sum()


def grad_check(fn, inputs: list[Tensor], tol: float = 1e-4, h: float = FD_STEP,
               name: str = "") -> GradCheckReport:
    """Compare reverse-mode gradients of fn(*inputs) against central differences.

    fn must be scalar-valued or reducible to a scalar by summation; inputs
    must be float64 for the step size to be meaningful.
    """
    op_name = name or getattr(fn, "__name__", "fn")
    for x in inputs:
        if x.data.dtype != np.float64:
            raise ValueError("grad_check requires float64 inputs")
        x.zero_grad()
        x.requires_grad = True

    try:
        out = _as_scalar(fn(*inputs))
        out.backward()
    except T.NonFiniteError as exc:
        return GradCheckReport(op_name, float("inf"), tol, False, f"non-finite: {exc}")

    max_rel = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with T.no_grad():
                fp = _as_scalar(fn(*inputs)).item()
            flat[i] = orig - h
            with T.no_grad():
                fm = _as_scalar(fn(*inputs)).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), REL_EPS)
            if rel > max_rel:
                max_rel = rel
    return GradCheckReport(op_name, max_rel, tol, max_rel <= tol)


# -- registry of differentiable ops --------------------------------------------
#
# Each entry maps an op name to a (fn, input-builder) pair; the builder takes a
# seeded Generator and returns the input tensors. Shapes stay small so the full
# sweep is quick.

def _t(rng, *shape):
    return Tensor(rng.standard_normal(shape))


CHECKS: dict[str, tuple] = {
    "add": (lambda a, b: a + b, lambda rng: [_t(rng, 3, 4), _t(rng, 3, 4)]),
    "add_broadcast": (lambda a, b: a + b, lambda rng: [_t(rng, 3, 4), _t(rng, 4)]),
    "sub": (lambda a, b: a - b, lambda rng: [_t(rng, 3, 4), _t(rng, 3, 4)]),
    "mul": (lambda a, b: a * b, lambda rng: [_t(rng, 3, 4), _t(rng, 3, 4)]),
    "div": (lambda a, b: a / (b * b + 1.0), lambda rng: [_t(rng, 3, 4), _t(rng, 3, 4)]),
    "neg": (lambda a: -a, lambda rng: [_t(rng, 5)]),
    "pow": (lambda a: (a * a + 1.0) ** 1.5, lambda rng: [_t(rng, 3, 3)]),
    "exp": (T.exp, lambda rng: [_t(rng, 3, 3)]),
    "log": (lambda a: T.log(a * a + 0.5), lambda rng: [_t(rng, 3, 3)]),
    "sqrt": (lambda a: T.sqrt(a * a + 0.5), lambda rng: [_t(rng, 3, 3)]),
    "tanh": (T.tanh, lambda rng: [_t(rng, 3, 3)]),
    "relu": (T.relu, lambda rng: [_t(rng, 4, 4)]),
    "gelu": (T.gelu, lambda rng: [_t(rng, 4, 4)]),
    "maximum_const": (lambda a: T.maximum_const(a, 0.3), lambda rng: [_t(rng, 4, 4)]),
    "matmul": (T.matmul, lambda rng: [_t(rng, 3, 4), _t(rng, 4, 2)]),
    "matmul_batched": (T.matmul, lambda rng: [_t(rng, 2, 3, 4), _t(rng, 2, 4, 2)]),
    "matmul_broadcast": (T.matmul, lambda rng: [_t(rng, 2, 2, 3, 4), _t(rng, 4, 5)]),
    "reshape": (lambda a: (a.reshape(2, 6) * a.reshape(2, 6)).sum(), lambda rng: [_t(rng, 3, 4)]),
    "transpose": (lambda a: (a.transpose((1, 0)) @ a).sum(), lambda rng: [_t(rng, 3, 4)]),
    "sum_axis": (lambda a: (a.sum(axis=1) ** 2.0).sum(), lambda rng: [_t(rng, 3, 4)]),
    "mean": (lambda a: (a.mean(axis=0) ** 2.0).sum(), lambda rng: [_t(rng, 3, 4)]),
    "softmax": (lambda a: (T.softmax(a, -1) ** 2.0).sum(), lambda rng: [_t(rng, 3, 5)]),
    "softmax_axis0": (lambda a: (T.softmax(a, 0) ** 2.0).sum(), lambda rng: [_t(rng, 3, 5)]),
    "layer_norm": (
        lambda x, g, b: (T.layer_norm(x, g, b) ** 2.0).sum(),
        lambda rng: [_t(rng, 4, 6), _t(rng, 6), _t(rng, 6)],
    ),
    "cosine_similarity": (T.cosine_similarity, lambda rng: [_t(rng, 8), _t(rng, 8)]),
    "l2_normalize_rows": (
        lambda x, w: (T.l2_normalize_rows(x) * w).sum(),
        lambda rng: [_t(rng, 3, 5), _t(rng, 3, 5)],
    ),
    "conv1d": (
        lambda x, w, b: (T.conv1d(x, w, b, stride=2, pad=1) ** 2.0).sum(),
        lambda rng: [_t(rng, 2, 3, 8), _t(rng, 4, 3, 3), _t(rng, 4)],
    ),
}


def run_registry(tol: float = 1e-4, seed: int = 0) -> list[GradCheckReport]:
    """Run grad_check over every registered op."""
    reports = []
    for name, (fn, build) in CHECKS.items():
        rng = np.random.default_rng(seed)
        reports.append(grad_check(fn, build(rng), tol=tol, name=name))
    return reports
