"""Finite-difference verification of autodiff gradients.

finite_diff_check perturbs every element of the leaf tensors by +-1e-5,
rebuilds the graph each time, and compares central differences against the
gradients backward() produced. Relative error is |a - n| / max(1, |a|, |n|),
so tiny gradients are judged on absolute error.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_leaf: str
    passed: bool

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} at {self.worst_leaf}"


def finite_diff_check(f, leaves, tolerance=1e-6, step=1e-5):
    """Compare autodiff gradients of scalar-valued f against central differences.

    f: callable taking no arguments, reading the given leaves, returning a
    scalar Tensor. leaves: dict name -> Tensor with requires_grad set.
    """
    for t in leaves.values():
        t.zero_grad()
    out = f()
    if out.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    out.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in leaves.items()}

    max_err = 0.0
    worst = ""
    for name, t in leaves.items():
        flat = t.data.ravel()
        a_flat = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            n = (fp - fm) / (2 * step)
            a = a_flat[i]
            err = abs(a - n) / max(1.0, abs(a), abs(n))
            if err > max_err:
                max_err = err
                worst = f"{name}[{i}]"
    return GradCheckReport(max_rel_error=max_err, worst_leaf=worst or "-", passed=max_err <= tolerance)


def jitter_off_boundaries(data, rng, margin=0.05):
    """Nudge values lying near ReLU/pooling decision boundaries.

    Elements within `margin` of zero are pushed to +-margin, and exact ties
    within the array are broken with tiny noise, so a 1e-5 finite-difference
    step cannot cross a kink.
    """
    out = np.asarray(data, dtype=np.float64).copy()
    near = np.abs(out) < margin
    out[near] = np.where(out[near] >= 0, margin, -margin)
    out += rng.uniform(0.001, 0.002, size=out.shape) * rng.choice([-1.0, 1.0], size=out.shape)
    return out


def _suite_cases():
    """(name, builder) pairs covering every differentiable operation."""
    from .deform import deform_conv2d, deform_conv2d_block
    from .functional import batchnorm2d, conv2d, conv_transpose2d, maxpool2d
    from .losses import LossConfig, dice_loss, weighted_bce_loss
    from .simam import simam_attend

    def leaf(rng, shape, jitter=False):
        data = rng.normal(size=shape)
        if jitter:
            data = jitter_off_boundaries(data, rng)
        return Tensor(data, requires_grad=True)

    def elementwise_mul(rng):
        a = leaf(rng, (2, 3))
        b = leaf(rng, (2, 3))
        return lambda: (a * b).sum(), {"a": a, "b": b}

    def relu(rng):
        a = leaf(rng, (3, 4), jitter=True)
        return lambda: (a.relu() ** 2).sum(), {"a": a}

    def sigmoid(rng):
        a = leaf(rng, (3, 4))
        return lambda: (a.sigmoid() ** 2).sum(), {"a": a}

    def conv(rng):
        x = leaf(rng, (1, 2, 5, 5))
        w = leaf(rng, (3, 2, 3, 3))
        b = leaf(rng, (3,))
        return lambda: (conv2d(x, w, b, padding=1) ** 2).sum(), {"x": x, "w": w, "b": b}

    def conv_transpose(rng):
        x = leaf(rng, (1, 2, 3, 3))
        w = leaf(rng, (2, 2, 2, 2))
        return lambda: (conv_transpose2d(x, w, stride=2) ** 2).sum(), {"x": x, "w": w}

    def maxpool(rng):
        x = leaf(rng, (1, 2, 4, 4), jitter=True)
        return lambda: (maxpool2d(x) ** 2).sum(), {"x": x}

    def batchnorm(rng):
        x = leaf(rng, (2, 2, 3, 3))
        gamma = Tensor(rng.uniform(0.5, 1.5, size=2), requires_grad=True)
        beta = leaf(rng, (2,))
        return (lambda: (batchnorm2d(x, gamma, beta, np.zeros(2), np.ones(2),
                                     training=True) ** 2).sum(),
                {"x": x, "gamma": gamma, "beta": beta})

    def deform(rng):
        x = leaf(rng, (1, 2, 4, 4))
        w = leaf(rng, (2, 2, 3, 3))
        b = leaf(rng, (2,))
        off = Tensor(rng.uniform(0.1, 0.6, size=(1, 18, 4, 4)), requires_grad=True)
        mod = Tensor(rng.uniform(0.2, 0.8, size=(1, 9, 4, 4)), requires_grad=True)
        return (lambda: (deform_conv2d(x, w, b, off, mod) ** 2).sum(),
                {"x": x, "w": w, "b": b, "off": off, "mod": mod})

    def deform_branch(rng):
        x = leaf(rng, (1, 2, 4, 4))
        w = leaf(rng, (2, 2, 3, 3))
        b = leaf(rng, (2,))
        bw = Tensor(0.1 * rng.normal(size=(27, 2, 3, 3)), requires_grad=True)
        bb = Tensor(0.1 * rng.normal(size=(27,)), requires_grad=True)
        return (lambda: (deform_conv2d_block(x, w, b, bw, bb) ** 2).sum(),
                {"x": x, "w": w, "b": b, "branch_w": bw, "branch_b": bb})

    def simam(rng):
        x = leaf(rng, (1, 2, 3, 3))
        return lambda: (simam_attend(x) ** 2).sum(), {"x": x}

    def dice(rng):
        logits = leaf(rng, (1, 2, 4, 4))
        target = Tensor((rng.random((1, 2, 4, 4)) > 0.6).astype(np.float64))
        return lambda: dice_loss(logits, target), {"logits": logits}

    def bce(rng):
        logits = leaf(rng, (1, 2, 4, 4))
        target = Tensor((rng.random((1, 2, 4, 4)) > 0.6).astype(np.float64))
        cfg = LossConfig(bce_pos_weight=2.0)
        return lambda: weighted_bce_loss(logits, target, cfg), {"logits": logits}

    return [
        ("elementwise_mul", elementwise_mul),
        ("relu", relu),
        ("sigmoid", sigmoid),
        ("conv2d", conv),
        ("conv_transpose2d", conv_transpose),
        ("maxpool2d", maxpool),
        ("batchnorm2d", batchnorm),
        ("deform_conv2d", deform),
        ("deform_branch", deform_branch),
        ("simam_attend", simam),
        ("dice_loss", dice),
        ("weighted_bce_loss", bce),
    ]


def gradcheck_suite(seeds=(100, 101, 102), tolerance=1e-6):
    """Run every op's finite-difference check at each seed.

    Returns [(op_name, seed, GradCheckReport), ...] in suite order.
    """
    rows = []
    for name, build in _suite_cases():
        for seed in seeds:
            rng = np.random.default_rng(seed)
            f, leaves = build(rng)
            rows.append((name, seed, finite_diff_check(f, leaves, tolerance=tolerance)))
    return rows


def format_suite_table(rows):
    width = max(len(name) for name, _, _ in rows)
    lines = [f"{name.ljust(width)}  seed={seed}  {report}"
             for name, seed, report in rows]
    ok = sum(1 for _, _, r in rows if r.passed)
    lines.append(f"{ok}/{len(rows)} checks passed")
    return "\n".join(lines)
