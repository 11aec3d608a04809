"""Central-difference gradient checking for the autodiff engine.

``grad_check`` compares analytic gradients against (f(x+h) - f(x-h)) / 2h
coordinate by coordinate. Non-scalar outputs are reduced with a fixed
random projection so one scalar drives both sides of the comparison.

``standard_op_suite`` enumerates every differentiable operation with
randomized small shapes; ``micro_pipeline_entry`` wires the attention ->
gated-aggregation -> multi-scale-head -> cross-entropy chain into one
checkable graph. The command line exposes both through ``cbce gradcheck``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import convops, tensor as T
from .tensor import Tensor, backward, mul, tsum


@dataclass
class GradCheckReport:
    label: str
    max_rel_error: float
    tol: float
    checked: int
    worst: tuple[int, int] | None = None  # (input index, flat coordinate)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(
    f,
    inputs,
    h: float = 1e-4,
    tol: float = 1e-4,
    rng: np.random.Generator | None = None,
    max_coords_per_tensor: int | None = None,
    label: str = "",
) -> GradCheckReport:
    """Check analytic gradients of ``f(*inputs)`` against central differences.

    ``f`` must be deterministic (verified by re-evaluation) and may close
    over ``inputs``: coordinates are perturbed in place and ``f`` is
    re-executed, so passing the same Tensor objects it reads is enough.
    ``max_coords_per_tensor`` subsamples coordinates of large inputs; the
    relative error reported is the max over everything checked.
    """
    inputs = list(inputs)
    rng = rng or np.random.default_rng(0)

    first = f(*inputs)
    second = f(*inputs)
    if not np.array_equal(first.data, second.data):
        raise RuntimeError("grad_check: function is non-deterministic (re-evaluation mismatch)")
    proj = None
    if first.size != 1:
        proj = rng.standard_normal(first.shape).astype(first.dtype)

    def scalar_eval() -> Tensor:
        out = f(*inputs)
        if proj is not None:
            out = tsum(mul(out, Tensor(proj)))
        elif out.ndim > 0:
            out = tsum(out)
        return out

    for inp in inputs:
        inp.grad = None
    backward(scalar_eval())
    analytic = [
        inp.grad.copy() if inp.grad is not None else np.zeros_like(inp.data) for inp in inputs
    ]
    for inp in inputs:
        inp.grad = None

    max_rel = 0.0
    worst = None
    checked = 0
    for ti, inp in enumerate(inputs):
        if not inp.requires_grad:
            continue
        n = inp.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = range(n)
        ana_flat = analytic[ti].reshape(-1)
        for ci in coords:
            orig = inp.data.flat[ci]
            inp.data.flat[ci] = orig + h
            fp = scalar_eval().item()
            inp.data.flat[ci] = orig - h
            fm = scalar_eval().item()
            inp.data.flat[ci] = orig
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(ana_flat[ci] - numeric) / max(1.0, abs(ana_flat[ci]), abs(numeric))
            checked += 1
            if rel > max_rel:
                max_rel = rel
                worst = (ti, int(ci))
    return GradCheckReport(label=label, max_rel_error=max_rel, tol=tol, checked=checked, worst=worst)


# ---------------------------------------------------------------------------
# randomized suite covering every differentiable op


def _rt(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _suite_entries():
    def add_entry(rng):
        a, b = _rt(rng, 3, 4), _rt(rng, 1, 4)
        return (lambda a, b: T.add(a, b)), [a, b]

    def sub_entry(rng):
        a, b = _rt(rng, 2, 3), _rt(rng, 2, 3)
        return (lambda a, b: T.sub(a, b)), [a, b]

    def neg_entry(rng):
        a = _rt(rng, 5)
        return (lambda a: T.neg(a)), [a]

    def mul_entry(rng):
        a, b = _rt(rng, 2, 3, 4), _rt(rng, 1, 1, 4)
        return (lambda a, b: T.mul(a, b)), [a, b]

    def matmul_entry(rng):
        m, k, n = rng.integers(2, 5, size=3)
        a, b = _rt(rng, m, k), _rt(rng, k, n)
        return (lambda a, b: T.matmul(a, b)), [a, b]

    def transpose_entry(rng):
        a = _rt(rng, 3, 4)
        return (lambda a: T.transpose2d(a)), [a]

    def reshape_entry(rng):
        a = _rt(rng, 2, 6)
        return (lambda a: T.reshape(a, (3, 4))), [a]

    def narrow_entry(rng):
        a = _rt(rng, 4, 5)
        return (lambda a: T.narrow(a, 1, 1, 3)), [a]

    def concat_entry(rng):
        a, b, c = _rt(rng, 2, 2), _rt(rng, 2, 3), _rt(rng, 2, 1)
        return (lambda a, b, c: T.concat([a, b, c], axis=1)), [a, b, c]

    def sum_entry(rng):
        a = _rt(rng, 3, 4)
        return (lambda a: T.tsum(a, axis=1)), [a]

    def relu_entry(rng):
        a = _rt(rng, 4, 4)
        # keep pre-activations away from the kink so central differences hold
        a.data += 0.25 * np.sign(a.data)
        return (lambda a: T.relu(a)), [a]

    def sigmoid_entry(rng):
        a = _rt(rng, 3, 3)
        return (lambda a: T.sigmoid(a)), [a]

    def tanh_entry(rng):
        a = _rt(rng, 3, 3)
        return (lambda a: T.tanh(a)), [a]

    def softmax_entry(rng):
        n = int(rng.integers(2, 8))
        a = _rt(rng, n)
        return (lambda a: T.softmax(a, scale=float(np.sqrt(n)))), [a]

    def l2n_entry(rng):
        a = _rt(rng, 6)
        return (lambda a: T.l2_normalize(a)), [a]

    def max_entry(rng):
        a, b, c = _rt(rng, 3, 3), _rt(rng, 3, 3), _rt(rng, 3, 3)
        return (lambda a, b, c: T.elementwise_max([a, b, c])), [a, b, c]

    def gather_entry(rng):
        table = _rt(rng, 5, 3)
        ids = np.array([0, 2, 2, 4])  # repeated row exercises scatter-add
        return (lambda t: T.gather_rows(t, ids)), [table]

    def bce_entry(rng):
        logits = _rt(rng, 3, 3, scale=2.0)
        target = (rng.random((3, 3)) > 0.5).astype(np.float64)
        return (lambda z: T.bce_with_logits_sum(z, target)), [logits]

    def conv_entry(rng):
        x = _rt(rng, 4, 4, 2)
        w = _rt(rng, 3, 3, 2, 2, scale=0.5)
        b = _rt(rng, 2)
        return (lambda x, w, b: convops.conv2d(x, w, b, dilation=1)), [x, w, b]

    def conv_dilated_entry(rng):
        x = _rt(rng, 5, 5, 2)
        w = _rt(rng, 3, 3, 2, 3, scale=0.5)
        b = _rt(rng, 3)
        return (lambda x, w, b: convops.conv2d(x, w, b, dilation=2)), [x, w, b]

    def depthwise_entry(rng):
        x = _rt(rng, 4, 4, 3)
        w = _rt(rng, 3, 3, 3, scale=0.5)
        return (lambda x, w: convops.depthwise_conv2d(x, w, dilation=1)), [x, w]

    def separable_entry(rng):
        x = _rt(rng, 3, 3, 2)
        dw = _rt(rng, 3, 3, 2, scale=0.5)
        pw = _rt(rng, 1, 1, 2, 3, scale=0.5)
        b = _rt(rng, 3)
        return (
            lambda x, dw, pw, b: convops.depthwise_separable_conv(x, dw, pw, dilation=2, bias=b)
        ), [x, dw, pw, b]

    def gap_entry(rng):
        x = _rt(rng, 3, 4, 2)
        return (lambda x: convops.global_avg_pool(x)), [x]

    def avgpool_entry(rng):
        x = _rt(rng, 5, 5, 2)  # odd size exercises the replicated edge
        return (lambda x: convops.avg_pool2d(x, window=2)), [x]

    def upsample_entry(rng):
        x = _rt(rng, 3, 3, 2)
        return (lambda x: convops.bilinear_upsample(x, 7, 5)), [x]

    def downsample_entry(rng):
        x = _rt(rng, 6, 8, 2)
        return (lambda x: convops.bilinear_upsample(x, 3, 3)), [x]

    return {
        "add": add_entry,
        "sub": sub_entry,
        "neg": neg_entry,
        "mul": mul_entry,
        "matmul": matmul_entry,
        "transpose2d": transpose_entry,
        "reshape": reshape_entry,
        "narrow": narrow_entry,
        "concat": concat_entry,
        "sum": sum_entry,
        "relu": relu_entry,
        "sigmoid": sigmoid_entry,
        "tanh": tanh_entry,
        "softmax": softmax_entry,
        "l2_normalize": l2n_entry,
        "elementwise_max": max_entry,
        "gather_rows": gather_entry,
        "bce_with_logits_sum": bce_entry,
        "conv2d": conv_entry,
        "conv2d_dilated": conv_dilated_entry,
        "depthwise_conv2d": depthwise_entry,
        "depthwise_separable_conv": separable_entry,
        "global_avg_pool": gap_entry,
        "avg_pool2d": avgpool_entry,
        "bilinear_upsample": upsample_entry,
        "bilinear_downsample": downsample_entry,
    }


def standard_op_suite() -> dict:
    """name -> builder(rng) returning (fn, inputs) for grad_check."""
    return _suite_entries()


def micro_pipeline_entry():
    """Builder for the composed attention/gating/head/loss micro-graph.

    Three 2x2 fused maps and a language vector flow through one
    vision-to-language update, one gated aggregation per level, the
    multi-scale head, and the summed cross entropy. Every parameter is a
    checked input.
    """
    from .cim import Lvm, Vlm
    from .seghead import SegHead

    def build(rng):
        h = w = 2
        c_v, c_l, c_a = 3, 3, 2
        feats = {i: _rt(rng, h, w, c_v, scale=0.5) for i in (3, 4, 5)}
        lang = _rt(rng, c_l, scale=0.5)
        vlm = {i: Vlm(c_l, c_v, rng=rng) for i in (3, 4, 5)}
        lvm = {i: Lvm(i, c_l, c_v, rng=rng) for i in (3, 4, 5)}
        head = SegHead(3 * c_v, c_a, rng=rng)
        target = (rng.random((2 * h, 2 * w)) > 0.5).astype(np.float64)

        params = []
        for mod in [*vlm.values(), *lvm.values(), head]:
            params.extend(t for _, t in mod.parameters())

        def fn(*_):
            new_lang = {i: vlm[i].forward(lang, feats[i]) for i in (3, 4, 5)}
            new_feats = {
                i: lvm[i].forward(new_lang[i], feats) for i in (3, 4, 5)
            }
            pred = head.forward(new_feats[3], new_feats[4], new_feats[5], (2 * h, 2 * w))
            return T.bce_with_logits_sum(pred.logits, target)

        return fn, [lang, *feats.values(), *params]

    return build


def run_suite(
    seeds=range(20),
    ops=None,
    h: float = 1e-4,
    tol: float = 1e-4,
    include_pipeline: bool = True,
    pipeline_coords: int = 6,
) -> list[GradCheckReport]:
    """Run the randomized gradient suite; one report per (op, worst seed)."""
    suite = standard_op_suite()
    if include_pipeline:
        suite["vlm_lvm_aspp_bce"] = micro_pipeline_entry()
    if ops:
        missing = set(ops) - set(suite)
        if missing:
            raise ValueError(f"unknown ops for gradcheck: {sorted(missing)}")
        suite = {k: v for k, v in suite.items() if k in ops}
    reports = []
    for name, builder in suite.items():
        worst = GradCheckReport(label=name, max_rel_error=0.0, tol=tol, checked=0)
        for seed in seeds:
            rng = np.random.default_rng([seed, 1234])
            fn, inputs = builder(rng)
            coords = pipeline_coords if name == "vlm_lvm_aspp_bce" else None
            rep = grad_check(
                fn, inputs, h=h, tol=tol, rng=rng, max_coords_per_tensor=coords, label=name
            )
            worst.checked += rep.checked
            if rep.max_rel_error > worst.max_rel_error:
                worst.max_rel_error = rep.max_rel_error
                worst.worst = rep.worst
        reports.append(worst)
    return reports
