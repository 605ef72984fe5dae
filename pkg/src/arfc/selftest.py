"""Built-in oracle checks and the 64-bit finite-difference suite.

Every check runs the library code against an independent computation
(explicit loops, closed forms, set arithmetic). Module attributes are
looked up at call time, so a patched function is what gets checked.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import data, functional, gmea, gradcheck, hlff, metrics, mrffi, network, tensorio, wavelet
from .functional import ConvSpec
from .tensor import Parameter, Tensor, no_grad, precision, sigmoid


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def loop_conv2d(x: np.ndarray, w: np.ndarray, b, stride=1, dilation=1, groups=1, padding=(0, 0, 0, 0)):
    """Reference cross-correlation written as explicit loops over taps."""
    n, c, h, wd = x.shape
    cout, cg, kh, kw = w.shape
    t, bt, l, r = padding
    xp = np.pad(x, ((0, 0), (0, 0), (t, bt), (l, r)))
    ho = (h + t + bt - dilation * (kh - 1) - 1) // stride + 1
    wo = (wd + l + r - dilation * (kw - 1) - 1) // stride + 1
    og = cout // groups
    out = np.zeros((n, cout, ho, wo))
    for o in range(cout):
        g0 = (o // og) * cg
        for ci in range(cg):
            for a in range(kh):
                for q in range(kw):
                    rows = slice(a * dilation, a * dilation + stride * (ho - 1) + 1, stride)
                    cols = slice(q * dilation, q * dilation + stride * (wo - 1) + 1, stride)
                    out[:, o] += w[o, ci, a, q] * xp[:, g0 + ci, rows, cols]
        if b is not None:
            out[:, o] += b[o]
    return out


def perturb_parameters(module, rng, scale=0.1):
    for _, p in module.named_parameters():
        p.data = p.data + scale * rng.normal(size=p.shape)
    return module


# -- oracles -------------------------------------------------------------------
def check_haar(rng) -> str:
    for _ in range(20):
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 5)), 2 * int(rng.integers(1, 17)),
                 2 * int(rng.integers(1, 17)))
        x = Tensor(rng.normal(size=shape), dtype=np.float64)
        back = wavelet.haar_synthesize(wavelet.haar_analyze(x)).data
        err = np.abs(back - x.data).max()
        if err > 1e-6:
            raise AssertionError(f"haar round trip error {err:.2e} on {shape}")
    ll = wavelet.haar_analyze(Tensor(np.ones((1, 1, 2, 2)))).ll.item()
    if ll != 4.0:
        raise AssertionError(f"ll of a 2x2 block of ones is {ll}, expected 4")
    return "round trip <= 1e-6; ll(ones) = 4"


def check_masks(rng) -> str:
    h, w = 40, 40
    d0 = wavelet.cutoff_for(h, w)
    hp = wavelet.build_mask("high_pass", h, w).values
    lp = wavelet.build_mask("low_pass", h, w).values
    u0, v0 = h // 2, w // 2
    edge = (u0 + d0, v0)
    checks = [(hp[u0, v0], 0.0), (hp[edge], 1 - math.exp(-1)), (lp[u0, v0], 1.0), (lp[edge], math.exp(-1))]
    for got, want in checks:
        if abs(got - want) > 1e-6:
            raise AssertionError(f"mask value {got} != {want}")
    x = Tensor(rng.normal(size=(2, 3, h, w)))
    err = np.abs(functional.dft2_filter(x, wavelet.build_mask("identity", h, w)).data - x.data).max()
    if err > 1e-5:
        raise AssertionError(f"identity mask round trip error {err:.2e}")
    return f"D0 = {d0}; centre and D0 values exact; identity error {err:.1e}"


def check_conv(rng) -> str:
    cases = [ConvSpec.same(3, 4, 3), ConvSpec.same(4, 4, (1, 7), groups=4),
             ConvSpec(4, 6, 3, 3, stride=2, dilation=2, groups=2, padding=(1, 2, 0, 1)), ConvSpec.same(5, 2, 1)]
    worst = 0.0
    for spec in cases:
        x = rng.normal(size=(2, spec.in_channels, 9, 8))
        w = rng.normal(size=spec.weight_shape)
        b = rng.normal(size=spec.out_channels)
        got = functional.conv2d(Tensor(x), spec, Tensor(w), Tensor(b)).data
        want = loop_conv2d(x, w, b, spec.stride, spec.dilation, spec.groups, spec.padding)
        worst = max(worst, float(np.abs(got - want).max()))
    if worst > 1e-9:
        raise AssertionError(f"conv2d differs from loop oracle by {worst:.2e}")
    return f"4 configurations, max diff {worst:.1e}"


def check_mddc(rng) -> str:
    block = mrffi.MDDC(3, 4, rng)
    worst = 0.0
    for _ in range(10):
        x = rng.normal(size=(2, 3, 7, 6))
        direct = mrffi.mddc_forward(Tensor(x), block, fast=False).data
        kernel = block.reparameterize()
        worst = max(worst, float(np.abs(direct - loop_conv2d(x, kernel, None, padding=(1, 1, 1, 1))).max()))
    if worst > 1e-6:
        raise AssertionError(f"difference conv vs reparameterised kernel: {worst:.2e}")
    return f"max diff {worst:.1e}"


def check_degenerate_dcn(rng) -> str:
    x = rng.normal(size=(2, 3, 6, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    off = Tensor(np.zeros((2, 18, 6, 7)))
    mod = sigmoid(Tensor(np.zeros((2, 9, 6, 7))))
    got = mrffi.deform_conv2d(Tensor(x), off, mod, Tensor(w)).data
    err = float(np.abs(got - 0.5 * loop_conv2d(x, w, None, padding=(1, 1, 1, 1))).max())
    if err > 1e-6:
        raise AssertionError(f"zero-offset DCN differs from 0.5 x conv by {err:.2e}")
    return f"max diff {err:.1e}"


def check_gate(rng) -> str:
    bank = mrffi.MRFFIConv(4, 8, rng)
    x = Tensor(rng.normal(size=(6, 4, 8, 8)))
    with no_grad():
        g = mrffi.gate_weights(x, bank.gate).data.reshape(6, 3)
        if g.min() < 0 or np.abs(g.sum(axis=1) - 1).max() > 1e-6:
            raise AssertionError("gate weights are not a distribution")
        experts = [e.data for e in bank.experts(x)]
        for k in range(3):
            pinned = mrffi.mrffi_forward(x, bank, np.eye(3)[k]).data
            if not np.array_equal(pinned, experts[k]):
                raise AssertionError(f"one-hot gate {k} does not reproduce its expert")
    return "simplex weights; one-hot pins reproduce experts exactly"


def check_shuffle(rng) -> str:
    perm = list(gmea.shuffle_permutation(8, 4))
    if perm != [0, 2, 4, 6, 1, 3, 5, 7]:
        raise AssertionError(f"shuffle(8, 4) = {perm}")
    return "(0,2,4,6,1,3,5,7)"


def check_loss(rng) -> str:
    y = np.zeros((1, 1, 8, 8))
    y[0, 0, 2:4, 3:6] = 1
    t = int(y.sum())
    perfect = network.soft_iou_loss(Tensor(np.where(y > 0, 40.0, -40.0)), y).item()
    empty = network.soft_iou_loss(Tensor(np.full(y.shape, -80.0)), y).item()
    if abs(perfect) > 1e-12 or abs(empty - t / (t + 1)) > 1e-12:
        raise AssertionError(f"loss(perfect) = {perfect}, loss(zero) = {empty}, want 0 and {t}/{t + 1}")
    return f"0 at perfection, {t}/{t + 1} at all-zero"


def check_metrics(rng) -> str:
    pred = np.zeros((1, 3), bool)
    gt = np.zeros((1, 3), bool)
    pred[0, :2] = True
    gt[0, 1:] = True
    iou, pre, rec, f1 = metrics.pixel_metrics(pred, gt)
    if (iou, pre, rec, f1) != (1 / 3, 0.5, 0.5, 0.5):
        raise AssertionError(f"worked example gave {(iou, pre, rec, f1)}")
    for _ in range(20):
        p, g = rng.random((16, 16)) < 0.3, rng.random((16, 16)) < 0.3
        c = metrics.pixel_counts(p, g)
        brute = [0, 0, 0, 0]  # tp, fp, fn, tn
        for a, b in zip(p.ravel(), g.ravel()):
            brute[0 if a and b else 1 if a else 2 if b else 3] += 1
        if [c.tp, c.fp, c.fn, c.tn] != brute:
            raise AssertionError("pixel counts disagree with recount")
    rows = metrics.roc_curve([rng.random((8, 8))], [rng.random((8, 8)) < 0.2], [0.9, 0.5, 0.1])
    if rows[0][1:] != (0.0, 0.0) or rows[-1][1:] != (1.0, 1.0):
        raise AssertionError("ROC endpoints are not (0,0) and (1,1)")
    return "worked example, recounts and ROC endpoints"


def check_pgm(rng) -> str:
    img = rng.integers(0, 65536, size=(5, 7))
    pixels, maxval = data.decode_pgm(data.encode_pgm(img, 65535))
    if maxval != 65535 or not np.array_equal(pixels, img):
        raise AssertionError("16-bit PGM round trip failed")
    got = data.load_pgm_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    want = np.array([[0, 128], [255, 64]]) / 255
    if not np.array_equal(got, want):
        raise AssertionError(f"8-bit normalisation gave {got.ravel()}")
    return "8/16-bit round trip, normalisation"


def check_tensor_format(rng) -> str:
    for dt in (np.float32, np.float64):
        a = rng.normal(size=(2, 3, 4, 5)).astype(dt)
        b = tensorio.decode_tensor(tensorio.encode_tensor(a))
        if b.dtype != a.dtype or not np.array_equal(a, b):
            raise AssertionError(f"{np.dtype(dt).name} tensor round trip failed")
    return "float32/float64 bit-exact"


ORACLES = {
    "haar": check_haar,
    "frequency_masks": check_masks,
    "conv2d": check_conv,
    "mddc_reparam": check_mddc,
    "degenerate_dcn": check_degenerate_dcn,
    "gate": check_gate,
    "channel_shuffle": check_shuffle,
    "soft_iou_loss": check_loss,
    "metrics": check_metrics,
    "pgm": check_pgm,
    "tensor_format": check_tensor_format,
}


def _run(name, fn, *args) -> CheckResult:
    start = time.perf_counter()
    try:
        detail, ok = fn(*args), True
    except (AssertionError, FloatingPointError, ValueError) as exc:
        detail, ok = f"{type(exc).__name__}: {exc}", False
    return CheckResult(name, ok, detail, time.perf_counter() - start)


def run_oracles(seed: int = 0) -> list:
    results = []
    with precision(np.float64):
        for name, fn in ORACLES.items():
            results.append(_run(name, fn, np.random.default_rng([seed, len(results)])))
    return results


# -- gradient suite --------------------------------------------------------------
def _grad_cases(rng):
    """(name, fn, tensors, labels, options) in 64-bit precision."""
    def weighted(fn_out, shape):
        probe = Tensor(rng.normal(size=shape))
        return lambda: (fn_out() * probe).sum()

    spec = ConvSpec(3, 4, 3, 3, stride=2, dilation=1, groups=1, padding=(1, 1, 1, 1))
    x = Tensor(rng.normal(size=(2, 3, 7, 6)))
    w = Parameter(rng.normal(size=spec.weight_shape))
    b = Parameter(rng.normal(size=4))
    yield "conv2d", weighted(lambda: functional.conv2d(x, spec, w, b), (2, 4, 4, 3)), [x, w, b], {}

    xf = Tensor(rng.normal(size=(2, 3, 8, 10)))
    mask = wavelet.build_mask("high_pass", 8, 10)
    yield "dft2_filter", weighted(lambda: functional.dft2_filter(xf, mask), xf.shape), [xf], {}

    xd = Tensor(rng.normal(size=(2, 3, 6, 5)))
    off = Tensor(rng.normal(size=(2, 18, 6, 5)) * 1.3)
    mod = Tensor(rng.random((2, 9, 6, 5)))
    wd = Parameter(rng.normal(size=(4, 3, 3, 3)))
    yield "dcn", weighted(lambda: mrffi.deform_conv2d(xd, off, mod, wd), (2, 4, 6, 5)), [xd, off, mod, wd], {}

    def module_case(name, block, *inputs, out_shape, call=None):
        perturb_parameters(block, rng)
        params = [p for _, p in block.named_parameters()]
        labels = [f"input{i}" for i in range(len(inputs))] + [n for n, _ in block.named_parameters()]
        fn = weighted(call or (lambda: block(*inputs)), out_shape)
        return name, fn, list(inputs) + params, labels, {"max_coords": 60}

    xm = Tensor(rng.normal(size=(2, 3, 6, 6)))
    mddc = mrffi.MDDC(3, 4, rng)
    yield module_case("mddc", mddc, xm, out_shape=(2, 4, 6, 6),
                      call=lambda: mrffi.mddc_forward(xm, mddc, fast=False))
    yield module_case("mrffi", mrffi.MRFFIConv(3, 8, rng), Tensor(rng.normal(size=(2, 3, 6, 6))),
                      out_shape=(2, 8, 6, 6))
    yield module_case("wfed", wavelet.WFED(4, rng), Tensor(rng.normal(size=(2, 4, 8, 8))), out_shape=(2, 4, 4, 4))
    yield module_case("hlff", hlff.HLFF(8, 16, rng), Tensor(rng.normal(size=(2, 8, 8, 8))),
                      Tensor(rng.normal(size=(2, 16, 4, 4))), out_shape=(2, 8, 8, 8))
    yield module_case("gmea", gmea.GMEA(8, rng), Tensor(rng.normal(size=(2, 8, 8, 8))), out_shape=(2, 8, 8, 8))

    logits = Tensor(rng.normal(size=(3, 1, 6, 6)))
    target = rng.random((3, 1, 6, 6)) < 0.3
    yield "soft_iou_loss", lambda: network.soft_iou_loss(logits, target), [logits], {}

    for mode, cap in (("train", 0.8), ("eval", 0.5)):
        net = perturb_parameters(network.build_network(network.NetConfig(seed=int(rng.integers(1 << 30)))), rng)
        net.to(np.float64)
        net.train(mode == "train")
        # four samples keep the 1x1 bottleneck batch statistics away from the two-value sign regime
        xi = Tensor(rng.random((4, 1, 16, 16)))
        yi = rng.random((4, 1, 16, 16)) < 0.2
        labels = ["input"] + [n for n, _ in net.named_parameters()]
        yield (f"network_{mode}", (lambda n=net, xx=xi, yy=yi: network.soft_iou_loss(n(xx), yy)),
               [xi] + [p for _, p in net.named_parameters()], labels,
               {"max_coords": 1, "max_kink_fraction": cap})


GRADIENT_CASES = ("conv2d", "dft2_filter", "dcn", "mddc", "mrffi", "wfed", "hlff", "gmea",
                  "soft_iou_loss", "network_train", "network_eval")


def run_gradient_suite(seed: int = 0, only=None) -> list:
    """Finite-difference checks, step 1e-4 relative, tolerance 1e-4."""
    results = []
    with precision(np.float64):
        rng = np.random.default_rng(seed)
        for case in _grad_cases(rng):
            name, fn, tensors = case[:3]
            labels, opts = (None, case[3]) if len(case) == 4 else case[3:]
            if only is not None and name not in only:
                continue
            start = time.perf_counter()
            rep = gradcheck.check_gradients(fn, tensors, labels, raise_on_failure=False, seed=seed, **opts)
            detail = (f"max rel err {rep.max_rel_error:.2e} over {rep.checked - len(rep.kinks)} smooth coords, "
                      f"{len(rep.kinks)} at kinks")
            if not rep.passed:
                detail += f"; worst {rep.worst}"
            results.append(CheckResult(name, rep.passed, detail, time.perf_counter() - start))
    return results


def format_results(results) -> str:
    return "\n".join(f"{'PASS' if r.ok else 'FAIL'} {r.name:<16} {r.seconds:6.2f}s  {r.detail}" for r in results)
