"""Self-checks run by ``freqprune verify``.

Each suite draws its own seeded cases, compares two independent routes to
the same quantity and reports the worst discrepancy against a tolerance.
Gradient checks always run in float64, because finite differences are
meaningless at single precision.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .bandexec import banded_macs, execute_banded, plan_bands
from .costmodel import LayerConfig, layer_macs, overhead_ratio
from .dct import MAX_K, block_basis, dct_basis, dct_forward, dct_inverse, dct_truncated, transform_mac_count
from .fcmask import coefmask
from .masks import LayerMask, PruneMask, apply_mask
from .pointwise import PointwiseLayer, conv1x1_freq, conv1x1_spatial, freq_wrapped, pointwise_macs

# float32 tolerances sit roughly 10x above the worst error measured over the
# suites' own case distributions (1.2e-6 for round trips, 6.7e-6 for
# commutation, 2.1e-6 for banded execution).
TOLERANCES = {
    "f64": {"orthonormality": 1e-12, "roundtrip": 1e-12, "parseval": 1e-12, "commutation": 1e-10,
            "band-exec": 1e-10},
    "f32": {"orthonormality": 1e-12, "roundtrip": 1e-5, "parseval": 1e-5, "commutation": 1e-4,
            "band-exec": 1e-4},
}
GRADIENT_TOL = 1e-4
SUITES = ("orthonormality", "roundtrip", "parseval", "truncation", "commutation", "band-exec", "fcmask",
          "gradients", "cost-formulas")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    cases: int
    max_error: float
    tolerance: float
    seconds: float = 0.0
    detail: str = ""

    def to_json(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "cases": self.cases, "max_error": self.max_error,
                "tolerance": self.tolerance, "seconds": self.seconds, "detail": self.detail}


def _np_dtype(dtype: str):
    if dtype not in TOLERANCES:
        raise ValueError(f"dtype must be f32 or f64, got {dtype!r}")
    return np.float32 if dtype == "f32" else np.float64


def _shape(rng, k: int, max_side: int = 28, max_c: int = 16):
    nb = max(1, max_side // k)
    return (int(rng.integers(1, 3)), int(rng.integers(1, max_c + 1)),
            k * int(rng.integers(1, nb + 1)), k * int(rng.integers(1, nb + 1)))


def random_band(rng, c: int, k: int) -> PruneMask:
    return PruneMask.band(rng.integers(0, k * k + 1, size=c), k)


# ---------------------------------------------------------------- transforms

def check_orthonormality(dtype="f64", seed=0, cases=None) -> SuiteResult:
    tol = TOLERANCES[dtype]["orthonormality"]
    worst = 0.0
    for k in range(1, MAX_K + 1):
        for b in (dct_basis(k), block_basis(k)):
            worst = max(worst, float(np.max(np.abs(b @ b.T - np.eye(len(b))))))
    return SuiteResult("orthonormality", worst < tol, MAX_K, worst, tol)


def check_roundtrip(dtype="f64", seed=0, cases=50) -> SuiteResult:
    dt, tol = _np_dtype(dtype), TOLERANCES[dtype]["roundtrip"]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        k = int(rng.integers(1, MAX_K + 1))
        x = rng.standard_normal(_shape(rng, k)).astype(dt)
        worst = max(worst, float(np.max(np.abs(dct_inverse(dct_forward(x, k)) - x))))
    return SuiteResult("roundtrip", worst < tol, cases, worst, tol)


def check_parseval(dtype="f64", seed=0, cases=50) -> SuiteResult:
    dt, tol = _np_dtype(dtype), TOLERANCES[dtype]["parseval"]
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    for _ in range(cases):
        k = int(rng.integers(1, MAX_K + 1))
        x = rng.standard_normal(_shape(rng, k)).astype(dt)
        e_x = float(np.sum(x.astype(np.float64) ** 2))
        e_f = float(np.sum(dct_forward(x, k).data.astype(np.float64) ** 2))
        worst = max(worst, abs(e_x - e_f) / e_x)
    return SuiteResult("parseval", worst < tol, cases, worst, tol, detail="relative energy difference")


def check_truncation(dtype="f64", seed=0, cases=50) -> SuiteResult:
    """Truncated coefficients match the full transform bit for bit; dropped ones are exact zeros."""
    dt = _np_dtype(dtype)
    rng = np.random.default_rng(seed + 2)
    bad = 0
    for _ in range(cases):
        k = int(rng.integers(1, MAX_K + 1))
        n, c, h, w = _shape(rng, k)
        x = rng.standard_normal((n, c, h, w)).astype(dt)
        m = rng.integers(0, k * k + 1, size=c)
        full, part = dct_forward(x, k).data, dct_truncated(x, k, m).data
        kept = np.arange(k * k)[None, :] < m[:, None]
        ok = np.array_equal(part[:, kept], full[:, kept]) and not np.any(part[:, ~kept])
        ok &= transform_mac_count(c, h, w, k, m) == int(m.sum()) * (h // k) * (w // k) * k * k
        bad += not ok
    return SuiteResult("truncation", bad == 0, cases, float(bad), 0.0, detail="mismatching cases")


# ----------------------------------------------------------------- pointwise

def check_commutation(dtype="f64", seed=0, cases=200) -> SuiteResult:
    """Unpruned DCT -> 1x1 -> IDCT equals the spatial 1x1 conv (with and without bias)."""
    dt, tol = _np_dtype(dtype), TOLERANCES[dtype]["commutation"]
    rng = np.random.default_rng(seed + 3)
    worst = 0.0
    for i in range(cases):
        k = int(rng.choice([1, 2, 3, 4, 7]))
        n, c_in, h, w = _shape(rng, k)
        c_out = int(rng.integers(1, 17))
        x = rng.standard_normal((n, c_in, h, w)).astype(dt)
        bias = rng.standard_normal(c_out).astype(dt) if i % 2 else None
        layer = PointwiseLayer(rng.standard_normal((c_out, c_in)).astype(dt), bias)
        err = np.max(np.abs(freq_wrapped(x, layer, None, k) - conv1x1_spatial(x, layer)))
        worst = max(worst, float(err))
    return SuiteResult("commutation", worst < tol, cases, worst, tol)


def check_band_exec(dtype="f64", seed=0, cases=200) -> SuiteResult:
    """Banded execution equals masked dense execution and costs what the cost model says."""
    dt, tol = _np_dtype(dtype), TOLERANCES[dtype]["band-exec"]
    rng = np.random.default_rng(seed + 4)
    worst, mac_bad = 0.0, 0
    for _ in range(cases):
        k = int(rng.integers(1, 5))
        n, c_in, h, w = _shape(rng, k, max_side=16)
        c_out = int(rng.integers(1, 17))
        mi, mo = random_band(rng, c_in, k), random_band(rng, c_out, k)
        layer = PointwiseLayer(rng.standard_normal((c_out, c_in)).astype(dt))
        f = dct_truncated(rng.standard_normal((n, c_in, h, w)).astype(dt), k, mi.payload)
        plan = plan_bands(mi, mo, h=h, w=w, n=n)
        got = execute_banded(f, layer, plan).data
        want = apply_mask(conv1x1_freq(apply_mask(f, mi), layer), mo).data
        worst = max(worst, float(np.max(np.abs(got - want), initial=0.0)))
        cfg = LayerConfig("l", "pointwise", c_in, c_out, h, w, k=k)
        main, _, _ = layer_macs(cfg, LayerMask(mi, mo))
        macs = banded_macs(plan)
        mac_bad += macs != main * n or macs > pointwise_macs(c_in, c_out, h, w, n)
    ok = worst < tol and mac_bad == 0
    return SuiteResult("band-exec", ok, cases, worst, tol, detail=f"{mac_bad} MAC mismatches")


def check_fcmask(dtype="f64", seed=0, cases=10_000) -> SuiteResult:
    """Endpoints, the worked 4-coefficient case and ramp shape over a dense fc grid."""
    problems = []
    for q in range(1, 65):
        if np.any(coefmask(0.0, q) != 0.0) or np.any(coefmask(1.0, q) != 1.0):
            problems.append(f"endpoint q={q}")
    if coefmask(0.9, 4).tolist() != [1.0, 1.0, 1.0, (0.9 * 4) - 3]:
        problems.append("worked case")
    grid = np.linspace(0.0, 1.0, cases)
    for q in (1, 4, 9, 16, 49, 64):
        m = coefmask(grid, q)
        if np.any(np.diff(m, axis=1) > 0):
            problems.append(f"non-increasing along coefficients q={q}")
        if np.any(np.diff(m, axis=0) < 0):
            problems.append(f"monotone in fc q={q}")
        if np.any(((m > 0) & (m < 1)).sum(axis=1) > 1):
            problems.append(f"more than one fractional entry q={q}")
    return SuiteResult("fcmask", not problems, cases, float(len(problems)), 0.0, detail="; ".join(problems))


# ----------------------------------------------------------------- gradients

def _random_model(rng):
    from .nn.model import Model

    k = int(rng.integers(2, 4))
    side = 2 * k
    c0, c1 = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    bodies = [
        [{"type": "freq_pointwise", "name": "fp", "c_in": 3, "c_out": c1, "k": k}],
        [{"type": "conv2d", "name": "conv", "c_in": 3, "c_out": c0, "kernel": 3, "stride": 1, "groups": 1},
         {"type": "batchnorm", "name": "bn", "c": c0},
         {"type": "freq_pointwise", "name": "fp", "c_in": c0, "c_out": c1, "k": k}],
        [{"type": "freq_pointwise", "name": "fp", "c_in": 3, "c_out": 3, "k": k},
         {"type": "relu6", "name": "act"},
         {"type": "conv2d", "name": "dw", "c_in": 3, "c_out": 3, "kernel": 3, "stride": 2, "groups": 3}],
        [{"type": "pointwise", "name": "pw", "c_in": 3, "c_out": c0},
         {"type": "relu", "name": "act"},
         {"type": "freq_pointwise", "name": "fp", "c_in": c0, "c_out": c1, "k": k}],
    ]
    body = bodies[int(rng.integers(len(bodies)))]
    c_last = body[-1].get("c_out", 3)
    spec = {"input": [3, side, side],
            "layers": body + [{"type": "gap", "name": "pool"},
                              {"type": "dense", "name": "fc", "c_in": c_last, "c_out": 3}]}
    model = Model.from_spec(spec, seed=int(rng.integers(2**31)))
    for layer in model.freq_layers():
        layer.set_mode("soft")
        for side_name in ("fc_in", "fc_out"):
            q = layer.k * layer.k
            fc = layer.params[side_name]
            # keep every fc away from the ramp kinks at multiples of 1/q
            fc[:] = (rng.integers(1, q, size=fc.shape) + rng.uniform(0.2, 0.8, size=fc.shape)) / q
    return model


def gradient_errors(model, x, y, lam: float, eps: float = 1e-6, max_entries: int = 24, rng=None) -> dict:
    """Relative error of every analytic gradient against central differences.

    Large arrays are checked on a random subset of ``max_entries`` entries.
    The error of an array is ``|a - d| / max(|a| + |d|, 1e-10)`` over the
    checked entries, with Euclidean norms.
    """
    from .nn.train import loss_and_grads

    rng = rng or np.random.default_rng(0)

    def loss():
        return loss_and_grads(model, x, y, lam)[0]

    loss()
    analytic = {(l.name, p): l.grads[p].copy() for l in model.layers for p in l.params}
    errors = {}
    for layer in model.layers:
        for pname, arr in layer.params.items():
            flat = arr.reshape(-1)
            idx = np.arange(flat.size)
            if flat.size > max_entries:
                idx = rng.choice(flat.size, max_entries, replace=False)
            num = np.empty(len(idx))
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + eps
                up = loss()
                flat[i] = old - eps
                down = loss()
                flat[i] = old
                num[j] = (up - down) / (2 * eps)
            a = analytic[(layer.name, pname)].reshape(-1)[idx]
            errors[f"{layer.name}.{pname}"] = float(np.linalg.norm(a - num) /
                                                    max(np.linalg.norm(a) + np.linalg.norm(num), 1e-10))
    return errors


def check_gradients(dtype="f64", seed=0, cases=6) -> SuiteResult:
    rng = np.random.default_rng(seed + 5)
    worst, where = 0.0, ""
    for _ in range(cases):
        model = _random_model(rng)
        c, h, w = model.input_shape
        x = rng.standard_normal((3, c, h, w))
        y = rng.integers(0, 3, size=3)
        for name, err in gradient_errors(model, x, y, lam=float(rng.uniform(0.1, 2.0)), rng=rng).items():
            if err > worst:
                worst, where = err, name
    return SuiteResult("gradients", worst < GRADIENT_TOL, cases, worst, GRADIENT_TOL,
                       detail=f"worst: {where}" if where else "")


# --------------------------------------------------------------------- costs

def check_cost_formulas(dtype="f64", seed=0, cases=100) -> SuiteResult:
    rng = np.random.default_rng(seed + 6)
    bad = 0
    for _ in range(cases):
        k = int(rng.integers(1, MAX_K + 1))
        c_in, c_out = (int(v) for v in rng.integers(1, 1025, size=2))
        h, w = k * int(rng.integers(1, 9)), k * int(rng.integers(1, 9))
        pw, dct, idct = layer_macs(LayerConfig("l", "pointwise", c_in, c_out, h, w, k=k))
        bad += pw != c_in * c_out * h * w
        bad += dct != c_in * h * w * k * k or idct != c_out * h * w * k * k
        bad += overhead_ratio(LayerConfig("l", "pointwise", c_in, c_out, h, w, k=k)) != \
            Fraction((c_in + c_out) * k * k, c_in * c_out)
    return SuiteResult("cost-formulas", bad == 0, cases, float(bad), 0.0, detail="mismatching cases")


_CHECKS = {
    "orthonormality": check_orthonormality,
    "roundtrip": check_roundtrip,
    "parseval": check_parseval,
    "truncation": check_truncation,
    "commutation": check_commutation,
    "band-exec": check_band_exec,
    "fcmask": check_fcmask,
    "gradients": check_gradients,
    "cost-formulas": check_cost_formulas,
}


def run_suites(dtype: str = "f64", seed: int = 0, suites=None) -> list[SuiteResult]:
    _np_dtype(dtype)
    names = list(suites or SUITES)
    unknown = set(names) - set(_CHECKS)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    out = []
    for name in names:
        t0 = time.perf_counter()
        try:
            res = _CHECKS[name](dtype=dtype, seed=seed)
        except Exception as exc:  # a crashing suite is a failing suite
            res = SuiteResult(name, False, 0, float("nan"), float("nan"), detail=f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def format_table(results: list[SuiteResult]) -> str:
    lines = [f"{'suite':<16}{'result':<8}{'cases':>7}{'max error':>14}{'tolerance':>12}  detail"]
    for r in results:
        lines.append(f"{r.name:<16}{'PASS' if r.passed else 'FAIL':<8}{r.cases:>7}{r.max_error:>14.3e}"
                     f"{r.tolerance:>12.1e}  {r.detail}")
    return "\n".join(lines)
