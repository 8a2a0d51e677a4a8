"""Hybrid-granularity feature grouping kernel: forward plus analytic backward.

Feature grouping maps an (H, W, C) feature map onto N learnable prototypes
with scaled dot-product attention, double normalization (softmax across
prototypes per pixel, then per-prototype normalization across pixels) and a
GRU prototype update, iterated T times. Each final prototype is broadcast
back onto the grid, downsampled C -> C/N by a shared linear map and the N
results are concatenated, preserving the input shape.

Two groupings at granularities N1 and N2 are combined with a gated
second-order residual:

    out = F + alpha * G1 + (1 - alpha) * G2,   G1 = grouping_N1(F),
    G2 = grouping_N2(F + G1),
    alpha = sigmoid(gate_w . concat(G1, G2) + gate_b)   (per pixel)

All math runs in float64; the backward pass is hand-derived and verified
against central finite differences by :func:`check_gradients`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import IndivisibleChannels, ShapeMismatch

FD_STEP = 1e-5
DEFAULT_ITERATIONS = 3
DEFAULT_GRANULARITIES = (2, 4)


@dataclass(frozen=True)
class GruParams:
    """Standard GRU cell weights, shared across prototypes.

    Gates act row-wise: z = sigmoid(u @ wz.T + p @ uz.T + bz), likewise for
    the reset gate; the candidate uses the reset-scaled state.
    """

    wz: np.ndarray
    uz: np.ndarray
    bz: np.ndarray
    wr: np.ndarray
    ur: np.ndarray
    br: np.ndarray
    wh: np.ndarray
    uh: np.ndarray
    bh: np.ndarray


@dataclass(frozen=True)
class GroupParams:
    """All learnable tensors of one feature-grouping instance."""

    wq: np.ndarray  # (C, C)
    wk: np.ndarray  # (C, C)
    wv: np.ndarray  # (C, C)
    p0: np.ndarray  # (N, C) initial prototypes
    pe: np.ndarray  # (H, W, C) positional embedding
    gru: GruParams
    down: np.ndarray  # (C, C // N)

    @property
    def n_prototypes(self) -> int:
        return self.p0.shape[0]


@dataclass(frozen=True)
class GateParams:
    gw: np.ndarray  # (2C,)
    gb: float


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_group_shapes(params: GroupParams, h: int, w: int, c: int):
    n = params.p0.shape[0]
    if c % n != 0:
        raise IndivisibleChannels(f"C={c} not divisible by N={n}")
    expect = {
        "wq": (c, c),
        "wk": (c, c),
        "wv": (c, c),
        "p0": (n, c),
        "pe": (h, w, c),
        "down": (c, c // n),
    }
    for name, shape in expect.items():
        got = getattr(params, name).shape
        if got != shape:
            raise ShapeMismatch(f"{name}: expected {shape}, got {got}")
    for name in ("wz", "uz", "wr", "ur", "wh", "uh"):
        if getattr(params.gru, name).shape != (c, c):
            raise ShapeMismatch(f"gru.{name}: expected {(c, c)}")
    for name in ("bz", "br", "bh"):
        if getattr(params.gru, name).shape != (c,):
            raise ShapeMismatch(f"gru.{name}: expected {(c,)}")


@dataclass(frozen=True)
class AttentionStep:
    """One double-normalized attention read: coefficients and the integral value."""

    a_bar: np.ndarray  # (M, N) softmax over prototypes, rows sum to 1
    d: np.ndarray      # (M, N) per-prototype normalization, columns sum to 1
    u: np.ndarray      # (N, C) integral value
    degenerate: np.ndarray  # (N,) columns that fell back to uniform weights


def attention_step(p: np.ndarray, fp: np.ndarray, params: GroupParams) -> AttentionStep:
    """Attend the positioned features to the prototypes.

    ``p`` is (N, C), ``fp`` is (M, C) with M = H * W. A prototype whose
    attention column underflows to zero mass is resolved with uniform
    weights and flagged.
    """
    c = fp.shape[1]
    q = p @ params.wq.T
    k = fp @ params.wk.T
    v = fp @ params.wv.T
    a = (k @ q.T) / np.sqrt(c)
    a = a - a.max(axis=1, keepdims=True)
    ea = np.exp(a)
    a_bar = ea / ea.sum(axis=1, keepdims=True)
    s = a_bar.sum(axis=0)
    degenerate = s == 0.0
    safe = np.where(degenerate, 1.0, s)
    d = a_bar / safe
    if degenerate.any():
        d[:, degenerate] = 1.0 / fp.shape[0]
    u = d.T @ v
    return AttentionStep(a_bar=a_bar, d=d, u=u, degenerate=degenerate)


def gru_step(u: np.ndarray, p: np.ndarray, gru: GruParams) -> np.ndarray:
    """Standard GRU cell applied per prototype row; returns the new state."""
    if u.shape != p.shape:
        raise ShapeMismatch(f"u {u.shape} vs p {p.shape}")
    z = _sigmoid(u @ gru.wz.T + p @ gru.uz.T + gru.bz)
    r = _sigmoid(u @ gru.wr.T + p @ gru.ur.T + gru.br)
    hh = np.tanh(u @ gru.wh.T + (r * p) @ gru.uh.T + gru.bh)
    return (1.0 - z) * p + z * hh


def _group_forward(f2d: np.ndarray, params: GroupParams, iterations: int):
    """Grouping forward on flattened (M, C) features; returns output and cache."""
    m, c = f2d.shape
    n = params.n_prototypes
    pe2d = params.pe.reshape(m, c)
    fp = f2d + pe2d
    k = fp @ params.wk.T
    v = fp @ params.wv.T
    p = params.p0
    steps = []
    for _ in range(iterations):
        q = p @ params.wq.T
        a = (k @ q.T) / np.sqrt(c)
        a = a - a.max(axis=1, keepdims=True)
        ea = np.exp(a)
        a_bar = ea / ea.sum(axis=1, keepdims=True)
        s = a_bar.sum(axis=0)
        degenerate = s == 0.0
        safe = np.where(degenerate, 1.0, s)
        d = a_bar / safe
        if degenerate.any():
            d[:, degenerate] = 1.0 / m
        u = d.T @ v
        z = _sigmoid(u @ params.gru.wz.T + p @ params.gru.uz.T + params.gru.bz)
        r = _sigmoid(u @ params.gru.wr.T + p @ params.gru.ur.T + params.gru.br)
        hh = np.tanh(u @ params.gru.wh.T + (r * p) @ params.gru.uh.T + params.gru.bh)
        p_next = (1.0 - z) * p + z * hh
        steps.append(
            {"p": p, "q": q, "a_bar": a_bar, "s": safe, "deg": degenerate,
             "d": d, "u": u, "z": z, "r": r, "hh": hh}
        )
        p = p_next
    cn = c // n
    out = np.empty((m, c))
    for i in range(n):
        out[:, i * cn : (i + 1) * cn] = (p[i][None, :] + pe2d) @ params.down
    cache = {"fp": fp, "k": k, "v": v, "pe2d": pe2d, "p_final": p, "steps": steps}
    return out, cache


def _zero_grads(params: GroupParams) -> dict:
    g = {
        "wq": np.zeros_like(params.wq),
        "wk": np.zeros_like(params.wk),
        "wv": np.zeros_like(params.wv),
        "p0": np.zeros_like(params.p0),
        "pe": np.zeros_like(params.pe),
        "down": np.zeros_like(params.down),
    }
    for name in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"):
        g[f"gru.{name}"] = np.zeros_like(getattr(params.gru, name))
    return g


def _group_backward(dout: np.ndarray, cache: dict, params: GroupParams):
    """Backward through one grouping instance; returns (d_features, grads)."""
    m, c = dout.shape
    n = params.n_prototypes
    cn = c // n
    grads = _zero_grads(params)
    pe2d = cache["pe2d"]
    k, v, fp = cache["k"], cache["v"], cache["fp"]
    p_final = cache["p_final"]
    dpe2d = np.zeros_like(pe2d)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)

    dp = np.zeros_like(p_final)
    for i in range(n):
        do_i = dout[:, i * cn : (i + 1) * cn]
        g_i = p_final[i][None, :] + pe2d
        grads["down"] += g_i.T @ do_i
        dg_i = do_i @ params.down.T
        dpe2d += dg_i
        dp[i] = dg_i.sum(axis=0)

    sqrt_c = np.sqrt(c)
    for step in reversed(cache["steps"]):
        p, q = step["p"], step["q"]
        a_bar, s, deg, d = step["a_bar"], step["s"], step["deg"], step["d"]
        u, z, r, hh = step["u"], step["z"], step["r"], step["hh"]

        # p_next = (1 - z) * p + z * hh
        dz = dp * (hh - p)
        dhh = dp * z
        dp_cur = dp * (1.0 - z)

        dah = dhh * (1.0 - hh * hh)
        grads["gru.wh"] += dah.T @ u
        du = dah @ params.gru.wh
        rp = r * p
        grads["gru.uh"] += dah.T @ rp
        drp = dah @ params.gru.uh
        dr = drp * p
        dp_cur += drp * r
        grads["gru.bh"] += dah.sum(axis=0)

        dar = dr * r * (1.0 - r)
        grads["gru.wr"] += dar.T @ u
        du += dar @ params.gru.wr
        grads["gru.ur"] += dar.T @ p
        dp_cur += dar @ params.gru.ur
        grads["gru.br"] += dar.sum(axis=0)

        daz = dz * z * (1.0 - z)
        grads["gru.wz"] += daz.T @ u
        du += daz @ params.gru.wz
        grads["gru.uz"] += daz.T @ p
        dp_cur += daz @ params.gru.uz
        grads["gru.bz"] += daz.sum(axis=0)

        # u = d.T @ v
        dd = v @ du.T
        dv += d @ du

        # d = a_bar / column_sum(a_bar); degenerate columns are constants
        dab = (dd - (dd * d).sum(axis=0, keepdims=True)) / s
        if deg.any():
            dab[:, deg] = 0.0

        # a_bar = row softmax(a)
        da = a_bar * (dab - (dab * a_bar).sum(axis=1, keepdims=True))

        # a = k @ q.T / sqrt(C)
        dk += (da @ q) / sqrt_c
        dq = (da.T @ k) / sqrt_c

        # q = p @ wq.T
        grads["wq"] += dq.T @ p
        dp_cur += dq @ params.wq

        dp = dp_cur

    grads["p0"] += dp
    grads["wk"] += dk.T @ fp
    grads["wv"] += dv.T @ fp
    dfp = dk @ params.wk + dv @ params.wv
    dpe2d += dfp
    grads["pe"] += dpe2d.reshape(params.pe.shape)
    return dfp, grads


def group(
    f: np.ndarray, params: GroupParams, iterations: int = DEFAULT_ITERATIONS
) -> np.ndarray:
    """Feature grouping of an (H, W, C) map; output has the same shape.

    Raises:
        IndivisibleChannels: when C is not divisible by the prototype count.
        ShapeMismatch: on inconsistent parameter shapes.
    """
    if f.ndim != 3:
        raise ShapeMismatch(f"expected (H, W, C) features, got {f.shape}")
    if iterations < 1:
        raise ShapeMismatch(f"iterations must be >= 1, got {iterations}")
    h, w, c = f.shape
    _check_group_shapes(params, h, w, c)
    f2d = f.reshape(h * w, c).astype(np.float64)
    out, _ = _group_forward(f2d, params, iterations)
    return out.reshape(h, w, c)


def _rk2_forward(
    f: np.ndarray,
    params1: GroupParams,
    params2: GroupParams,
    gate: GateParams,
    iterations: int,
):
    h, w, c = f.shape
    _check_group_shapes(params1, h, w, c)
    _check_group_shapes(params2, h, w, c)
    if gate.gw.shape != (2 * c,):
        raise ShapeMismatch(f"gate weight: expected {(2 * c,)}, got {gate.gw.shape}")
    f2d = f.reshape(h * w, c).astype(np.float64)
    g1, cache1 = _group_forward(f2d, params1, iterations)
    f_mid = f2d + g1
    g2, cache2 = _group_forward(f_mid, params2, iterations)
    cat = np.concatenate([g1, g2], axis=1)
    pre = cat @ gate.gw + gate.gb
    alpha = _sigmoid(pre)
    out = f2d + alpha[:, None] * g1 + (1.0 - alpha)[:, None] * g2
    cache = {
        "f2d": f2d, "g1": g1, "g2": g2, "cache1": cache1, "cache2": cache2,
        "cat": cat, "alpha": alpha, "shape": (h, w, c),
    }
    return out, cache


def rk2_aggregate(
    f: np.ndarray,
    params1: GroupParams,
    params2: GroupParams,
    gate: GateParams,
    iterations: int = DEFAULT_ITERATIONS,
) -> np.ndarray:
    """Gated second-order aggregation of two grouping granularities."""
    out, cache = _rk2_forward(f, params1, params2, gate, iterations)
    h, w, c = cache["shape"]
    return out.reshape(h, w, c)


def hgfg_backward(
    f: np.ndarray,
    params1: GroupParams,
    params2: GroupParams,
    gate: GateParams,
    upstream_grad: np.ndarray,
    iterations: int = DEFAULT_ITERATIONS,
) -> dict:
    """Gradients of <upstream_grad, rk2_aggregate(f)> w.r.t. f and all parameters.

    Returns a dict with keys "f", "g1.<param>", "g2.<param>", "gate.gw",
    "gate.gb"; gradients match the forward's float64 evaluation.
    """
    if upstream_grad.shape != f.shape:
        raise ShapeMismatch(f"upstream {upstream_grad.shape} vs features {f.shape}")
    out, cache = _rk2_forward(f, params1, params2, gate, iterations)
    h, w, c = cache["shape"]
    m = h * w
    dout = upstream_grad.reshape(m, c).astype(np.float64)
    g1, g2, cat, alpha = cache["g1"], cache["g2"], cache["cat"], cache["alpha"]

    df = dout.copy()
    dg1 = alpha[:, None] * dout
    dg2 = (1.0 - alpha)[:, None] * dout
    dalpha = (dout * (g1 - g2)).sum(axis=1)
    dpre = dalpha * alpha * (1.0 - alpha)
    dgw = cat.T @ dpre
    dgb = float(dpre.sum())
    dcat = dpre[:, None] * gate.gw[None, :]
    dg1 += dcat[:, :c]
    dg2 += dcat[:, c:]

    df_mid, grads2 = _group_backward(dg2, cache["cache2"], params2)
    df += df_mid
    dg1 += df_mid
    df1, grads1 = _group_backward(dg1, cache["cache1"], params1)
    df += df1

    result = {"f": df.reshape(f.shape), "gate.gw": dgw, "gate.gb": dgb}
    for name, g in grads1.items():
        result[f"g1.{name}"] = g
    for name, g in grads2.items():
        result[f"g2.{name}"] = g
    return result


def init_group_params(rng: np.random.Generator, h: int, w: int, c: int, n: int) -> GroupParams:
    """Well-conditioned random parameters for testing and gradient checks."""
    if c % n != 0:
        raise IndivisibleChannels(f"C={c} not divisible by N={n}")
    sc = 1.0 / np.sqrt(c)
    gru = GruParams(
        wz=rng.standard_normal((c, c)) * sc,
        uz=rng.standard_normal((c, c)) * sc,
        bz=rng.standard_normal(c) * 0.1,
        wr=rng.standard_normal((c, c)) * sc,
        ur=rng.standard_normal((c, c)) * sc,
        br=rng.standard_normal(c) * 0.1,
        wh=rng.standard_normal((c, c)) * sc,
        uh=rng.standard_normal((c, c)) * sc,
        bh=rng.standard_normal(c) * 0.1,
    )
    return GroupParams(
        wq=rng.standard_normal((c, c)) * sc,
        wk=rng.standard_normal((c, c)) * sc,
        wv=rng.standard_normal((c, c)) * sc,
        p0=rng.standard_normal((n, c)),
        pe=rng.standard_normal((h, w, c)) * 0.5,
        gru=gru,
        down=rng.standard_normal((c, c // n)) * sc,
    )


def init_gate_params(rng: np.random.Generator, c: int) -> GateParams:
    return GateParams(gw=rng.standard_normal(2 * c) / np.sqrt(2 * c),
                      gb=float(rng.standard_normal() * 0.1))


def _param_arrays(prefix: str, params: GroupParams):
    yield f"{prefix}.wq", params.wq
    yield f"{prefix}.wk", params.wk
    yield f"{prefix}.wv", params.wv
    yield f"{prefix}.p0", params.p0
    yield f"{prefix}.pe", params.pe
    for name in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh"):
        yield f"{prefix}.gru.{name}", getattr(params.gru, name)
    yield f"{prefix}.down", params.down


def _rebuild_group(params: GroupParams, prefix: str, arrays: dict) -> GroupParams:
    gru = GruParams(**{
        name: arrays[f"{prefix}.gru.{name}"]
        for name in ("wz", "uz", "bz", "wr", "ur", "br", "wh", "uh", "bh")
    })
    return replace(
        params,
        wq=arrays[f"{prefix}.wq"], wk=arrays[f"{prefix}.wk"], wv=arrays[f"{prefix}.wv"],
        p0=arrays[f"{prefix}.p0"], pe=arrays[f"{prefix}.pe"], gru=gru,
        down=arrays[f"{prefix}.down"],
    )


def check_gradients(
    seed: int,
    dims: tuple[int, int, int] = (3, 3, 4),
    granularities: tuple[int, int] = DEFAULT_GRANULARITIES,
    iterations: int = DEFAULT_ITERATIONS,
    fd_step: float = FD_STEP,
) -> dict[str, float]:
    """Compare analytic gradients with central finite differences.

    Returns the max relative error per parameter group (every group appears
    exactly once); errors are relative to the largest gradient magnitude in
    the group. Deterministic given the seed.
    """
    h, w, c = dims
    n1, n2 = granularities
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((h, w, c))
    params1 = init_group_params(rng, h, w, c, n1)
    params2 = init_group_params(rng, h, w, c, n2)
    gate = init_gate_params(rng, c)
    gout = rng.standard_normal((h, w, c))

    analytic = hgfg_backward(f, params1, params2, gate, gout, iterations)

    arrays = {"f": f.copy(), "gate.gw": gate.gw.copy(),
              "gate.gb": np.array([gate.gb])}
    for name, arr in _param_arrays("g1", params1):
        arrays[name] = arr.copy()
    for name, arr in _param_arrays("g2", params2):
        arrays[name] = arr.copy()

    def loss() -> float:
        p1 = _rebuild_group(params1, "g1", arrays)
        p2 = _rebuild_group(params2, "g2", arrays)
        gt = GateParams(gw=arrays["gate.gw"], gb=float(arrays["gate.gb"][0]))
        out = rk2_aggregate(arrays["f"], p1, p2, gt, iterations)
        return float(np.sum(gout * out))

    report = {}
    for name, arr in arrays.items():
        fd = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        fd_flat = fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + fd_step
            up = loss()
            flat[i] = orig - fd_step
            down = loss()
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * fd_step)
        ana = analytic["gate.gb"] if name == "gate.gb" else analytic[name]
        ana = np.asarray(ana, dtype=np.float64).reshape(fd.shape)
        scale = max(np.max(np.abs(ana)), np.max(np.abs(fd)), 1e-8)
        report[name] = float(np.max(np.abs(ana - fd)) / scale)
    return report
