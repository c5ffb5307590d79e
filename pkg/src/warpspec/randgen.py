"""Random kernel generator for property tests (GEMM-, attention- and elementwise-shaped)."""
from __future__ import annotations

import random

KINDS = ("gemm", "attention", "elementwise")


def _pick(r, xs):
    return xs[r.randrange(len(xs))]


def gemm_kernel(r: random.Random):
    tm, tn, tk = _pick(r, (2, 4, 8)), _pick(r, (2, 4, 8)), _pick(r, (2, 4, 8))
    gm, gn = r.randint(1, 2), r.randint(1, 2)
    trip = r.randint(1, 8)
    transb = r.random() < 0.5
    act = _pick(r, (None, "relu", "neg", "abs"))
    M, N, K = gm * tm, gn * tn, trip * tk
    bshape = f"{N}x{K}" if transb else f"{K}x{N}"
    yload = (f"y = tma_load b[o_bn, o_k] : {tn}x{tk} int" if transb
             else f"y = tma_load b[o_k, o_bn] : {tk}x{tn} int")
    tb = ", transb" if transb else ""
    epi = f"  out = ew {act} acc\n" if act else ""
    out = "out" if act else "acc"
    return f"""kernel rgemm(a: buf<{M}x{K} int>, b: buf<{bshape} int>, c: buf<{M}x{N} int>) grid {gm * gn} {{
  zero = const 0
  pm = idx mod pid, {gm}
  pn = idx div pid, {gm}
  o_am = idx mul pm, {tm}
  o_bn = idx mul pn, {tn}
  acc0 = const zeros : {tm}x{tn} int
  loop k in 0..{trip} iter (acc = acc0, o_k = zero) {{
    x = tma_load a[o_am, o_k] : {tm}x{tk} int
    {yload}
    acc1 = dot x, y, acc=acc{tb}
    o_k1 = idx add o_k, {tk}
    yield acc1, o_k1
  }}
{epi}  o_cm = idx mul pm, {tm}
  o_cn = idx mul pn, {tn}
  store c[o_cm, o_cn] = {out}
}}
"""


def attention_kernel(r: random.Random):
    tm, tn = _pick(r, (2, 4, 8)), _pick(r, (2, 4, 8))
    dk, dv = _pick(r, (2, 4, 8)), _pick(r, (2, 4, 8))
    g = r.randint(1, 3)
    trip = r.randint(1, 8)
    red = _pick(r, ("max", "sum", "min"))
    shift = _pick(r, ("sub", "add", "max"))
    return f"""kernel rattn(q: buf<{g * tm}x{dk} int>, kk: buf<{trip * tn}x{dk} int>, v: buf<{trip * tn}x{dv} int>, o: buf<{g * tm}x{dv} int>) grid {g} {{
  zero = const 0
  om = idx mul pid, {tm}
  qt = tma_load q[om, zero] : {tm}x{dk} int
  s0 = const zeros : {tm}x{tn} int
  acc0 = const zeros : {tm}x{dv} int
  m0 = const zeros : {tm}x1 int
  loop k in 0..{trip} iter (acc = acc0, m = m0, okv = zero) {{
    kt = tma_load kk[okv, zero] : {tn}x{dk} int
    vt = tma_load v[okv, zero] : {tn}x{dv} int
    s = dot qt, kt, acc=s0, transb
    mx = reduce {red} s axis=1
    p = ew {shift} s, mx
    m1 = ew max m, mx
    acc1 = dot p, vt, acc=acc
    okv1 = idx add okv, {tn}
    yield acc1, m1, okv1
  }}
  out = ew add acc, m
  store o[om, zero] = out
}}
"""


def elementwise_kernel(r: random.Random):
    tm, tn = _pick(r, (2, 4, 8)), _pick(r, (2, 4, 8))
    g = r.randint(1, 3)
    trip = r.randint(1, 8)
    fn = _pick(r, ("add", "sub", "max", "min", "mul"))
    return f"""kernel rew(a: buf<{g * tm}x{trip * tn} int>, c: buf<{g * tm}x{tn} int>) grid {g} {{
  zero = const 0
  om = idx mul pid, {tm}
  acc0 = const zeros : {tm}x{tn} int
  loop k in 0..{trip} iter (acc = acc0, oc = zero) {{
    x = tma_load a[om, oc] : {tm}x{tn} int
    t = ew relu x
    acc1 = ew {fn} acc, t
    oc1 = idx add oc, {tn}
    yield acc1, oc1
  }}
  store c[om, zero] = acc
}}
"""


GENERATORS = {"gemm": gemm_kernel, "attention": attention_kernel, "elementwise": elementwise_kernel}


def random_kernel_text(seed, kind=None):
    r = random.Random(seed)
    kind = kind or _pick(r, KINDS)
    return GENERATORS[kind](r)
