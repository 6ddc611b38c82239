"""Shared test oracles.

`shadow_loss` re-implements the velocity network forward pass in plain
float64 numpy, independent of the autodiff engine, so finite-difference
gradient checks are not drowned by float32 rounding of the engine's own
loss evaluation.
"""

import numpy as np


def conv64(x, w, b, stride=1, padding=None):
    kh = w.shape[2]
    p = kh // 2 if padding is None else padding
    if p:
        x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    bsz, cin, hp, wp = x.shape
    cout = w.shape[0]
    ho = (hp - kh) // stride + 1
    wo = (wp - kh) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kh), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(bsz * ho * wo, -1)
    out = cols @ w.reshape(cout, -1).T + b
    return out.reshape(bsz, ho, wo, cout).transpose(0, 3, 1, 2)


def gn64(x, gamma, beta, groups, eps=1e-5):
    b, c, h, w = x.shape
    xg = x.reshape(b, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    xhat = ((xg - mu) / np.sqrt(var + eps)).reshape(b, c, h, w)
    return xhat * gamma.reshape(1, c, 1, 1) + beta.reshape(1, c, 1, 1)


def silu64(x):
    return x / (1.0 + np.exp(-x))


def up2x64(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def time_embed64(ts, dim):
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    out = np.empty((len(ts), dim))
    for i, t in enumerate(ts):
        ang = 1000.0 * float(t) * freqs
        out[i, 0::2] = np.sin(ang)
        out[i, 1::2] = np.cos(ang)
    return out


def _block(p, prefix, x, temb, groups):
    h = conv64(x, p[f"{prefix}.conv.w"], p[f"{prefix}.conv.b"])
    h = gn64(h, p[f"{prefix}.norm.gamma"], p[f"{prefix}.norm.beta"], groups)
    bias = temb @ p[f"{prefix}.tproj.w"] + p[f"{prefix}.tproj.b"]
    return silu64(h + bias[:, :, None, None])


def _encoder(p, prefix, x, temb, groups):
    h = conv64(x, p[f"{prefix}.stem.w"], p[f"{prefix}.stem.b"])
    s1 = _block(p, f"{prefix}.b1b", _block(p, f"{prefix}.b1a", h, temb, groups),
                temb, groups)
    h = conv64(s1, p[f"{prefix}.down1.w"], p[f"{prefix}.down1.b"], stride=2)
    s2 = _block(p, f"{prefix}.b2b", _block(p, f"{prefix}.b2a", h, temb, groups),
                temb, groups)
    h = conv64(s2, p[f"{prefix}.down2.w"], p[f"{prefix}.down2.b"], stride=2)
    mid = _block(p, f"{prefix}.midb", _block(p, f"{prefix}.mida", h, temb, groups),
                 temb, groups)
    return s1, s2, mid


def shadow_velocity_forward(params, model, zt, t, cond):
    """Float64 forward of VelocityNet from a {name: float64 array} dict."""
    p = params
    groups = model.groups
    b = zt.shape[0]
    ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (b,))
    emb = time_embed64(ts, model.time_dim)
    temb = silu64(emb @ p["tmlp.w"] + p["tmlp.b"])
    s1, s2, mid = _encoder(p, "enc", zt, temb, groups)
    if cond is not None:
        c = cond.astype(np.float64)
        hid = silu64(conv64(c, p["entry.adapter.fc1.w"], p["entry.adapter.fc1.b"],
                            padding=0))
        hid = conv64(hid, p["entry.adapter.fc2.w"], p["entry.adapter.fc2.b"],
                     padding=0)
        c = c + p["entry.adapter.gamma"].reshape(1, 1, 1, 1) * hid
        r = conv64(c, p["entry.zconv.w"], p["entry.zconv.b"], padding=0)
        zb = temb @ p["entry.ztproj.w"] + p["entry.ztproj.b"]
        r = r + zb[:, :, None, None]
        g1, g2, gmid = _encoder(p, "inj", r, temb, groups)
        s1 = s1 + conv64(g1, p["j1.w"], p["j1.b"], padding=0)
        s2 = s2 + conv64(g2, p["j2.w"], p["j2.b"], padding=0)
        mid = mid + conv64(gmid, p["jmid.w"], p["jmid.b"], padding=0)
    u = np.concatenate([up2x64(mid), s2], axis=1)
    u = _block(p, "dec1b", _block(p, "dec1a", u, temb, groups), temb, groups)
    u = np.concatenate([up2x64(u), s1], axis=1)
    u = _block(p, "dec2b", _block(p, "dec2a", u, temb, groups), temb, groups)
    return conv64(u, p["out.w"], p["out.b"])


def shadow_loss(params, model, zt, t, cond, target):
    v = shadow_velocity_forward(params, model, zt, t, cond)
    return float(np.mean((target - v) ** 2))


def params64(model):
    return {name: p.data.astype(np.float64) for name, p in model.named_parameters()}


def fd_group_errors(model, zt, t, cond, target, h=1e-3, seed=0):
    """Central finite differences of the float64 shadow loss against the
    engine's analytic gradients, one random direction per parameter group.

    Returns {group name: relative error} with a 1e-4 absolute floor on the
    denominator.
    """
    from rectiflow import autodiff as ad
    from rectiflow.autodiff import Tensor
    from rectiflow.nn import Condition

    model.zero_grad()
    cond_obj = Condition(cond.astype(np.float32)) if cond is not None else None
    v = model.forward(Tensor(zt.astype(np.float32)), t, cond_obj)
    loss = ad.tmean(ad.square(ad.sub(Tensor(target.astype(np.float32)), v)))
    loss.backward()

    base = params64(model)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in model.named_parameters():
        d = rng.standard_normal(p.data.shape)
        d /= max(np.linalg.norm(d), 1e-12)
        analytic = float((p.grad.astype(np.float64) * d).sum()) if p.grad is not None else 0.0
        for sign in (+1, -1):
            base[name] = p.data.astype(np.float64) + sign * h * d
            if sign > 0:
                lp = shadow_loss(base, model, zt, t, cond, target)
            else:
                lm = shadow_loss(base, model, zt, t, cond, target)
        base[name] = p.data.astype(np.float64)
        numeric = (lp - lm) / (2 * h)
        errors[name] = abs(analytic - numeric) / max(abs(numeric), 1e-4)
    return errors
