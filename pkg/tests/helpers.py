"""Finite-difference oracle shared by the gradient tests."""

import numpy as np


def central_diff(f, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        up = f()
        x[i] = old - step
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error; 0 when both are zero."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def frozen_decoder_loss(cfg, params, batch, frozen_coarse, rescale=False):
    """Decoder loss with the encoder's coarse output held at ``frozen_coarse``.

    Rebuilds the decoder path from the public pieces so that finite
    differences see exactly the dependence the detached copy leaves behind.
    """
    from tempohier import autodiff as ad
    from tempohier.hierarchy import center_deviations, readout, upsample
    from tempohier.mixer import backbone_forward
    from tempohier.model import decoder_loss, embed_features

    spec = cfg.spec
    x = embed_features(batch, params, cfg.schema)
    cond = np.concatenate([np.zeros((len(batch), spec.c)), upsample(frozen_coarse, spec)], axis=1)
    out = backbone_forward(ad.concat([x, ad.Tensor(cond[..., None])], axis=-1), params, cfg.mixer("dec"), "dec.")
    fine = readout(frozen_coarse, center_deviations(out[..., 0], spec), spec)
    s = batch.scale[:, None]
    disp = ad.softplus(out[..., 1]) + 1e-8 if cfg.heads > 1 else None
    return decoder_loss(fine, batch.y_future / s, cfg.loss, s if rescale else 1.0, disp)


# -- toy hierarchy oracle: 2 stores x 2 items, one state / category / department

TOY_LABELS = {
    "item_id": np.array(["FOODS_1_001", "FOODS_1_002", "FOODS_1_001", "FOODS_1_002"]),
    "dept_id": np.array(["FOODS_1"] * 4),
    "cat_id": np.array(["FOODS"] * 4),
    "store_id": np.array(["CA_1", "CA_1", "CA_2", "CA_2"]),
    "state_id": np.array(["CA"] * 4),
}
_ALL, _STORES, _ITEMS, _SINGLE = [[0, 1, 2, 3]], [[0, 1], [2, 3]], [[0, 2], [1, 3]], [[0], [1], [2], [3]]
# written out by hand, one entry per level in the usual order
TOY_GROUPS = [_ALL, _ALL, _STORES, _ALL, _ALL, _ALL, _ALL, _STORES, _STORES, _ITEMS, _ITEMS, _SINGLE]


def oracle_wrmsse(history, actual, forecast, dollars) -> float:
    """Plain-loop transcription of the weighted RMSSE over the toy groups."""
    total = 0.0
    for groups in TOY_GROUPS:
        scores, weights = [], []
        for members in groups:
            hist = [sum(float(history[m][t]) for m in members) for t in range(len(history[0]))]
            act = [sum(float(actual[m][t]) for m in members) for t in range(len(actual[0]))]
            fc = [sum(float(forecast[m][t]) for m in members) for t in range(len(actual[0]))]
            start = next((t for t, v in enumerate(hist) if v != 0), None)
            if start is None or start >= len(hist) - 1:
                continue
            diffs = [(hist[t] - hist[t - 1]) ** 2 for t in range(start + 1, len(hist))]
            scale = sum(diffs) / len(diffs)
            if scale == 0:
                continue
            mse = sum((a - f) ** 2 for a, f in zip(act, fc)) / len(act)
            scores.append((mse / scale) ** 0.5)
            weights.append(sum(float(dollars[m]) for m in members))
        wsum = sum(weights)
        total += sum(w / wsum * s for w, s in zip(weights, scores)) / len(TOY_GROUPS)
    return total


def oracle_point_metrics(y, fine, coarse, w):
    """RMSE daily / weekly / residual, median FEV and MAD with explicit loops."""
    n, h = len(y), len(y[0])
    k = h // w
    d2 = w2 = r2 = ad_sum = 0.0
    fevs = []
    for i in range(n):
        ybar = [sum(y[i][j * w:(j + 1) * w]) / w for j in range(k)]
        for t in range(h):
            d2 += (y[i][t] - fine[i][t]) ** 2
            ad_sum += abs(y[i][t] - fine[i][t])
            r2 += ((y[i][t] - ybar[t // w]) - (fine[i][t] - coarse[i][t // w])) ** 2
        for j in range(k):
            w2 += (ybar[j] - coarse[i][j]) ** 2
        mean = sum(y[i]) / h
        sst = sum((v - mean) ** 2 for v in y[i])
        sse = sum((a - b) ** 2 for a, b in zip(y[i], fine[i]))
        fevs.append(0.0 if sst == 0 else max(0.0, 1.0 - sse / sst))
    fevs.sort()
    med = fevs[n // 2] if n % 2 else 0.5 * (fevs[n // 2 - 1] + fevs[n // 2])
    return {
        "rmse_daily": (d2 / (n * h)) ** 0.5,
        "rmse_weekly": (w2 / (n * k)) ** 0.5,
        "rmse_residual": (r2 / (n * h)) ** 0.5,
        "mfev": med,
        "mad": ad_sum / (n * h),
    }
