"""Independent reference implementations used by the tests.

Scalar oracles are plain-Python loops. The count classifier reads leaf counts
from angular harmonics of the greenness along rings around the image center,
which shares no code with the generator or the regressor.
"""
import math

import numpy as np
from scipy.ndimage import map_coordinates

PROB_CLAMP = 1e-7


def bce_oracle(real, fake):
    """(d_loss, g_loss) from per-element BCE with clamped probabilities."""
    def c(p):
        return min(max(p, PROB_CLAMP), 1 - PROB_CLAMP)

    d = -sum(math.log(c(r)) for r in real) / len(real) - sum(math.log(1 - c(f)) for f in fake) / len(fake)
    g = -sum(math.log(c(f)) for f in fake) / len(fake)
    return d, g


def metric_oracle(pred, truth):
    n = len(pred)

    def rnd(v):
        return math.floor(v + 0.5) if v >= 0 else -math.floor(-v + 0.5)

    dic = [rnd(p) - t for p, t in zip(pred, truth)]
    adic = [abs(d) for d in dic]

    def mean(xs):
        return sum(xs) / len(xs)

    def std(xs):
        m = mean(xs)
        return math.sqrt(sum((x - m) ** 2 for x in xs) / len(xs))

    mse = sum((p - t) ** 2 for p, t in zip(pred, truth)) / n
    tm = mean(truth)
    ss_tot = sum((t - tm) ** 2 for t in truth)
    r2 = None if ss_tot == 0 else 1 - sum((p - t) ** 2 for p, t in zip(pred, truth)) / ss_tot
    return mean(dic), std(dic), mean(adic), std(adic), mse, r2


def ring_features(images, n_angles=48, radii=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8), kmax=8):
    """Normalized angular spectrum (k=1..kmax) plus mean greenness on each ring."""
    images = np.asarray(images, dtype=np.float64)
    _, _, h, _ = images.shape
    center = (h - 1) / 2
    theta = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    green = images[:, 1] - 0.5 * (images[:, 0] + images[:, 2])
    rows = []
    for g in green:
        f = []
        for r in radii:
            rr = r * h / 2
            prof = map_coordinates(g, [center + rr * np.sin(theta), center + rr * np.cos(theta)], order=1,
                                   mode="nearest")
            spec = np.abs(np.fft.rfft(prof - prof.mean()))[1:kmax + 1]
            f.extend(spec / (spec.sum() + 1e-6))
            f.append(prof.mean())
        rows.append(f)
    return np.array(rows)


def fit_count_classifier(samples):
    from sklearn.linear_model import LogisticRegression
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    x = ring_features([s.pixels for s in samples])
    y = [s.leaf_count for s in samples]
    return make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000)).fit(x, y)
