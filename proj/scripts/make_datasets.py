"""Writes the bundled benchmark CSVs into data/ (features..., integer label)."""

import pathlib

import numpy as np
from sklearn import datasets

OUT = pathlib.Path(__file__).resolve().parent.parent / "data"


def write(name, x, y):
    OUT.mkdir(exist_ok=True)
    rows = [",".join(f"{v:.6g}" for v in xi) + f",{int(yi)}" for xi, yi in zip(x, y)]
    (OUT / f"{name}.csv").write_text("\n".join(rows) + "\n")
    print(f"{name}: N={x.shape[0]} T={x.shape[1]} classes={len(set(y))}")


def subsample(x, y, n, rng):
    if x.shape[0] <= n:
        return x, y
    idx = np.sort(rng.choice(x.shape[0], size=n, replace=False))
    return x[idx], y[idx]


def waveform(n, rng):
    # Breiman's waveform generator: convex mixtures of two of three shifted triangles plus unit noise
    i = np.arange(1, 22)
    h1 = np.maximum(6 - np.abs(i - 11), 0)
    h2 = np.maximum(6 - np.abs(i - 15), 0)
    h3 = np.maximum(6 - np.abs(i - 7), 0)
    pairs = [(h1, h2), (h1, h3), (h2, h3)]
    y = rng.integers(0, 3, size=n)
    u = rng.random(n)[:, None]
    a = np.stack([pairs[c][0] for c in y])
    b = np.stack([pairs[c][1] for c in y])
    return u * a + (1 - u) * b + rng.standard_normal((n, 21)), y


def main():
    rng = np.random.default_rng(20240611)
    write("iris", *datasets.load_iris(return_X_y=True))
    write("wine", *datasets.load_wine(return_X_y=True))
    x, y = datasets.load_breast_cancer(return_X_y=True)
    write("breast_cancer", x, y)
    x, y = datasets.load_digits(return_X_y=True)
    pooled = x.reshape(-1, 4, 2, 4, 2).sum(axis=(2, 4)).reshape(-1, 16)
    write("digits", *subsample(pooled, y, 600, rng))
    write("waveform", *waveform(600, rng))


if __name__ == "__main__":
    main()
