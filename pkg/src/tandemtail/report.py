"""Figure rendering for the report command.

Renders the verification artifacts as PNG files next to the CSV output:
per-node log-scale CCDFs with the fitted and predicted slopes, the pairwise
dependence-ratio profiles, the joint factorization ratios, and the
standardized block-maxima ECDF against the standard Gumbel curve.
Matplotlib is imported lazily so the analyze/simulate/verify paths never
load it.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import tails


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def render_figures(out_dir: Path, manifest, result) -> list[Path]:
    plt = _pyplot()
    out_dir = Path(out_dir)
    written: list[Path] = []
    acc = result.accumulator
    report = result.kernel

    fig, axes = plt.subplots(1, 3, figsize=(12.5, 3.6), sharey=True)
    for node, ax in zip((1, 2, 3), axes):
        levels, probs = tails.empirical_ccdf(acc, node)
        mask = probs > 0
        ax.semilogy(levels[mask], probs[mask], lw=1.2, label="simulated")
        pred = report.prediction(node)
        fit = next((f for f in result.fits if f.node == node), None)
        if fit is not None:
            z = np.linspace(fit.window[0], fit.window[1], 50)
            ax.semilogy(
                z,
                np.exp(fit.intercept - fit.alpha_hat * z + fit.mu * np.log(z)),
                "--",
                lw=1.4,
                label=f"fit alpha={fit.alpha_hat:.4g}",
            )
            anchor = np.exp(fit.intercept - fit.alpha_hat * z[0] + fit.mu * math.log(z[0]))
            ax.semilogy(
                z,
                anchor * (z / z[0]) ** pred.mu * np.exp(-pred.alpha * (z - z[0])),
                ":",
                lw=1.4,
                label=f"predicted alpha={pred.alpha:.4g}",
            )
        ax.set_title(f"node {node} ({pred.regime.value})")
        ax.set_xlabel("level")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
    axes[0].set_ylabel("P(L >= level)")
    fig.tight_layout()
    path = out_dir / "ccdf.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for profile in result.dependence:
        idx = profile.resolvable()
        ax.semilogy(
            [profile.levels[i] for i in idx],
            [profile.ratios[i] for i in idx],
            marker="o",
            label=f"pair {profile.pair[0]}-{profile.pair[1]}",
        )
    ax.axhline(0.05, color="gray", ls="--", lw=1, label="0.05 limit")
    ax.set_xlabel("shared level")
    ax.set_ylabel("joint / smaller margin")
    ax.set_title("pairwise tail dependence ratios")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out_dir / "dependence.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)

    if result.factorization is not None:
        table = result.factorization
        quantiles = manifest.fit.triple_quantiles
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        ratios = table["ratio"]
        ax.plot(quantiles, ratios, marker="s")
        ax.axhline(1.0, color="gray", lw=1)
        ax.axhspan(0.5, 2.0, color="green", alpha=0.12, label="acceptance band")
        ax.set_xlabel("per-node quantile")
        ax.set_ylabel("joint / product of marginals")
        ax.set_title("joint tail factorization")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "factorization.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    if result.block_maxima is not None:
        maxima = np.sort(np.asarray(result.block_maxima[:, 0]))
        n = maxima.size
        scale = maxima.std(ddof=1) * math.sqrt(6.0) / math.pi
        loc = maxima.mean() - tails.EULER_GAMMA * scale
        std = (maxima - loc) / scale
        fig, ax = plt.subplots(figsize=(6.4, 4.0))
        ax.step(std, np.arange(1, n + 1) / n, where="post", label="standardized block maxima")
        grid = np.linspace(std[0] - 0.5, std[-1] + 0.5, 200)
        ax.plot(grid, tails.standard_gumbel_cdf(grid), "--", label="standard Gumbel")
        ax.set_xlabel("standardized maximum")
        ax.set_ylabel("CDF")
        ax.set_title("node 1 block maxima vs Gumbel")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / "gumbel.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    return written
