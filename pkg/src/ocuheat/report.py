"""Figure rendering for the CLI report path.  CSV files remain the data
contract; these plots are written alongside them."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

_DPI = 150


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)


def dsa_figure(param, rows, output_cols, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [r[param] for r in rows]
    for col in output_cols:
        ax.plot(x, [r[col] for r in rows], marker="x", lw=1, label=col.removesuffix("_K"))
    ax.set_xlabel(param)
    ax.set_ylabel("T [K]")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def convergence_figure(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    n = [r["N"] for r in rows]
    ax.semilogy(n, [r["mean_err_X"] for r in rows], "o-", label="mean field error")
    ax.semilogy(n, [r["max_err_X"] for r in rows], "s--", label="max field error")
    ax.semilogy(n, [r["mean_bound_X"] for r in rows], "^-", label="mean bound")
    ax.semilogy(n, [r["mean_err_T_O_K"] for r in rows], "v:", label="mean output error")
    ax.set_xlabel("basis size N")
    ax.set_ylabel("error / bound")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    _save(fig, path)


def effectivity_figure(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    n = [r["N"] for r in rows]
    ax.plot(n, [r["eta_max"] for r in rows], "s--", label="max")
    ax.plot(n, [r["eta_mean"] for r in rows], "o-", label="mean")
    ax.plot(n, [r["eta_min"] for r in rows], "^:", label="min")
    ax.axhline(1.0, color="red", lw=1, label="rigor floor")
    ax.set_xlabel("basis size N")
    ax.set_ylabel("effectivity")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    _save(fig, path)


def histogram_figure(result, path):
    k = len(result.names)
    fig, axes = plt.subplots(1, k, figsize=(3 * k, 3), squeeze=False)
    for ax, name, (edges, counts) in zip(axes[0], result.names, result.histograms):
        ax.stairs(counts, edges, fill=True, alpha=0.7)
        ax.set_xlabel(f"{name} [K]")
        ax.grid(alpha=0.3)
    axes[0][0].set_ylabel("count")
    _save(fig, path)


def sobol_figure(result, output, path):
    import numpy as np

    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(result.names))
    w = 0.38
    err1 = np.abs(result.s1_ci.T - result.s1[None, :])
    errt = np.abs(result.stot_ci.T - result.stot[None, :])
    ax.bar(x - w / 2, result.s1, w, yerr=err1, capsize=3, label="first order")
    ax.bar(x + w / 2, result.stot, w, yerr=errt, capsize=3, label="total")
    ax.set_xticks(x, result.names, rotation=30)
    ax.set_ylabel("Sobol index")
    ax.set_title(output)
    ax.grid(alpha=0.3, axis="y")
    ax.legend(fontsize=8)
    _save(fig, path)


def sobol_convergence_figure(rows, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    n = [r["n_param"] for r in rows]
    ax.semilogy(n[:-1], [r["max_deviation"] for r in rows[:-1]], "o-")
    ax.set_xlabel("regression sample size")
    ax.set_ylabel("max index deviation from reference")
    ax.grid(alpha=0.3, which="both")
    _save(fig, path)
