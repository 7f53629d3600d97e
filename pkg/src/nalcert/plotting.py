"""Optional PNG renderings of the CSV artifacts (matplotlib, Agg backend)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}  # keep PNG bytes free of version strings


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_history(rows, path, title=""):
    ep = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(ep, [r[1] for r in rows], marker="o", label="training objective")
    ax.plot(ep, [r[2] for r in rows], marker="s", label="clean loss (train set)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_curve(curves, path, title="certified accuracy"):
    """``curves``: {label: [(radius, acc), ...]}."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for label, pts in curves.items():
        ax.step([p[0] for p in pts], [p[1] for p in pts], where="post", label=label)
    ax.set_xlabel("l2 radius")
    ax.set_ylabel("certified accuracy")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)


def plot_certificate(reports, envelope, path, title="certificate vs worst-case loss"):
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    for rep in reports:
        line, = ax.plot(rep.rho_grid, rep.bound_values, label=f"bound, gamma={rep.gamma:g}")
        ax.plot([rep.rho_test], [rep.worst_case_loss], "o", color=line.get_color())
    if envelope:
        ax.plot([e[0] for e in envelope], [e[1] for e in envelope], "k--", lw=1, label="lower envelope")
    ax.set_xlabel("rho")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_transfer(names, matrix, path, title="transfer attack accuracy"):
    m = np.asarray(matrix, dtype=float)
    fig, ax = plt.subplots(figsize=(1.3 * len(names) + 2, 1.1 * len(names) + 1.5))
    im = ax.imshow(m, vmin=0, vmax=1, cmap="viridis")
    ax.set_xticks(range(len(names)), names)
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("target")
    ax.set_ylabel("source")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{m[i, j]:.2f}", ha="center", va="center", color="w" if m[i, j] < 0.6 else "k")
    fig.colorbar(im, ax=ax)
    ax.set_title(title)
    return _save(fig, path)


def plot_robustness(rows, path, title="PGD robustness"):
    eps = [r[0] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(eps, [r[5] for r in rows], marker="o", label="clean")
    ax.plot(eps, [r[6] for r in rows], marker="s", label="robust")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend()
    return _save(fig, path)
