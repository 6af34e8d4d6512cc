"""Report figures rendered from the stored CSV artifacts."""

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .pipeline import level_tag, read_csv  # noqa: E402

# Fixed metadata keeps the PNG bytes independent of the matplotlib version string.
_PNG_META = {"Software": None}


def _levels(study):
    return [(u, level_tag(u)) for u in study.cfg.levels]


def _save(fig, study, name):
    rel = f"figures/{name}.png"
    path = study.out / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return rel


def plot_traces(study):
    levels = _levels(study)
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for u, tag in levels:
        _, rows = read_csv(study.out / f"trace_{tag}.csv")
        t = np.array(rows, dtype=float)
        for j, ax in enumerate(axes):
            ax.plot(t[:, 0], t[:, j + 1], label=f"u = {100 * u:g}%")
    for j, ax in enumerate(axes):
        ax.set_xlabel("generation")
        ax.set_ylabel(f"best predicted {study.problem.objective_names[j]}")
        ax.set_xscale("symlog", linthresh=1)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, study, "traces")


def plot_fronts(study, kind):
    levels = _levels(study)
    fig, ax = plt.subplots(figsize=(6, 5))
    for u, tag in levels:
        header, rows = read_csv(study.out / f"front_{kind}_{tag}.csv")
        if kind == "predicted":
            cols = [header.index("f1_pred"), header.index("f2_pred")]
        else:
            cols = [header.index("f1_norm"), header.index("f2_norm")]
        pts = np.array([[float(r[c]) for c in cols] for r in rows])
        ax.scatter(pts[:, 0], pts[:, 1], s=8, label=f"u = {100 * u:g}%")
    names = study.problem.objective_names
    suffix = " (normalized)" if kind == "verified" else " (surrogate)"
    ax.set_xlabel(names[0] + suffix)
    ax.set_ylabel(names[1] + suffix)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, study, f"fronts_{kind}")


def plot_loss(study, doc):
    levels = sorted(doc["levels"].values(), key=lambda d: d["u_level"])
    x = np.arange(len(levels))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, [d["hv_polygon"] for d in levels], 0.4, label="polygon")
    ax.bar(x + 0.2, [d["hv_staircase"] for d in levels], 0.4, label="staircase")
    rep = doc.get("repeats")
    if rep and rep["n"] > 1:
        means = [rep["levels"][level_tag(d["u_level"])]["hv_mean"] for d in levels]
        stds = [rep["levels"][level_tag(d["u_level"])]["hv_std"] for d in levels]
        ax.errorbar(x - 0.2, means, yerr=stds, fmt="k.", capsize=3, label=f"mean ± std ({rep['n']} repeats)")
    ax.set_xticks(x, [f"{100 * d['u_level']:g}%" for d in levels])
    ax.set_xlabel("training data tally uncertainty")
    ax.set_ylabel("normalized hypervolume")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, study, "hypervolume")


def plot_training(study):
    levels = _levels(study)
    fig, ax = plt.subplots(figsize=(6, 4))
    for u, tag in levels:
        _, rows = read_csv(study.out / f"train_curve_{tag}.csv")
        c = np.array(rows, dtype=float)
        ax.plot(c[:, 0], c[:, 2], label=f"u = {100 * u:g}%")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("test MSE (scaled)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, study, "training")


def render_all(study, doc):
    return [
        plot_traces(study),
        plot_fronts(study, "predicted"),
        plot_fronts(study, "verified"),
        plot_loss(study, doc),
        plot_training(study),
    ]
