"""Figures written next to the CLI's CSV/JSON outputs."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def distance_figure(path, matrices):
    """Side-by-side heat maps of distance matrices, keyed by title."""
    with plt.rc_context(RC):
        n = len(matrices)
        fig, axes = plt.subplots(1, n, figsize=(3.4 * n, 3.0), squeeze=False,
                                 layout="constrained")
        for ax, (title, D) in zip(axes[0], matrices.items()):
            im = ax.imshow(D, cmap="viridis", interpolation="nearest")
            ax.set_title(title)
            ax.set_xlabel("frame")
            ax.set_ylabel("frame")
            fig.colorbar(im, ax=ax, shrink=0.8)
        fig.savefig(path)
        plt.close(fig)


def fusion_figure(path, t, Y, Z, var, dims=3):
    """Observed vs fused trajectories of the first latent dimensions and posterior std."""
    Y = np.asarray(Y)
    Z = np.asarray(Z)
    k = min(dims, Y.shape[1])
    with plt.rc_context(RC):
        fig, axes = plt.subplots(k + 1, 1, figsize=(6.0, 1.6 * (k + 1)), sharex=True)
        axes = np.atleast_1d(axes)
        sd = np.sqrt(np.asarray(var))
        for j in range(k):
            ax = axes[j]
            ax.plot(t, Y[:, j], ".", ms=2, color="0.6", label="observed")
            ax.plot(t, Z[:, j], "-", lw=1.0, color="C0", label="fused")
            ax.fill_between(t, Z[:, j] - 2 * sd, Z[:, j] + 2 * sd, color="C0", alpha=0.2, lw=0)
            ax.set_ylabel(f"z[{j}]")
        axes[0].legend(loc="upper right", frameon=False)
        axes[-1].plot(t, sd, color="C3")
        axes[-1].set_ylabel("post. std")
        axes[-1].set_xlabel("t [s]")
        fig.savefig(path)
        plt.close(fig)
