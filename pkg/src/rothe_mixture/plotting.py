"""PNG figures written next to the CSV reports (Agg backend, no display)."""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def run_figures(traj, cfg, out_dir):
    paths = []
    if not traj.slices:
        return paths
    z = cfg.run.grid.z
    last = traj.slices[-1]
    fig, ax = plt.subplots(1, 3, figsize=(12, 3.6))
    for l in range(last.phi.shape[0]):
        ax[0].plot(z, last.phi[l], label="phi_%d" % l)
    ax[0].set_title("fractions at t=%.4g" % last.t)
    ax[0].set_xlabel("z")
    ax[0].legend(fontsize=7)
    for m in range(last.w.shape[0]):
        ax[1].plot(z, last.w[m], label="w_%d" % m)
    ax[1].plot(z, last.v, "k--", label="v")
    ax[1].set_title("displacements and velocity")
    ax[1].set_xlabel("z")
    ax[1].legend(fontsize=7)
    t = traj.times()
    ax[2].plot(t, traj.sum_l2, label="sum |v|^2 dt")
    ax[2].plot(t, traj.sum_h1, label="sum |v_z|^2 dt")
    ax[2].axhline(cfg.run.V**2, color="r", lw=0.8, label="V^2")
    ax[2].set_xlabel("t")
    ax[2].set_yscale("symlog", linthresh=1e-12)
    ax[2].legend(fontsize=7)
    paths.append(_save(fig, os.path.join(out_dir, "run.png")))

    fig, ax = plt.subplots(figsize=(5, 3.6))
    phi = traj.stack("phi")
    ax.plot(t, phi.min(axis=(1, 2)), label="min phi")
    ax.plot(t, phi.max(axis=(1, 2)), label="max phi")
    ax.axhline(cfg.run.phi_min, color="r", lw=0.8, label="phi_min")
    ax.set_xlabel("t")
    ax.legend(fontsize=7)
    paths.append(_save(fig, os.path.join(out_dir, "fraction_range.png")))
    return paths


def audit_figure(report, out_dir, name="audit.png"):
    fig, ax = plt.subplots(figsize=(6, 4))
    for ident, rows in report.by_id().items():
        k = [r["k"] for r in rows]
        rel = [r["margin"] / max(abs(r["rhs"]), 1e-300) for r in rows]
        ax.plot(k, rel, label=ident)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_yscale("symlog", linthresh=1e-8)
    ax.set_xlabel("slice")
    ax.set_ylabel("margin / |rhs|")
    ax.legend(fontsize=7)
    return _save(fig, os.path.join(out_dir, name))


def region_figure(sample, witness, out_dir):
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    code = sample.in_S.astype(int) + 2 * sample.in_R.astype(int)
    dx = sample.x[1] - sample.x[0] if len(sample.x) > 1 else sample.x[0] * 2
    dy = sample.y[1] - sample.y[0] if len(sample.y) > 1 else max(sample.y[0] * 2, 1e-12)
    ext = [sample.x[0] - dx / 2, sample.x[-1] + dx / 2, sample.y[0] - dy / 2, sample.y[-1] + dy / 2]
    im = ax.imshow(code, origin="lower", extent=ext, aspect="auto", vmin=0, vmax=3,
                   cmap=plt.get_cmap("viridis", 4))
    cb = fig.colorbar(im, ticks=[0.375, 1.125, 1.875, 2.625])
    cb.ax.set_yticklabels(["none", "S", "R", "S and R"])
    if witness is not None and witness.found:
        ax.plot([witness.x], [witness.y], "r*", ms=12)
    ax.set_xlabel("T - t0")
    ax.set_ylabel("V")
    return _save(fig, os.path.join(out_dir, "region.png"))


def rates_figure(table, out_dir):
    fig, ax = plt.subplots(figsize=(5, 4))
    dts = np.array(table.dts[:-1])
    for name, e in table.errors.items():
        e = np.array(e)
        if np.any(e > 0):
            ax.loglog(dts, np.where(e > 0, e, np.nan), "o-", label=name)
    if len(dts) and np.any(np.array(table.errors["total"]) > 0):
        ref = table.errors["total"][0] * dts / dts[0]
        ax.loglog(dts, ref, "k:", label="slope 1")
    ax.set_xlabel("dt")
    ax.set_ylabel("Cauchy difference")
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    else:
        ax.text(0.5, 0.5, "all differences are zero", ha="center", transform=ax.transAxes)
    return _save(fig, os.path.join(out_dir, "rates.png"))
