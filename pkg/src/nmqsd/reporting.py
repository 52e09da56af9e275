"""Delimited output and figure rendering.

Every CSV uses decimal numbers at 17 significant digits with `\n` line
endings and a mandatory header, so byte-level diffing between runs and
oracles is meaningful.  Figures are rendered with the Agg backend straight
to files; they accompany the CSVs, never replace them.

Matrix indices in CSV output are 1-based, matching the rho_ij labels used
by the observable names.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def fmt(x: float) -> str:
    return "%.17g" % float(x)


def _write(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_observables_csv(path, times, columns: dict):
    """Header t,<name1>,...; one row per grid point."""
    names = list(columns)
    lines = ["t," + ",".join(names)]
    for i, t in enumerate(times):
        row = [fmt(t)] + [fmt(columns[name][i]) for name in names]
        lines.append(",".join(row))
    _write(path, lines)


def write_density_csv(path, times, rhos):
    """Header t,i,j,re,im; row-major over (i, j), 1-based indices."""
    rhos = np.asarray(rhos)
    d = rhos.shape[-1]
    lines = ["t,i,j,re,im"]
    for ti, t in enumerate(times):
        for i in range(d):
            for j in range(d):
                v = rhos[ti, i, j]
                lines.append(
                    f"{fmt(t)},{i + 1},{j + 1},{fmt(v.real)},{fmt(v.imag)}"
                )
    _write(path, lines)


def read_density_csv(path):
    """Inverse of write_density_csv; returns (times, rhos)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "t,i,j,re,im":
            raise ValueError(f"{path}: unexpected header {header!r}")
        rows = [line.split(",") for line in fh.read().splitlines() if line]
    data = np.array([[float(c) for c in row] for row in rows])
    times = np.unique(data[:, 0])
    d = int(data[:, 1].max())
    rhos = np.zeros((len(times), d, d), dtype=complex)
    t_index = {t: k for k, t in enumerate(times)}
    for t, i, j, re, im in data:
        rhos[t_index[t], int(i) - 1, int(j) - 1] = re + 1j * im
    return times, rhos


def write_noise_csv(path, times, samples):
    lines = ["t,re_z,im_z"]
    for t, z in zip(times, samples):
        lines.append(f"{fmt(t)},{fmt(z.real)},{fmt(z.imag)}")
    _write(path, lines)


def write_kernel_csv(path, kernels):
    """Order-0 kernel table on the propagated triangle s <= t."""
    times = kernels.grid.times
    m0 = kernels.f_hist.shape[0]
    lines = ["t,s,j,re_f,im_f"]
    for ti in range(len(times)):
        for si in range(ti + 1):
            for j in range(m0):
                v = kernels.f_hist[j, ti, si]
                lines.append(
                    f"{fmt(times[ti])},{fmt(times[si])},{j + 1},"
                    f"{fmt(v.real)},{fmt(v.imag)}"
                )
    _write(path, lines)


def write_basis_csv(path, basis):
    lines = ["order,index,i,j,re,im"]
    for k, ops in enumerate(basis.orders):
        for idx, op in enumerate(ops):
            d = op.shape[0]
            for i in range(d):
                for j in range(d):
                    lines.append(
                        f"{k},{idx + 1},{i + 1},{j + 1},"
                        f"{fmt(op[i, j].real)},{fmt(op[i, j].imag)}"
                    )
    _write(path, lines)


def write_comparison_csv(path, times, distance, allowed):
    lines = ["t,trace_distance,allowed"]
    for t, d, a in zip(times, distance, allowed):
        lines.append(f"{fmt(t)},{fmt(d)},{fmt(a)}")
    _write(path, lines)


def write_moments_csv(path, checks):
    lines = ["label,estimate_re,estimate_im,target_re,target_im,stderr,passed"]
    for c in checks:
        lines.append(
            f"{c.label},{fmt(c.estimate.real)},{fmt(c.estimate.imag)},"
            f"{fmt(c.target.real)},{fmt(c.target.imag)},{fmt(c.stderr)},"
            f"{int(c.passed)}"
        )
    _write(path, lines)


def plot_observables(path, times, columns: dict, stderr: dict | None = None):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for name, values in columns.items():
        (line,) = ax.plot(times, values, label=name)
        if stderr and name in stderr and stderr[name] is not None:
            v = np.asarray(values)
            e = 3.0 * np.asarray(stderr[name])
            ax.fill_between(times, v - e, v + e, alpha=0.25,
                            color=line.get_color(), linewidth=0)
    ax.set_xlabel("t")
    ax.set_ylabel("observable")
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_comparison(path, times, distance, tolerance, allowed=None):
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(times, distance, label="trace distance")
    ax.axhline(tolerance, color="tab:red", linestyle="--",
               label=f"tolerance {tolerance:g}")
    if allowed is not None:
        ax.plot(times, allowed, color="tab:red", alpha=0.5, linewidth=0.8,
                label="allowed (incl. 3 sigma)")
    ax.set_xlabel("t")
    ax.set_ylabel("trace distance")
    ax.legend(loc="best", fontsize=9)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_moments(path, checks):
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    labels = [c.label for c in checks]
    dev = [abs(c.estimate - c.target) / max(c.stderr, 1e-300) for c in checks]
    colors = ["tab:blue" if c.passed else "tab:red" for c in checks]
    ax.bar(range(len(checks)), dev, color=colors)
    ax.axhline(3.0, color="tab:red", linestyle="--", label="3 sigma")
    ax.set_xticks(range(len(checks)))
    ax.set_xticklabels(labels, rotation=90, fontsize=6)
    ax.set_ylabel("|estimate - target| / stderr")
    ax.legend(loc="best", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
