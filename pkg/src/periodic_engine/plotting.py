"""Optional PNG figures for CLI runs (``--figures``)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, out_dir: str, name: str) -> str:
    path = os.path.join(out_dir, name)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def protocol_figure(out_dir, label, t, q, T, sigma_v):
    fig, axes = plt.subplots(3, 1, figsize=(6, 7), sharex=True)
    for ax, y, name in zip(axes, (T, q, sigma_v), ("T", "q", "Sigma_v")):
        ax.plot(t, y, lw=1.2)
        ax.set_ylabel(name)
    axes[-1].set_xlabel("t")
    axes[0].set_title(label)
    return _save(fig, out_dir, f"protocol_{label}.png")


def tradeoff_figure(out_dir, curves):
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, ratio, eta in curves:
        ax.plot(ratio, eta, label=label)
    ax.set_xlabel("P / P*")
    ax.set_ylabel("maximal efficiency")
    ax.set_ylim(0.0, 1.02)
    ax.legend()
    return _save(fig, out_dir, "tradeoff.png")


def sweep_figure(out_dir, axis, rows):
    fig, axes = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    for name in sorted({r["protocol"] for r in rows}):
        sel = [r for r in rows if r["protocol"] == name and r["status"] == "ok"]
        x = np.array([r["coordinate"] for r in sel])
        axes[0].plot(x, [r["power_ratio"] for r in sel], "o-", label=name)
        axes[1].plot(x, [r["eta_U"] for r in sel], "o-", label=name)
    axes[0].set_ylabel("P / P*")
    axes[1].set_ylabel("eta_U")
    axes[1].set_xlabel(axis)
    if axis == "friction":
        axes[1].set_xscale("log")
    axes[0].legend()
    return _save(fig, out_dir, f"sweep_{axis}.png")


def montecarlo_figure(out_dir, times, sigma_v, se_v, ode_sigma_v):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(times, ode_sigma_v, lw=1.2, label="covariance ODE")
    ax.errorbar(times, sigma_v, yerr=3 * se_v, fmt=".", ms=3, label="ensemble (3 SE)")
    ax.set_xlabel("t")
    ax.set_ylabel("Sigma_v")
    ax.legend()
    return _save(fig, out_dir, "montecarlo_sigma_v.png")
