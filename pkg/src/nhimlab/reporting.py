"""Deterministic CSV / JSON / figure output with manifest stamping.

Every delimited file starts with a manifest-hash comment line; JSON manifests
put the hash in their first key.  Float formatting is 17 significant digits so
a rerun of the same manifest at equal precision reproduces files byte for
byte.  Figures are rendered through the Agg backend with pinned metadata so
PNG bytes are reproducible as well.
"""

from __future__ import annotations

import hashlib
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    xf = float(x)
    if np.isnan(xf):
        return "nan"
    return format(xf, ".17g")


def manifest_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_csv(path: str, header, rows, mhash: str):
    """CSV with a leading '# manifest=<hash>' line and 17-digit floats."""
    lines = [f"# manifest={mhash}", ",".join(header)]
    for row in rows:
        if isinstance(row, dict):
            lines.append(",".join(fmt(row.get(h)) for h in header))
        else:
            lines.append(",".join(fmt(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_json(path: str, doc: dict, mhash: str):
    """JSON with the manifest hash as the first key and stable ordering."""
    out = {"manifest_sha256": mhash}
    out.update(doc)
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1, sort_keys=False, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return str(x)


_SAVE_KW = dict(dpi=110, metadata={"Software": "nhimlab"})


def _new_fig():
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.grid(True, alpha=0.3)
    return fig, ax


def save_fig(fig, path: str):
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def fig_pendulum_residuals(theta, resid, path):
    fig, ax = _new_fig()
    ax.semilogy(theta, np.maximum(np.abs(resid), 1e-18), lw=1.2)
    ax.set_xlabel(r"$\theta_1$")
    ax.set_ylabel("grown-leaf vs closed-form residual")
    ax.set_title("pendulum separatrix check")
    save_fig(fig, path)


def fig_convergence(rows, path, lam_bar=None):
    ns = [r["n"] for r in rows]
    fig, ax = _new_fig()
    ax.semilogy(ns, [max(r["d_c1"], 1e-18) for r in rows], "o-", ms=3,
                label=r"$d_{C^1}$ to the leaf map")
    ax.semilogy(ns, [max(r["xi_prime"], 1e-18) for r in rows], "s-", ms=3,
                label=r"$\sup\|\xi_n'\|$")
    ax.semilogy(ns, [max(r["sup_S"], 1e-18) for r in rows], "^-", ms=3,
                label=r"$\sup\|S_n\|$")
    if lam_bar is not None and rows:
        env = [rows[0]["d_c1"] * lam_bar ** n for n in ns]
        ax.semilogy(ns, env, "k--", lw=1, label=r"$\bar\lambda^n$ envelope")
    ax.set_xlabel("iteration n")
    ax.set_ylabel("measured value")
    ax.set_title("graph-transform convergence over the fixed strip")
    ax.legend(fontsize=8)
    save_fig(fig, path)


def fig_margins(rows, path):
    keys = [k for k in rows[0] if k.endswith("_margin")]
    fig, ax = _new_fig()
    for k in keys:
        vals = [r.get(k, np.nan) for r in rows]
        ax.plot([r["n"] for r in rows], vals, lw=1, label=k.replace("_margin", ""))
    ax.axhline(0.0, color="k", lw=1)
    ax.set_xlabel("iteration n")
    ax.set_ylabel("inequality margin")
    ax.set_title("proof-ledger margins (positive = holds)")
    ax.legend(fontsize=7)
    save_fig(fig, path)


def fig_melnikov(profile, path):
    fig, ax = _new_fig()
    ax.plot(profile.phases, profile.values, "o-", ms=3,
            label="first-order profile (calibrated)")
    if np.any(np.isfinite(profile.oracle_values)):
        ax.plot(profile.phases, profile.oracle_values, "s--", ms=3,
                label="direct gap oracle")
    for z, _ in profile.zeros:
        ax.axvline(z, color="r", ls=":", lw=1)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel(r"apex phase $\theta_2^0$")
    ax.set_ylabel("splitting gap (chart u units)")
    ax.set_title(f"separatrix splitting, omega={profile.omega}, mu={profile.mu}")
    ax.legend(fontsize=8)
    save_fig(fig, path)


def fig_chain(chain, path):
    fig, ax = _new_fig()
    ax.plot(range(len(chain.omegas)), chain.omegas, "o-", ms=4)
    for m in chain.milestones:
        ax.axhline(m, color="r", ls=":", lw=1)
    ax.set_xlabel("rung index")
    ax.set_ylabel(r"torus action $\omega$")
    ax.set_title("transition-chain ladder through the milestones")
    save_fig(fig, path)


def fig_drift(report, path):
    fig, ax = _new_fig()
    ax.plot(report.orbit.steps, report.orbit.r2, lw=1.2)
    for w, d, i, ok in report.visited:
        ax.axhline(w, color="r", ls=":", lw=1)
        ax.plot([i], [report.orbit.r2[i]], "r*" if ok else "kx", ms=10)
    ax.set_xlabel("section iterate")
    ax.set_ylabel(r"action $r_2$")
    ax.set_title("drifting orbit through the torus neighborhoods")
    save_fig(fig, path)
