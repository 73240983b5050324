"""PNG renderings of CLI reports.  Imported only when ``--figures`` is given."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.6),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "savefig.bbox": "tight",
}


def _save(fig, out: Path, name: str) -> str:
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.png"
    fig.savefig(path)
    plt.close(fig)
    return str(path)


def spectrum_figure(report: dict, out: Path) -> list[str]:
    paths = []
    for row in report["runs"]:
        vals = np.array(row["spectrum"]["eigenvalues"])
        with plt.rc_context(STYLE):
            fig, ax = plt.subplots()
            ax.stem(np.arange(1, vals.size + 1), vals)
            ax.axhline(0.0, color="k", lw=0.6)
            target = row.get("lambda1_target")
            if target is not None:
                for s in (1, -1):
                    ax.axhline(s * target, color="C3", ls="--", lw=0.8)
            ax.set_xlabel("index")
            ax.set_ylabel(r"$\lambda$")
            ax.set_title(f"n={row['n']} {row['model']} h={row['h']:g} R={row['R_max']:g}")
            paths.append(_save(fig, out, f"spectrum_h{row['h']:g}"))
    return paths


def scan_figure(report: dict, out: Path) -> list[str]:
    eps = np.array([v["eps"] for v in report["values"]])
    js = np.array([v["J"] for v in report["values"]])
    grid = np.geomspace(eps.min(), eps.max(), 100)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogx(eps, js, "o", label="J")
        ax.semilogx(grid, report["limit"] + report["amplitude"] * grid ** report["order"], "-", lw=0.8,
                    label=f"fit, p={report['order']:.3f}")
        ax.axhline(report["target"], color="C3", ls="--", lw=0.8, label="target")
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel("J")
        ax.legend()
        return [_save(fig, out, f"scan_n{report['n']}")]


def surface_figure(report: dict, out: Path) -> list[str]:
    eps = np.array([r["eps"] for r in report["rows"]])
    prod = np.array([r["product"] for r in report["rows"]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.semilogx(eps, prod, "o-")
        ax.axhline(report["target"], color="C3", ls="--", lw=0.8)
        ax.axhline(report["target"] * (1 + report["budget"]), color="C3", ls=":", lw=0.8)
        ax.set_xlabel(r"$\varepsilon$")
        ax.set_ylabel(r"$\lambda\,\mathrm{Vol}^{1/2}$")
        return [_save(fig, out, "surface2d")]


def expansion_figure(report: dict, out: Path) -> list[str]:
    paths = []
    for i, run in enumerate(report["runs"]):
        scan = run["order_scan"]
        radii = np.array(scan["radii"])
        with plt.rc_context(STYLE):
            fig, ax = plt.subplots()
            for key, vals in scan["norms"].items():
                v = np.array(vals)
                if np.any(v > 0):
                    ax.loglog(radii, np.where(v > 0, v, np.nan), "o-", ms=3, label=key)
            ax.set_xlabel("r")
            ax.set_ylabel("norm")
            ax.legend()
            ax.set_title(run["chart"])
            paths.append(_save(fig, out, f"expand_check_{i}"))
    return paths


def hijazi_figure(report: dict, out: Path) -> list[str]:
    rows = report["runs"]
    labels = [r["model"] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(x - 0.2, [r["lambda1_sq"] for r in rows], 0.4, label=r"$\lambda_1^2$")
        ax.bar(x + 0.2, [r["bound"] for r in rows], 0.4, label=r"$\frac{n}{4(n-1)}\mu_1$")
        ax.set_xticks(x, labels)
        ax.legend()
        return [_save(fig, out, "hijazi")]


def symmetry_figure(report: dict, out: Path) -> list[str]:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        plus = np.array(report["plus"])
        minus = np.array(report["minus"])
        ax.plot(np.sort(plus), "o", label=r"$B^+$")
        ax.plot(np.sort(-minus), "x", label=r"$-B^-$")
        ax.set_xlabel("index")
        ax.set_ylabel(r"$\lambda$")
        ax.legend()
        return [_save(fig, out, "symmetry")]


FIGURES = {
    "spectrum": spectrum_figure,
    "scan": scan_figure,
    "surface2d": surface_figure,
    "expand-check": expansion_figure,
    "hijazi": hijazi_figure,
    "symmetry": symmetry_figure,
}


def render(command: str, result: dict, out: str | Path) -> list[str]:
    """Write the figures for ``command``; commands without a figure produce none."""
    fn = FIGURES.get(command)
    return fn(result, Path(out)) if fn else []
