"""Figure-ready tables and matplotlib renderings of fit reports and studies."""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DERIVED_COLUMNS = ["country", "R0", "R0_lo", "R0_hi", "incubation", "incubation_lo",
                   "incubation_hi"]


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    doc["_path"] = str(path)
    return doc


def read_band(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.atleast_1d(data[k]) for k in data.dtype.names}


def _band_path(doc):
    band = doc.get("band")
    if not band:
        return None
    if os.path.isabs(band):
        return band
    return os.path.join(os.path.dirname(doc["_path"]), band)


def derived_rows(reports) -> list[dict]:
    rows = []
    for doc in reports:
        d = doc.get("derived", {})
        r0 = d.get("R0", {})
        inc = d.get("incubation", {})
        rows.append({
            "country": doc.get("country") or os.path.basename(doc["_path"]),
            "R0": r0.get("est"), "R0_lo": r0.get("lo"), "R0_hi": r0.get("hi"),
            "incubation": inc.get("est"), "incubation_lo": inc.get("lo"),
            "incubation_hi": inc.get("hi"),
        })
    return rows


def write_csv(rows, path, columns=None) -> None:
    rows = list(rows)
    columns = columns or list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if r.get(k) is None else r[k] for k in columns})


def plot_r0(rows, path) -> None:
    """Point estimates with interval bars, one row per country."""
    rows = [r for r in rows if r["R0"] is not None]
    fig, ax = plt.subplots(figsize=(5, 0.5 * len(rows) + 1.5))
    y = np.arange(len(rows))
    est = np.array([r["R0"] for r in rows])
    err = np.array([[r["R0"] - r["R0_lo"], r["R0_hi"] - r["R0"]] for r in rows]).T
    ax.errorbar(est, y, xerr=err, fmt="o", color="k", capsize=3)
    ax.axvline(1.0, color="0.6", lw=0.8, ls="--")
    ax.set_yticks(y, [r["country"] for r in rows])
    ax.set_xlabel("R0")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_band(band, path, title="", series=None) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(band["x"], band["lo"], band["hi"], color="C0", alpha=0.3, lw=0)
    ax.plot(band["x"], band["fit"], color="C0", lw=1.5)
    if series is not None:
        ax.plot(series.days, series.y, ".", color="k", ms=3)
    ax.set_xlabel("day")
    ax.set_ylabel("daily cases")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_mse(study: dict, path) -> None:
    """Grouped bars of MSE per method and coordinate."""
    mse = study["mse"]
    methods = list(mse)
    q = len(next(iter(mse.values())))
    fig, axes = plt.subplots(1, q, figsize=(3.2 * q, 3), squeeze=False)
    for j, ax in enumerate(axes[0]):
        ax.bar(range(len(methods)), [mse[m][j] for m in methods], color="0.4")
        ax.set_xticks(range(len(methods)), methods, rotation=45, ha="right")
        ax.set_title(f"theta{j + 1}" if q > 1 else "MSE")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render(reports, out_dir, studies=(), series=None) -> list[str]:
    """Write the merged tables and figures; returns the files written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if reports:
        rows = derived_rows(reports)
        p = os.path.join(out_dir, "derived.csv")
        write_csv(rows, p, DERIVED_COLUMNS)
        written.append(p)
        if any(r["R0"] is not None for r in rows):
            p = os.path.join(out_dir, "r0.png")
            plot_r0(rows, p)
            written.append(p)
        band_rows = []
        for doc, row in zip(reports, rows):
            bp = _band_path(doc)
            if bp is None or not os.path.exists(bp):
                continue
            band = read_band(bp)
            for vals in zip(band["x"], band["fit"], band["lo"], band["hi"]):
                band_rows.append(dict(zip(["country", "x", "fit", "lo", "hi"],
                                          [row["country"], *vals])))
            p = os.path.join(out_dir, f"band_{_slug(row['country'])}.png")
            s = (series or {}).get(row["country"])
            plot_band(band, p, row["country"], s)
            written.append(p)
        if band_rows:
            p = os.path.join(out_dir, "bands.csv")
            write_csv(band_rows, p)
            written.append(p)
    for k, study in enumerate(studies):
        name = study.get("config", {}).get("study", f"study{k}")
        p = os.path.join(out_dir, f"mse_{_slug(name)}.png")
        plot_mse(study, p)
        written.append(p)
        rows = [{"method": m, "coordinate": j + 1, "mse": v}
                for m, vals in study["mse"].items() for j, v in enumerate(vals)]
        p = os.path.join(out_dir, f"mse_{_slug(name)}.csv")
        write_csv(rows, p)
        written.append(p)
    return written


def _slug(text) -> str:
    return "".join(c if c.isalnum() else "_" for c in str(text)).strip("_").lower() or "x"
