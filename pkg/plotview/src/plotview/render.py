"""Render five-row panel figures from boundary-field record CSVs.

Each record file holds one iteration's boundary data in the columns

    t, re_eta, im_eta, phi, re_eta_slow, im_eta_slow, region

and one figure stacks, per record column, the five rows
Re(eta), Im(eta), phi, Re(eta_slow), Im(eta_slow) over the parameter t.

Record files are the only interface to the solver: this package never
imports it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

EXPECTED_COLUMNS = ("t", "re_eta", "im_eta", "phi",
                    "re_eta_slow", "im_eta_slow", "region")

ROW_KEYS = ("re_eta", "im_eta", "phi", "re_eta_slow", "im_eta_slow")
ROW_LABELS = {
    "re_eta": r"Re $\eta_m$",
    "im_eta": r"Im $\eta_m$",
    "phi": r"$\phi_m$",
    "re_eta_slow": r"Re $\eta_m^{\rm slow}$",
    "im_eta_slow": r"Im $\eta_m^{\rm slow}$",
}


class SchemaError(ValueError):
    """Record file does not match the documented CSV schema."""


@dataclass
class FigureSpec:
    panels: list          # (path, label) pairs, one per column
    out_path: Path
    rows: int = 5

    @classmethod
    def from_json(cls, path: str | Path) -> "FigureSpec":
        raw = json.loads(Path(path).read_text())
        panels = [(Path(p["file"]), p.get("label", Path(p["file"]).stem))
                  for p in raw.get("panels", [])]
        if not panels:
            raise SchemaError(f"{path}: spec lists no panels")
        layout = raw.get("layout")
        if layout is not None and tuple(layout) != (5, len(panels)):
            raise SchemaError(
                f"{path}: layout {layout} does not match 5 x {len(panels)}")
        out = raw.get("out")
        if not out:
            raise SchemaError(f"{path}: spec has no output path")
        return cls(panels=panels, out_path=Path(out))


def load_record(path: str | Path) -> dict:
    """Parse one record CSV, validating the schema line by line."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file does not exist")
    lines = path.read_text().strip().split("\n")
    header = tuple(lines[0].strip().split(","))
    if header != EXPECTED_COLUMNS:
        raise SchemaError(f"{path}:1: header {header} != {EXPECTED_COLUMNS}")
    cols = {key: [] for key in EXPECTED_COLUMNS}
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != len(EXPECTED_COLUMNS):
            raise SchemaError(f"{path}:{lineno}: expected "
                              f"{len(EXPECTED_COLUMNS)} fields, got {len(parts)}")
        try:
            for key, value in zip(EXPECTED_COLUMNS[:-1], parts[:-1]):
                cols[key].append(float(value))
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        cols["region"].append(parts[-1].strip())
    if not cols["t"]:
        raise SchemaError(f"{path}: no data rows")
    out = {key: np.array(cols[key]) for key in EXPECTED_COLUMNS[:-1]}
    out["region"] = np.array(cols["region"], dtype=object)
    return out


def render_panels(spec: FigureSpec) -> Path:
    """Draw the 5 x N panel figure and write it to the spec's output path."""
    records = [(load_record(path), label) for path, label in spec.panels]
    ncols = len(records)
    fig, axes = plt.subplots(5, ncols, figsize=(3.4 * ncols, 10.5),
                             sharex="col", squeeze=False)
    for col, (rec, label) in enumerate(records):
        for row, key in enumerate(ROW_KEYS):
            ax = axes[row][col]
            ax.plot(rec["t"], rec[key], lw=0.5, color="tab:blue")
            if row == 0:
                ax.set_title(label)
            if col == 0:
                ax.set_ylabel(ROW_LABELS[key])
            if row == len(ROW_KEYS) - 1:
                ax.set_xlabel("t")
            ax.margins(x=0)
    fig.tight_layout()
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=150)
    plt.close(fig)
    return spec.out_path


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="plotview",
                                 description="render record-CSV panel figures")
    ap.add_argument("--spec", required=True, help="figure spec JSON")
    ap.add_argument("--out", default=None,
                    help="override the spec's output path")
    args = ap.parse_args(argv)
    try:
        spec = FigureSpec.from_json(args.spec)
        if args.out:
            spec.out_path = Path(args.out)
        path = render_panels(spec)
    except SchemaError as exc:
        print(f"schema-error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
