#!/usr/bin/env python3
"""Render static figures from the laboratory's CSV and text artifacts.

Four figure kinds:
  trace         gap columns of a stability.csv against the index column
  field_heatmap a vertex-value CSV over its mesh file
  cut_overlay   a cut file highlighted on its domain and mesh
  coverage      stage-vs-coverage step plot from a coverage.csv

The script only reads the documented artifact formats; it never imports
the solver package. Schema mismatches exit nonzero and print the column
diff. Re-rendering the same inputs reproduces the same bytes.
"""

import argparse
import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

SCHEMAS = {
    "trace": ["index", "dH_complement", "meas", "meas_bpos", "grad_gap", "field_gap"],
    "coverage": ["stage", "coverage", "increment_norm"],
    "field_heatmap": ["vertex_id", "value"],
}


class SchemaError(Exception):
    pass


def read_csv(path, expected):
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    header = rows[0]
    if header != expected:
        raise SchemaError(
            f"{path}: expected columns {expected}, found {header}; "
            f"missing {sorted(set(expected) - set(header))}, "
            f"unexpected {sorted(set(header) - set(expected))}"
        )
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data


def read_mesh(path):
    with open(path) as f:
        tok = f.readline().split()
        if not tok or tok[0] != "vertices":
            raise SchemaError(f"{path}: not a mesh file (missing 'vertices')")
        nv = int(tok[1])
        verts = np.array([[float(x) for x in f.readline().split()] for _ in range(nv)])
        tok = f.readline().split()
        if not tok or tok[0] != "triangles":
            raise SchemaError(f"{path}: missing 'triangles'")
        nt = int(tok[1])
        tris = np.array(
            [[int(x) for x in f.readline().split()] for _ in range(nt)], dtype=int
        )
    return verts, tris


def read_domain(path):
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 5 or header[0] != "pixeldomain":
            raise SchemaError(f"{path}: not a pixeldomain file")
        n = int(header[1])
        x0, y0, side = (float(v) for v in header[2:])
        mask = np.zeros((n, n), dtype=bool)
        for row in range(n):
            line = f.readline().strip()
            mask[:, n - 1 - row] = np.frombuffer(line.encode(), dtype="S1") == b"1"
    return n, (x0, y0, side), mask


def read_cut(path):
    with open(path) as f:
        tok = f.readline().split()
        if not tok or tok[0] != "cut":
            raise SchemaError(f"{path}: not a cut file")
        count = int(tok[1])
        return [int(f.readline()) for _ in range(count)]


def render_trace(args):
    data = read_csv(args.infile, SCHEMAS["trace"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    idx = data[:, 0]
    for col, label in ((4, "grad gap"), (5, "field gap")):
        ax.plot(idx, data[:, col], marker="o", label=label)
    gaps = data[:, 4:6]
    if (gaps > 0).all():
        ax.set_yscale("log")
    ax.set_xlabel(args.xlabel or "stage")
    ax.set_ylabel(args.ylabel or "zero-extension gap")
    ax.legend()
    return fig


def render_coverage(args):
    data = read_csv(args.infile, SCHEMAS["coverage"])
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.step(data[:, 0], data[:, 1], where="post", marker="o")
    ax.axhline(1.0, color="gray", lw=0.8, ls="--")
    ax.set_ylim(0, 1.05)
    ax.set_xlabel(args.xlabel or "stage")
    ax.set_ylabel(args.ylabel or "value coverage")
    return fig


def render_heatmap(args):
    if not args.mesh:
        raise SchemaError("field_heatmap needs --mesh")
    data = read_csv(args.infile, SCHEMAS["field_heatmap"])
    verts, tris = read_mesh(args.mesh)
    values = np.zeros(len(verts))
    values[data[:, 0].astype(int)] = data[:, 1]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    tp = ax.tripcolor(verts[:, 0], verts[:, 1], tris, values, shading="gouraud")
    fig.colorbar(tp, ax=ax)
    ax.set_aspect("equal")
    ax.set_xlabel(args.xlabel or "x")
    ax.set_ylabel(args.ylabel or "y")
    return fig


def render_cut_overlay(args):
    if not args.mesh or not args.domain:
        raise SchemaError("cut_overlay needs --mesh and --domain")
    verts, tris = read_mesh(args.mesh)
    n, (x0, y0, side), mask = read_domain(args.domain)
    ids = read_cut(args.infile)
    edges = set()
    for tri in tris:
        a, b, c = (int(v) for v in tri)
        for e in ((a, b), (b, c), (c, a)):
            edges.add((min(e), max(e)))
    ordered = sorted(edges)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    h = side / n
    ax.imshow(
        ~mask.T,
        origin="lower",
        extent=(x0, x0 + side, y0, y0 + side),
        cmap="gray",
        vmin=-0.2,
        vmax=1.0,
        interpolation="nearest",
    )
    for eid in ids:
        u, v = ordered[eid]
        ax.plot(
            [verts[u, 0], verts[v, 0]],
            [verts[u, 1], verts[v, 1]],
            color="red",
            lw=2.5,
        )
    ax.set_aspect("equal")
    ax.set_xlabel(args.xlabel or "x")
    ax.set_ylabel(args.ylabel or "y")
    return fig


KINDS = {
    "trace": render_trace,
    "field_heatmap": render_heatmap,
    "cut_overlay": render_cut_overlay,
    "coverage": render_coverage,
}


def main(argv=None):
    par = argparse.ArgumentParser(prog="render.py", description=__doc__)
    par.add_argument("--kind", required=True, choices=sorted(KINDS))
    par.add_argument("--in", dest="infile", required=True)
    par.add_argument("--mesh")
    par.add_argument("--domain")
    par.add_argument("--out", required=True)
    par.add_argument("--xlabel")
    par.add_argument("--ylabel")
    par.add_argument("--title")
    args = par.parse_args(argv)
    try:
        fig = KINDS[args.kind](args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc.filename}", file=sys.stderr)
        return 3
    except SchemaError as exc:
        print(f"schema mismatch: {exc}", file=sys.stderr)
        return 2
    if args.title:
        fig.axes[0].set_title(args.title)
    fig.tight_layout()
    fig.savefig(args.out, dpi=130, metadata={"Software": "nsl-plots"})
    plt.close(fig)
    return 0


if __name__ == "__main__":
    sys.exit(main())
