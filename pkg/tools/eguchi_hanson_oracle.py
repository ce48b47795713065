"""Tabulate the stability operator of the Eguchi-Hanson zero section with sympy.

The zero section ``y = 0`` is the fixed set of the isometry ``y -> -y``, hence
totally geodesic, so ``S = -Rc``.  Curvature components
``R(x_i, y_a, x_j, y_b)`` come from exact symbolic derivatives of the chart
metric restricted to ``y = 0``; frames are ``e_i = (q / a) d/dx_i`` and
``nu_a = d/dy_a`` with ``q = 1 + |x|^2``.

Run ``python tools/eguchi_hanson_oracle.py`` to regenerate
``src/mcflab/data/eguchi_hanson_reference.json``.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
import sympy as sp

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "mcflab" / "data" / "eguchi_hanson_reference.json"


def chart_metric(a):
    x1, x2, y1, y2 = sp.symbols("x1 x2 y1 y2", real=True)
    X = [x1, x2, y1, y2]
    q = 1 + x1**2 + x2**2
    W = a / sp.sqrt(a**2 + 4 * (y1**2 + y2**2))
    A = [2 * x2 / q, -2 * x1 / q, 0, 0]
    D1 = [-y2 * A[0], -y2 * A[1], 1, 0]
    D2 = [y1 * A[0], y1 * A[1], 0, 1]
    base = (a**2 / 4) * 4 / q**2 / W
    g = sp.Matrix(4, 4, lambda i, j: W * (D1[i] * D1[j] + D2[i] * D2[j]) + (base if i == j and i < 2 else 0))
    return X, g


def stability_on_bolt(a):
    """Symbolic 2x2 matrix ``S(x1, x2)`` on the zero section."""
    X, g = chart_metric(a)
    on_bolt = {X[2]: 0, X[3]: 0}
    d = 4
    dg = [[[sp.diff(g[i, j], X[k]) for k in range(d)] for j in range(d)] for i in range(d)]
    ddg = [[[[sp.diff(dg[i][j][k], X[l]) for l in range(d)] for k in range(d)] for j in range(d)] for i in range(d)]
    g0 = g.subs(on_bolt)
    ginv = sp.simplify(g0.inv())
    dg0 = [[[sp.simplify(dg[i][j][k].subs(on_bolt)) for k in range(d)] for j in range(d)] for i in range(d)]

    def ddg0(i, j, k, m):
        return ddg[i][j][k][m].subs(on_bolt)

    # first kind [ab, c] = (g_ac,b + g_bc,a - g_ab,c) / 2, second kind via g^{-1}
    first = [[[(dg0[a_][c][b] + dg0[b][c][a_] - dg0[a_][b][c]) / 2 for c in range(d)] for b in range(d)] for a_ in range(d)]
    gam = [[[sp.simplify(sum(ginv[e, c] * first[a_][b][c] for c in range(d))) for b in range(d)] for a_ in range(d)]
           for e in range(d)]

    def riemann(a_, b, c, dd):
        val = sp.Rational(1, 2) * (ddg0(a_, dd, b, c) + ddg0(b, c, a_, dd) - ddg0(a_, c, b, dd) - ddg0(b, dd, a_, c))
        val += sum(g0[e, f] * (gam[e][b][c] * gam[f][a_][dd] - gam[e][b][dd] * gam[f][a_][c])
                   for e in range(d) for f in range(d))
        return val

    q = 1 + X[0] ** 2 + X[1] ** 2
    S = sp.zeros(2, 2)
    for al in range(2):
        for be in range(2):
            S[al, be] = sp.simplify(-(q / a) ** 2 * sum(riemann(i, 2 + al, i, 2 + be) for i in range(2)))
    return (X[0], X[1]), S


def grid(count: int, half_width: float):
    s = np.linspace(-half_width, half_width, count)
    return np.stack(np.meshgrid(s, s, indexing="ij"), axis=-1)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--a", default="2")
    ap.add_argument("--count", type=int, default=32)
    ap.add_argument("--half-width", type=float, default=1.1)
    ap.add_argument("--out", type=Path, default=DEFAULT_OUT)
    args = ap.parse_args(argv)
    a = sp.Rational(args.a)
    (x1, x2), S = stability_on_bolt(a)
    f = sp.lambdify((x1, x2), S, "mpmath")
    pts = grid(args.count, args.half_width)
    eig = np.empty((args.count, args.count, 2))
    for i in range(args.count):
        for j in range(args.count):
            M = np.array(f(float(pts[i, j, 0]), float(pts[i, j, 1])).tolist(), dtype=float)
            eig[i, j] = np.linalg.eigvalsh(M)
    payload = {
        "a": float(a),
        "grid": {"count": args.count, "half_width": args.half_width, "axes": "x1 (rows), x2 (columns)"},
        "symbolic_S": [[str(S[i, j]) for j in range(2)] for i in range(2)],
        "eigenvalues": eig.round(15).tolist(),
    }
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"wrote {args.out}: S = {S.tolist()}")


if __name__ == "__main__":
    main()
