"""Watch a rough profile become smooth once its data has drained.

Solves the two-speed transport problem whose initial profile is a
lacunary cosine sum (each octave 1.15 times stronger, so the first
difference quotients blow up under refinement), then measures the
quotient ladder on a slab before the first regeneration time and on a
slab after it.  Before T_1 the ladder grows by ~2.3 per halving; after
T_1 the walls have fed in zeros and the ladder is flat.

Usage: python demos/smoothing_contrast.py [--out DIR]
"""

import argparse
from pathlib import Path

from hypstrip import check_iota, parse_problem
from hypstrip.regularity import classify, resolve_ladder, smoothness_indicator
from hypstrip.reports import save_series_svg

PROBLEM = Path(__file__).resolve().parent.parent / "problems" / "rough_cascade.toml"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    spec = parse_problem(PROBLEM.read_text())
    verdict = check_iota(spec)
    print(f"reflection chains: {verdict.status}, last influence dies at "
          f"t = {verdict.t_prime:.4f}")

    ladder = (1 / 64, 1 / 128, 1 / 256)
    print("solving at dx = " + ", ".join(f"1/{round(1/h)}" for h in ladder))
    solves = resolve_ladder(spec, ladder, tol=1e-9)

    rows = {}
    for label, slab in (("t in [0.0, 0.9]", (0.0, 0.9)),
                        ("t in [1.1, 1.6]", (1.1, 0.5))):
        ss = [
            smoothness_indicator(solves[h], slab, 1, (h,)).s_values[0][1]
            for h in ladder
        ]
        rows[label] = ss
        print(f"\n  slab {label}: {classify(tuple(zip(ladder, ss)), 1)}")
        for h, s in zip(ladder, ss):
            print(f"    h = 1/{round(1/h):<4d}  s_1 = {s:12.4f}")
        for a, b in zip(ss, ss[1:]):
            if a > 0:
                print(f"    growth per halving: {b / a:.3f}")

    wrote = save_series_svg(
        out / "smoothing_contrast.svg",
        [(k, list(zip(ladder, [max(v, 1e-16) for v in vals])))
         for k, vals in rows.items()],
        "first difference quotients under refinement",
        "h",
        "s_1(h)",
    )
    if wrote:
        print(f"\nplot written to {out / 'smoothing_contrast.svg'}")


if __name__ == "__main__":
    main()
