"""Gap/h^2 against h on the unit interval, with a Richardson fit of the limit.

Prints a small table and the extrapolated constant next to pi^2/6.  The
operator error term is O(h), so two-point Richardson on h and h/2 removes the
leading correction.
"""

import argparse
import math

from cuspwalk.geometry import Box, DomainSpec
from cuspwalk.measure import DensitySpec
from cuspwalk.spectral import gap_with_error


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    ap.add_argument("--grid-ratio", type=int, default=20)
    args = ap.parse_args()
    dom = DomainSpec(1, (Box((0.0,), (1.0,)),))
    vals = []
    print(f"{'h':>8} {'gap/h^2':>10} {'err':>9}")
    for h in args.h:
        g, err, _ = gap_with_error(dom, DensitySpec("constant"), h, grid_ratio=args.grid_ratio)
        vals.append(g / h**2)
        print(f"{h:8.4f} {g / h**2:10.5f} {err / h**2:9.1e}")
    limit = math.pi**2 / 6
    if len(vals) >= 2:
        h0, h1 = args.h[-2], args.h[-1]
        rich = (h0 * vals[-1] - h1 * vals[-2]) / (h0 - h1)
        print(f"Richardson limit {rich:.5f} vs pi^2/6 = {limit:.5f} (rel {rich / limit - 1:+.2%})")


if __name__ == "__main__":
    main()
