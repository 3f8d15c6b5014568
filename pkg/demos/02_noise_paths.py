"""Seeded Wiener increments: generation, refinement, coarsening, audit dump.

The first increment of every path is zero by the scheme's convention; mode
substreams are keyed by (seed, path index, mode), so truncating or extending
the mode count never changes existing draws.
"""

import io

import numpy as np

from stochwave.noise import (
    coarsen_path,
    dump_increments,
    generate_path,
    load_increments,
    refine_path,
)

path = generate_path(n_steps=8, r=3, horizon=1.0, seed=42)
print("increments (8 steps, 3 modes), first row is the zero convention:")
print(np.array2string(path.increments, precision=4))

wide = generate_path(8, 5, 1.0, seed=42)
print("\nmode substreams: first 3 modes of an r=5 path match the r=3 path:",
      np.array_equal(wide.increments[:, :3], path.increments))

child = refine_path(path)
sums = child.increments[0::2] + child.increments[1::2]
print("\nrefinement: child pair sums reproduce the parent (rows 2..N):",
      np.allclose(sums[1:], path.increments[1:], rtol=1e-15, atol=1e-18))
print("coarsening inverts refinement:",
      np.allclose(coarsen_path(child).increments, path.increments,
                  rtol=1e-15, atol=1e-18))

draws = np.array([generate_path(4, 1, 1.0, seed=7, path_index=i).increments[2, 0]
                  for i in range(20000)])
print(f"\n20000 draws of one entry: mean {draws.mean():+.5f}, "
      f"variance {draws.var():.5f} (tau = 0.25)")

buf = io.BytesIO()
dump_increments(path, buf)
buf.seek(0)
loaded = load_increments(buf)
print("\nbinary audit dump round-trips:",
      np.array_equal(loaded.increments, path.increments),
      f"(header: N={loaded.n_steps}, r={loaded.r}, tau={loaded.tau}, seed={loaded.seed})")
