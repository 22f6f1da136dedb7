"""
How the kernels scale with the number of points
================================================

HoD is linear in M; the inter-trajectory descriptor builds an M x M block
per frame, so it is quadratic.  A log-log fit of median wall time against M
shows the exponent.
"""

from trokens.bench import bench, format_table, loglog_slope

for kernel, sizes in (("hod", [32, 64, 128, 256]), ("inter", [32, 64, 128]),
                      ("align", [32, 64, 128, 256]), ("attention", [16, 32, 64])):
    rows = bench(kernel, sizes, T=32, repeats=10)
    print(format_table(rows))
    print(f"-> log-log slope {loglog_slope(rows):.2f}\n")
