"""
Time and memory as the sequence grows
=====================================

Softmax materializes N x N weights, so each doubling of N costs about four
times the time and memory. The linear LLN form stays close to two.
"""

from lln_attention.bench import doubling_ratios, run_benchmark

records = run_benchmark(("softmax", "lln", "lln_diag"), (512, 1024, 2048, 4096), dim=64, repeats=3)
for r in records:
    ms = "OOM" if r.wall_time_s is None else f"{1e3 * r.wall_time_s:8.2f} ms"
    mb = "" if r.peak_bytes is None else f"{r.peak_bytes / 2 ** 20:8.1f} MiB"
    print(f"{r.method:9s} N={r.seq_len:5d}  {ms}  {mb}")

for method in ("softmax", "lln"):
    t = [round(x, 2) for _, x in doubling_ratios(records, method)]
    m = [round(x, 2) for _, x in doubling_ratios(records, method, "peak_bytes")]
    print(f"{method}: time ratios {t}  memory ratios {m}")
