"""Per-batch time of the full learner path against a hand-written loop.

A reduced grid so it finishes in about a minute; ``gradpipe bench`` runs the
full one.
"""

from gradpipe import bench

cfg = bench.BenchConfig(layers=(0, 2), latent=(100, 400), optimizers=("sgd", "adamw"),
                        epochs=4, warmup=1, repetitions=3, n=1000, d=200)
rows = bench.run_bench(cfg, progress=print)

print()
print(f"{'optimizer':>9} {'latent':>6} {'layers':>6} {'impl':>9} {'median ms':>10} {'q10':>8} {'q90':>8}")
for r in rows:
    print(f"{r['optimizer']:>9} {r['latent']:>6} {r['layers']:>6} {r['implementation']:>9} "
          f"{r['median_ms']:>10.3f} {r['q10_ms']:>8.3f} {r['q90_ms']:>8.3f}")

print()
for (opt, latent, layers), ratio in sorted(bench.overhead_ratios(rows).items()):
    print(f"{opt} latent={latent} layers={layers}: framework/raw = {ratio:.2f}")
