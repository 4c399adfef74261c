"""
What the pipelined order buys
=============================

First the unit-cost model, small enough to verify by hand, then the
calibrated model across worker counts, and finally a pair of real runs
whose idle fractions tell the same story.
"""

from pipeevd import (PipelineConfig, SpectrumSpec, calibrated_model,
                     crossover_bandwidth, generate, mean_idle_fraction, run,
                     simulate, unit_model)

# every task costs one tick and messages are free.  With two workers the
# sequential order needs 7 ticks; overlapping basis generation with the
# neighbour's chasing turn saves one
unit = unit_model()
for order in ("pipelined", "sequential"):
    cfg = PipelineConfig(workers=2, b=32, order=order)
    _, makespan = simulate(unit, cfg, 2048)
    print(f"unit model, w=2, {order:10s}: makespan {makespan:.0f}")

# the calibrated model prices stages the way the measured runs behaved;
# the gain grows with worker count because the exposed chase shrinks
model = calibrated_model()
print("\ncalibrated model, n=2048:")
for w in (1, 2, 3, 4, 6):
    mk = {}
    for order in ("pipelined", "sequential"):
        _, mk[order] = simulate(model, PipelineConfig(workers=w, b=32,
                                                      order=order), 2048)
    ratio = mk["pipelined"] / mk["sequential"]
    print(f"  w={w}: pipelined/sequential = {ratio:.4f}")

# the broadcast scheme trades words for flops; with the model's rates it
# pays off for any bandwidth below the crossover
print(f"\nbroadcast crossover bandwidth at (p={model.p:.0e}, "
      f"q={model.q:.0e}): b < {crossover_bandwidth(model.p, model.q) + 1}")

# same comparison on the actual threads.  n is kept modest so the demo
# finishes quickly; the gap widens with problem size
n, w = 1024, 4
a, _ = generate(SpectrumSpec("Uniform", n, seed=5))
print(f"\nreal runs, n={n}, w={w}:")
idle = {}
for order in ("pipelined", "sequential"):
    _, events, _, _ = run(a, PipelineConfig(workers=w, b=32, order=order))
    idle[order] = mean_idle_fraction(events, w)
    print(f"  {order:10s}: mean idle fraction {idle[order]:.3f}")
print(f"  pipelining removed {100 * (idle['sequential'] - idle['pipelined']) / idle['sequential']:.0f}%"
      f" of the idle time")
