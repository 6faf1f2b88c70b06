"""Throughput of the simulation kernel backends.

    python benchmarks/bench_kernel.py [--pulses N] [--repeat R]

Runs the shipped example configuration through every available backend,
checks that they produce identical tallies and prints pulses per second.
"""
import argparse
import dataclasses
import time

from twinqe import io, kernel
from twinqe import simulator as sim


def bench(cfg, backend, repeat):
    best, tally = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        tally = sim.run(cfg.source, cfg.signal_channel, cfg.idler_channel, cfg.run, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, tally


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--pulses", type=int, default=2_000_000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    cfg = io.example_config()
    cfg = cfg.replace(run=dataclasses.replace(cfg.run, n_pulses=args.pulses))

    results = {name: bench(cfg, name, args.repeat) for name in kernel.available_backends()}
    tallies = {dataclasses.astuple(t) for _, t in results.values()}
    base = results.get("python", next(iter(results.values())))[0]
    print(f"{'backend':<8} {'seconds':>9} {'Mpulse/s':>9} {'speedup':>8}")
    for name, (sec, _) in sorted(results.items()):
        print(f"{name:<8} {sec:9.3f} {args.pulses / sec / 1e6:9.2f} {base / sec:8.1f}")
    print("identical tallies:", len(tallies) == 1)


if __name__ == "__main__":
    main()
