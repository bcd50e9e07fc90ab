"""Benchmark harness: workload generation, strategy sweeps, reporting."""
