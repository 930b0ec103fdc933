"""Dataset I/O, scene generators, training, rollout, benchmarks and the command line."""
