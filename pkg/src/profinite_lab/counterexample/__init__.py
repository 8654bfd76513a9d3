"""The counterexample over N_inf: the space X, covers, and the lift pipeline."""
