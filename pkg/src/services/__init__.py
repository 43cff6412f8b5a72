# Services module - scenarios, trajectories, metrics and experiments
