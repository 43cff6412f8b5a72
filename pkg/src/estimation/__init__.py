# Estimation module - centralized, gossip-based and diffusion estimators
