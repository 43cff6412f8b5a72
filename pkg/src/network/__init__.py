# Network module - gossip exchange simulation
