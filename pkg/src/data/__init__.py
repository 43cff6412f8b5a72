# Data module - case files, replay bundles and result files
