# Utils module - utility functions and helpers
