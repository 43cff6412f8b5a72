# src/__version__.py
VERSION = "1.0.0"
SCHEMA_VERSION = 1
