# src/__init__.py
# (empty file)