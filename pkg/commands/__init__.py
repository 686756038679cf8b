# /superlab/commands/__init__.py
