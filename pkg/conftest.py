# Keeps the repository root on sys.path so tests import the flat `src` modules.
