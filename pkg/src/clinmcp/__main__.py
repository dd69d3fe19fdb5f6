"""Module entry: python -m clinmcp."""

from .cli import main

main()
