"""Allow running the CLI as python -m d4am."""

from d4am.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
