"""Entry point: python -m src <command> ..."""

from src.bench import main

if __name__ == "__main__":
    raise SystemExit(main())
