"""Allow running as `python -m projive`."""

from projive.main import main

if __name__ == "__main__":
    raise SystemExit(main())
