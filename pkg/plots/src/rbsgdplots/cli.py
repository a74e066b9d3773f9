"""Render a figure described by a JSON spec file.

Usage: rbsgd-plots --spec figure.json
Exit codes: 0 ok, 1 bad spec, 2 schema/render failure.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from rbsgdplots.figures import SchemaError, load_spec, render


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(prog="rbsgd-plots", description=__doc__)
    parser.add_argument("--spec", required=True, help="path to a JSON figure spec")
    args = parser.parse_args(argv)
    try:
        spec = load_spec(args.spec)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        render(spec)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {spec.output}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
