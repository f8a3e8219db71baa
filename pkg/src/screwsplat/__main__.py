"""Allow running as: python -m screwsplat"""

from screwsplat.cli import main

raise SystemExit(main())
