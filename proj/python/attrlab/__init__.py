"""Python surface of the attribution-robustness laboratory."""

from attrlab._attrlab import *  # noqa: F401,F403
