"""Paper-style figure rendering for metocal run artifacts.

Reads only the persisted JSON/CSV outputs of the metocal CLI (never
recomputing statistics) and writes PNG or SVG figures. Source colors follow
the house convention: deterministic red, LR cyan, NHGR magenta.
"""

__version__ = "0.1.0"

EXPECTED_SCHEMA_VERSION = 1

SOURCE_COLORS = {"det": "red", "lr": "c", "nhgr": "m"}

FIGURE_KINDS = (
    "error-panels",
    "aic-curves",
    "parameter-bands",
    "barcode",
    "crps-curves",
    "rank-histograms",
)
