"""
Process-level settings for the Tree of Concepts harness.

Values come from the environment (or a local .env file). Experiment settings
live in JSON run configs, see models.RunConfig.
"""
import os
import sys
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Configuration
DATA_DIR = os.getenv("TOC_DATA_DIR", "data")
OUTPUT_DIR = os.getenv("TOC_OUTPUT_DIR", "runs")
N_JOBS = int(os.getenv("TOC_N_JOBS", "1"))
VERBOSE = os.getenv("TOC_VERBOSE", "True").lower() == "true"
EVENT_LOG = os.getenv("TOC_EVENT_LOG", os.path.join(OUTPUT_DIR, "events.json"))

# Missing-cell tokens accepted in raw CSVs
MISSING_TOKENS = ("", "?")

# Concept-confidence threshold for the contradiction audit
CONFIDENCE_TAU = 0.8

# prepare warns when the preprocessor is fitted on fewer train rows than this
MIN_FIT_ROWS = 30


def status(message, level="ok"):
    """Print a progress line. Goes to stderr so stdout stays machine-readable."""
    if not VERBOSE:
        return
    prefix = {"ok": "✓", "warn": "⚠", "error": "❌", "info": " "}.get(level, " ")
    print(f"{prefix} {message}", file=sys.stderr)
