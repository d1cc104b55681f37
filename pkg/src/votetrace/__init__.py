"""Vote deanonymization from periodic leftover-ballot counts.

Subpackages: ``model`` (domain types), ``ingest`` (file formats),
``simulator`` (synthetic election days), ``attack`` (the two-phase
assignment algorithm), ``evaluation`` (scoring, sweeps, brute-force
oracle), ``cli`` (command-line pipeline).
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
