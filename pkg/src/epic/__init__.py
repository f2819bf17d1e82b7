"""EPIC: privacy-preserving smart-meter data collection toolkit.

Subpackages:

* crypto    — group backends, homomorphic hash, MACs, signatures
* keymgmt   — proxy selection, key agreement, chains, mask schedules
* protocol  — per-round report generation, verification, recovery
* billing   — billing periods, discrete-log recovery, dynamic pricing
* analysis  — collusion models, cost model, masking distinguisher test
* netsim    — discrete-event simulator with attack injection
* cli       — batch command-line front end
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
