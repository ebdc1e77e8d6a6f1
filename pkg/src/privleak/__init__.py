"""Demographic leakage in latent-factor recommenders and its removal by
privacy-adversarial training.

Modules: :mod:`~privleak.data` (MovieLens ingestion and split),
:mod:`~privleak.model` (BPR recommender), :mod:`~privleak.adversarial`
(readout heads and gradient-reversal training), :mod:`~privleak.audit`
(post-hoc attackers), :mod:`~privleak.infotheory` (discrete information
measures and the Pareto front), :mod:`~privleak.experiment` and
:mod:`~privleak.cli` (sweeps and reporting).
"""

__version__ = "0.1.0"
