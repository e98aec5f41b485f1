"""Twin-field QKD simulation and key-rate analysis.

Subpackages follow the data flow: ``channel`` and ``encoding`` describe the
link and the pulse patterns, ``stabilisation`` the phase lock, ``detection``
the Monte Carlo detection at the measurement node, ``decoy`` and
``keyrates`` the security analysis, ``twcc`` the two-way post-processing
and ``cli`` the configuration-driven runner.
"""
from .channel import ChannelParams, skc0, transmittance
from .encoding import PatternPair, ProtocolParams, build_pattern, phase_bin
from .ledger import CountsLedger, read_ledger_csv, write_ledger_csv
from .detection import EventStream, simulate_session, tally
from .decoy import DecoyBounds, chernoff_interval, sns_decoy_bounds
from .keyrates import FiniteSizeParams, KeyRateReport, TwccStats, binary_entropy
from .pipeline import ReplayOptions, replay
from .stabilisation import DriftModel, LockReport, LoopConfig, run_dual_band_lock, simulate_free_drift
from .twcc import RawKeyPair, TwccOutcome, extract_raw_keys, twcc_round

__version__ = "0.1.0"
