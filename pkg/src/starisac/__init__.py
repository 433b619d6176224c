"""STAR-RIS assisted ISAC downlink simulator with rate-splitting multiple access.

Maximizes radar sensing SINR under per-user rate constraints via an
alternating SCA loop (Dinkelbach + SDR + SROCR for the transmit covariances,
Kronecker-lifted MM + SROCR for the surface coefficients).
"""

__version__ = "0.1.0"
