"""latentalign: joint latent-space alignment of longitudinal measurement instruments.

Per-instrument variational autoencoders map item batteries into a shared
low-dimensional space, patient-specific linear ODE systems describe the
latent dynamics, and an inverse-variance weighted combination of solutions
started from every encoded visit yields one smooth trajectory per patient.
Training couples the instruments through adversarial-style, consistency and
variance-ratio penalties; synthetic registry-like cohorts and misalignment
diagnostics characterize when the alignment succeeds.
"""

__version__ = "0.1.0"
