"""Numerical toolkit for Chern numbers of disordered lattice insulators with a mobility gap."""

from .chern import ChernResult, bloch_chern_oracle, chern_number, chern_of_hamiltonian, fermi_energy_scan
from .experiments import ConfigError, ExperimentConfig, emit_report, parse_config, run_continuity_experiment, run_scan
from .lattice import (BlockOperator, LatticeBox, ModelError, ModelSpec, SwitchFunction, build_hamiltonian,
                      holmgren_bound, nc_derivative, operator_norm)
from .localization import (CertificateThresholds, DecayFit, FractionalMomentConfig, b1_sup_bound,
                           combes_thomas_check, ensemble_b1_decay, ensemble_fractional_moment,
                           ensemble_second_moment, fermi_avg_projection_diff, fit_decay,
                           greens_fractional_energy_integral, insulator_certificate, sule_analysis)
from .metric import envelope_check, local_distance, opnorm_bound_from_metric
from .spectral import (EnergyWindow, SpectralError, apply_borel, contour_projection, diagonalize,
                       fermi_projection, max_degeneracy, resolvent_block)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
