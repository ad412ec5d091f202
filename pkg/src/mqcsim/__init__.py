"""Exact multiple-quantum coherence scrambling simulations on spin-1/2
systems, Floquet pulse-train detection, and cluster-size recovery by
regularized kernel inversion."""

__version__ = "0.1.0"

from .ddprobe import (
    DdConfig,
    DdSeries,
    DecayFit,
    SweepCell,
    SweepResult,
    cumulative_snr,
    estimate_noise_sigma,
    fit_biexponential,
    measured_snr,
    optimal_cycles,
    run_dd,
    run_dd_stepwise,
    scans_to_match_snr,
    sweep,
)
from .errors import (
    CapExceeded,
    ConfigError,
    DimensionMismatch,
    FitFailure,
    IllConditionedWarning,
    ImaginaryResidueWarning,
    InvalidGeometry,
    MqcsimError,
    NoFeasibleSolution,
    NonConvergence,
    NonPositiveData,
    NonUniformPhaseGrid,
    NoPeaks,
)
from .evolution import (
    Axis,
    Delay,
    EigenBasis,
    Propagator,
    Pulse,
    PulseProgram,
    aht_error,
    collective_pulse,
    compile_program,
    dq_block,
    evolve,
    hamiltonian_matrix,
    krylov_expmv,
    program_from_json,
    program_to_json,
    pulse_matrix,
)
from .inversion import (
    ClusterDistribution,
    DistributionAnalytics,
    GaussianFit,
    KernelProblem,
    PowerLawFit,
    analyze,
    fit_power_law,
    gaussian_fit_baseline,
    invert,
    make_kernel_problem,
    mixture_second_moment,
    problem_from_spectrum,
)
from .mqc import (
    CoherenceSpectrum,
    Mode,
    MqcRun,
    PhaseSignal,
    density_spectra,
    loschmidt_echo,
    otoc_direct,
    otoc_second_moment,
    phase_signals,
    run_protocol,
    spectrum_from_density,
    spectrum_from_phases,
    uniform_phase_grid,
)
from .spins import (
    AllToAll,
    Chain,
    ExplicitCouplings,
    Lattice3D,
    OperatorKind,
    SpinSystem,
    apply_operator,
    build_system,
    coherence_order,
    magnetization_values,
    system_from_json,
    system_to_json,
)
