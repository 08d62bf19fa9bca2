"""Memory protection for DNN accelerators: functional and traffic simulation."""
from .experiment import ConfigError, ExperimentConfig, load_config, run_security_suite, run_sweep
from .isa import Accelerator, DeviceMode, Opcode, Response, compile_program
from .perfmodel import Scheme, SchemeConfig, SimulationError, run, slowdown, traffic_increase
from .workload import Dfg, Mode, build_network, schedule

__version__ = "0.1.0"

__all__ = [
    "Accelerator", "ConfigError", "DeviceMode", "Dfg", "ExperimentConfig", "Mode", "Opcode",
    "Response", "Scheme", "SchemeConfig", "SimulationError", "build_network", "compile_program",
    "load_config", "run", "run_security_suite", "run_sweep", "schedule", "slowdown",
    "traffic_increase",
]
