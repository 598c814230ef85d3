"""Micro-architectural SoC fault simulator for EM-pulse style fault studies."""
from .core import MachineState, RunResult, Simulator, SocConfig, StepEvent, TrapEvent, run_image
from .faults import FaultSpec, L1IParams, L2Params, MmuParams, Mutation
from .integrity import MacConfig, mac_tag
from .isa import ProgramImage, assemble, assemble_file, decode, disassemble, encode

__version__ = "0.1.0"

__all__ = [
    "FaultSpec", "L1IParams", "L2Params", "MacConfig", "MachineState", "MmuParams", "Mutation",
    "ProgramImage", "RunResult", "Simulator", "SocConfig", "StepEvent", "TrapEvent",
    "assemble", "assemble_file", "decode", "disassemble", "encode", "mac_tag", "run_image",
]
