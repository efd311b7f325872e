from .guidance import guidance_correction, guided_eps
from .results import SampleResult, TrajectoryMetadata, results_to_corpus, write_samples
from .samplers import ddim_step, ddim_timesteps, ddpm_step, run_chain
from .translate import SamplingModels, generate_unconditional, translate, translate_batch

__all__ = [
    "SampleResult",
    "SamplingModels",
    "TrajectoryMetadata",
    "ddim_step",
    "ddim_timesteps",
    "ddpm_step",
    "generate_unconditional",
    "guidance_correction",
    "guided_eps",
    "results_to_corpus",
    "run_chain",
    "translate",
    "translate_batch",
    "write_samples",
]
