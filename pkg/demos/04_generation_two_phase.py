"""
Generative calibration: train a ranker, then optimize against it
================================================================

Generative tasks have no accuracy to climb, so the pipeline first rephrases
the task into a 1-5 ranking task and calibrates a ranker prompt for it
(classification machinery, boundary samples drawn from the top two ranks).
It then freezes a set of evaluation inputs and hill-climbs the generation
prompt on the mean rank the calibrated ranker assigns to its outputs.

The scripted ranker here loves the word "wonderful": the proposals move the
generation prompt from outputs that lack it (mean rank 2) to outputs that
include it (mean rank 5).
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
from scenarios import GenerationScenario  # the scripted two-phase scenario

from promptcal import run_generation

scenario = GenerationScenario()
gateway = scenario.gateway()
result = run_generation(scenario.config(), gateway, on_progress=print)

print()
print("ranker task:", result.ranker_task_description)
print("calibrated ranker prompt:", result.ranker_prompt)
print("evaluation inputs:", result.eval_inputs)
print("phase-2 scores:", result.history.scores())
print("calibrated generation prompt:", result.calibrated_generation_prompt)

sample_gen = result.ledger.to_json()["breakdown"]["sample_gen"]["requests"]
after_phase1 = result.ledger_after_phase1["breakdown"]["sample_gen"]["requests"]
print("sample_gen calls in phase 2:", sample_gen - after_phase1, "(always zero)")
