"""cyclex: counterfactual explanation of black-box report generators.

A frozen generator reads grayscale chest phantoms and emits templated finding
reports. A conditional diffusion model trained on the generator's own outputs
reconstructs each query via deterministic inversion, regenerates it with a
finding removed from the conditioning, verifies the removal cyclically through
the generator, and localizes the evidence with difference frames.
"""

__version__ = "0.1.0"
