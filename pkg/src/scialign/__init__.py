"""Desk-scale laboratory for science-grounded text-to-image alignment.

Submodules:

* ``world``        - procedural synthetic science world with ground truth
* ``preference``   - reward and preference losses (pure math)
* ``reward_model`` - toy dual-encoder reward model and its trainer
* ``flow``         - rectified-flow generator, codec, SFT, ODE sampler
* ``sde``          - stochastic sampler, churn schedule, Gaussian policy
* ``dpo``          - masked trajectory preference optimisation (OFT)
* ``bench``        - scene/reality grading and the relative-improvement metric
* ``adapters``     - optional JSON-over-HTTP detector / subject / judge clients
* ``config``/``cli`` - run configuration and the stage commands
"""

__version__ = "0.1.0"
