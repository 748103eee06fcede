"""Purification-resistant perturbations for a toy diffusion model.

Layers, bottom up: `tensor`/`nn`/`dct` (autodiff engine), `diffusion`
(schedule and closed-form DDPM algebra), `denoiser` (toy noise predictor),
`purify` (DiffPure and grid-iterated purification), `attack` (the guided PGD
perturbation), `workflow` (perturb/purify/finetune/sample experiment harness),
`imageio`/`config`/`cli` (reproducible runs on disk).
"""

__version__ = "0.1.0"
