"""Toolkit for synthesizing, generating and evaluating human-object
interactions in 3D scenes with movable objects.

Submodules:
    geometry     point clouds, meshes, voxel grids, penetration tests
    scene        scene graphs, template text, grounding, object placement
    diffusion    DDPM noise schedule, sampling, inpainting
    denoiser     trainable denoiser, smoothing denoiser, conditioning
    affordance   hand-object joint affordance maps
    body         skeleton and capsule body proxy
    interaction  collision-aware motion + trajectory generation
    alignment    motion-scene alignment and physics filtering
    metrics      evaluation metrics
    hio          file formats (scenes, arrays, checkpoints, manifests)
    cli          command-line entry point
"""

__version__ = "0.1.0"
