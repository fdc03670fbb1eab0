"""meshdistill: distill a radiance field into a featured triangle mesh.

The pipeline: train a small hash-grid radiance field on posed images, distill
it into a signed-distance / appearance network supervised through percentile
depths, extract a triangle mesh by marching cubes, bake per-vertex or atlas
features, and render novel views by rasterizing the mesh and decoding colors
with a small appearance network.
"""

__version__ = "0.1.0"
