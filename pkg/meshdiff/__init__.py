"""meshdiff - Operator-consistent physics-informed learning of diffusion on irregular meshes."""

__version__ = "0.1.0"
