"""Contact-aware graph network surrogates for deformable triangle meshes."""

__version__ = "0.1.0"
