"""Editable free-view human renderer.

A pose-conditioned feature volume is raymarched to per-pixel features that
decode to body-part probabilities and UV texture coordinates; those index
pose-dependent neural texture stacks for view-dependent color.  Geometry
(where/which part) and appearance (what color) stay disentangled, which is
what makes reposing, reshaping, and retexturing cheap edits.
"""

__version__ = "0.1.0"
