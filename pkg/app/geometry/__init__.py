"""
Camera models, projection, plane-sweep warping and sparse tracks.
"""
