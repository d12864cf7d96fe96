"""sparseavatar: animatable human + background reconstruction from limited views.

The package trains two neural fields from a monocular capture whose camera
only covers a narrow arc around a person: a radiance field for the static
background and a canonical-space signed-distance field for the human,
regularized by sagittal symmetry, explicit body-mesh distance supervision
and a co-trained single-image digitization branch.
"""

__version__ = "0.1.0"
