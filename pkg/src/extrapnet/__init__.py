"""Weight-shared recurrent residual networks that extrapolate by iterating longer."""

__version__ = "0.1.0"
