"""Render MSE-vs-iteration figures from oamp experiment CSVs."""

from .plots import PlotDataError, PlotSpec, RunData, load_run, render

__version__ = "0.1.0"
