"""Interpretable Vision Transformer pipeline for four-class brain MRI scans."""

__version__ = '0.1.0'
