#!/usr/bin/env python3
"""
setup.py - Package Manifest

WHY THIS SCRIPT EXISTS:
- Installs the flat library modules and the `dlm-traveltime` command
- Pins the numerical stack the models and reports are computed with

KEY ARCHITECTURAL DECISIONS:
- FLAT MODULES: each concern is one top-level module, imported by its plain name
- CONFIG SHIPS ALONGSIDE: config/, presets/ and repro/ are data files resolved from the repo root
"""

from setuptools import setup

setup(
    name="dlm-traveltime",
    version="1.0.0",
    description="Freeway velocity forecasting and travel time prediction with dynamic linear models",
    python_requires=">=3.9",
    py_modules=[
        "activity_log",
        "baselines",
        "cli",
        "config_loader",
        "core",
        "dlm",
        "errors",
        "evaluator",
        "ingest",
        "predict",
        "traveltime",
    ],
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.9",
        "pandas>=1.4",
        "pyyaml>=6.0",
    ],
    extras_require={"tests": ["pytest>=7.0"]},
    entry_points={"console_scripts": ["dlm-traveltime = cli:main"]},
)
