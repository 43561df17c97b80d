# Copyright (C) 2026 MetaCurv developers.
# This file is part of MetaCurv.
# See the file 'LICENSE' for copying permission.

from setuptools import setup, find_packages

setup(
    name="MetaCurv",
    version="0.1",
    author="MetaCurv developers",
    packages=find_packages(exclude=("tests",)),
    license="GPLv3",
    description="Meta-curvature for few-shot learning, with a sinusoid regression benchmark",
    python_requires=">=3.6",
    install_requires=[
        "click",
        "numpy>=1.17",
    ],
    extras_require={
        "dev": [
            "mock==2.0.0",
            "pytest>=4.4.1"
        ]
    },
    entry_points={
        "console_scripts": [
            "metacurv = metacurv.main:metacurv",
        ]
    },
)
