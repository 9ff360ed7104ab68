import os
import sys

from setuptools import setup, find_packages

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from uwqkd import __version__ as VERSION

# Read requirements
with open("requirements.txt") as f:
    requirements = [
        line.split("#")[0].strip()
        for line in f
        if line.strip() and not line.startswith("#")
    ]

# Development dependencies
dev_requirements = [
    "pytest>=8.0.0",
    "pytest-cov>=4.1.0",
    "black>=24.2.0",
    "coverage>=7.4.0",
]

setup(
    name="uwqkd",
    version=VERSION,
    description="Accepted-only QBER of underwater CV-QKD links with virtual photon subtraction for homodyne, QMLD and QMSD receivers.",
    long_description=open("README.md").read(),
    long_description_content_type="text/markdown",
    author="Jakhongir Ganiev",
    author_email="ganiyevuz@gmail.com",
    packages=find_packages(),
    include_package_data=True,
    package_data={"uwqkd": ["fixtures/*.yaml"]},
    install_requires=requirements,
    extras_require={
        "dev": dev_requirements,
    },
    entry_points={
        "console_scripts": ["uwqkd=uwqkd.cli:main"],
    },
    classifiers=[
        "Development Status :: 4 - Beta",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Physics",
    ],
    python_requires=">=3.10",
    keywords=[
        "quantum key distribution",
        "cv-qkd",
        "underwater",
        "photon subtraction",
        "turbulence",
        "qber",
        "monte carlo",
    ],
)
