import pathlib

from setuptools import setup, find_packages


here = pathlib.Path(__file__).parent

exec((here / "stmiss" / "_version.py").read_text(encoding="utf-8"))

LONG_DESC = (here / "README.rst").read_text(encoding="utf-8")

setup(
    name="stmiss",
    version=__version__,
    description=(
        "staged tree models learned from categorical data with missing values"
    ),
    long_description=LONG_DESC,
    license="MIT -or- Apache License 2.0",
    packages=find_packages(),
    package_data={"stmiss.generators": ["*.json"]},
    install_requires=[
        "async_generator",
        "attrs",
        "click",
        "numpy>=1.20",
        "outcome",
        "pandas>=1.5",
        "scipy",
        "trio>=0.16",
    ],
    extras_require={
        "checks": ["black", "flake8", "mypy", "towncrier>=19.9.0rc1"],
        "docs": [
            "sphinx >= 1.7.0",
            "sphinx-autodoc-typehints",
            "sphinx-click",
            "sphinx_rtd_theme",
            "sphinxcontrib-trio",
        ],
        "tests": [
            "coverage",
            "pytest",
            "pytest-cov",
            "pytest-faulthandler",
        ],
    },
    entry_points={"console_scripts": ["stmiss = stmiss._cli:cli"]},
    keywords=["staged trees", "missing data", "EM", "structure learning", "Trio"],
    python_requires=">=3.8",
    classifiers=[
        "License :: OSI Approved :: MIT License",
        "License :: OSI Approved :: Apache Software License",
        "Framework :: Trio",
        "Operating System :: POSIX :: Linux",
        "Operating System :: MacOS :: MacOS X",
        "Operating System :: Microsoft :: Windows",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: Implementation :: CPython",
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering :: Mathematics",
    ],
)
