"""
Setup script for SpecRoute.

Set SPECROUTE_CYTHON=1 to compile the numeric modules to C extensions
with Cython; the pure-Python package is installed otherwise.
"""

import os
from setuptools import setup, find_packages, Extension

# Modules with hot numeric loops; the CLI and preset plumbing stay pure Python
COMPILED_MODULES = [
    "src/depgraph.py",
    "src/spectral.py",
    "src/resampling.py",
    "src/ensemble.py",
    "src/metrics.py",
    "src/theory_oracle.py",
]

# Configure Cython compilation
cython_directives = {
    'language_level': '3',
    'boundscheck': False,
    'wraparound': False,
    'initializedcheck': False,
    'cdivision': True,
    'embedsignature': True,
    'binding': True
}


def create_extension_modules(py_files):
    """Create Cython extension modules from Python files."""
    import numpy as np

    extension_modules = []
    for py_file in py_files:
        module_path = py_file.replace('/', '.').replace('.py', '')
        extension_modules.append(Extension(
            name=module_path,
            sources=[py_file],
            include_dirs=[np.get_include()],
            extra_compile_args=['-O3'],
            language='c'
        ))
    return extension_modules


def ext_modules():
    if os.getenv("SPECROUTE_CYTHON", "0") != "1":
        return []
    from Cython.Build import cythonize
    return cythonize(create_extension_modules(COMPILED_MODULES), compiler_directives=cython_directives)


setup(
    name='specroute',
    version='0.1.0',
    description='Spectral routing of resampled training sets for majority-vote ensembles on Markov-dependent data',
    packages=find_packages(exclude=['tests']),
    ext_modules=ext_modules(),
    zip_safe=False,
    python_requires='>=3.9',
    install_requires=[
        'numpy',
        'scipy',
        'pandas',
        'arch',
    ],
    extras_require={
        'cython': ['cython'],
        'test': ['pytest', 'networkx'],
    },
    entry_points={
        'console_scripts': ['specroute=src.harness:main'],
    },
)
