"""Build script: compiles the optional Cython shortest-path-tree kernel.

The package works without the extension (a pure-Python kernel is selected
at import time), so a failed compile downgrades to a warning instead of
aborting the install.  Set LIGHTMESH_NO_EXT=1 to skip the extension
entirely.
"""

import os
import sys

from setuptools import setup

ext_modules = []
if os.environ.get("LIGHTMESH_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/lightmesh/_spt_core.pyx"],
            language_level="3",
        )
    except Exception as exc:  # noqa: BLE001 - any build-env problem means "no extension"
        print(f"lightmesh: skipping compiled SPT kernel ({exc})", file=sys.stderr)

setup(ext_modules=ext_modules)
