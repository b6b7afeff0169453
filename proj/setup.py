import os
from glob import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup


def eigen_include() -> str:
    candidates = [
        os.environ.get("EIGEN3_INCLUDE_DIR", ""),
        "/usr/include/eigen3",
        "/usr/local/include/eigen3",
    ]
    for path in candidates:
        if path and os.path.isdir(path):
            return path
    raise RuntimeError("Eigen headers not found; set EIGEN3_INCLUDE_DIR")


ext_modules = [
    Pybind11Extension(
        "nlprompt._core",
        sorted(glob("src/*.cpp")) + ["bindings/module.cpp"],
        include_dirs=["include", "vendor", eigen_include()],
        cxx_std=20,
        extra_compile_args=["-pthread"],
        extra_link_args=["-pthread"],
    )
]

setup(ext_modules=ext_modules, cmdclass={"build_ext": build_ext})
