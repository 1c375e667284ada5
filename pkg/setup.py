import platform

from setuptools import Extension, setup

extra_args = ["-O2", "-fno-plt"]
if platform.machine() in ("x86_64", "AMD64"):
    # Baseline x86-64 codegen; AVX2/CLWB/CLFLUSHOPT paths are compiled as
    # per-function targets and dispatched at runtime via CPUID.
    extra_args.append("-DTB_X86_64=1")

setup(
    ext_modules=[
        Extension(
            "tierbench._kernels",
            sources=["src/tierbench/_kernels.c"],
            extra_compile_args=extra_args,
        )
    ]
)
