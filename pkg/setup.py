from setuptools import setup

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    requirements = [
        line.strip()
        for line in fh
        if line.strip() and not line.startswith("#") and not line.startswith("pytest")
    ]

setup(
    name="bibeefmm",
    description=(
        "Matrix-free boundary element solvation and binding energies with a fast multipole method"
    ),
    long_description=long_description,
    long_description_content_type="text/markdown",
    py_modules=[
        "molgeom",
        "octree",
        "harmonics",
        "fmm",
        "bem",
        "solvation_cli",
        "error_handling",
        "monitoring",
        "benchmark",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    entry_points={
        "console_scripts": [
            "bibeefmm=solvation_cli:main",
        ],
    },
    include_package_data=True,
    package_data={
        "": ["*.md", "*.txt", "schemas/*.json"],
    },
    keywords="electrostatics, solvation, boundary element method, fast multipole method, BIBEE",
)
