from setuptools import find_packages, setup

setup(
    name="nmtlab",
    version="1.0.0",
    packages=find_packages(include=["nmtlab", "nmtlab.*"]),
    install_requires=[
        "numpy>=1.21.0",
        "voluptuous>=0.13.1",
        "psutil>=5.9.0",
    ],
    entry_points={"console_scripts": ["nmtlab=nmtlab.cli:main"]},
)
