from os import path

from setuptools import setup, find_packages

with open(path.join(path.abspath(path.dirname(__file__)), "README.md"), encoding="utf-8") as f:
    README = f.read()
with open(path.join(path.abspath(path.dirname(__file__)), "VERSION"), encoding="utf-8") as f:
    version = f.read().strip()

setup(
    name="groundwork",
    packages=find_packages(include=["groundwork*"]),
    install_requires=[
        "msgpack",
        "numpy",
        "params-proto>=2.11.16,<3",
        "pillow",
        "scipy",
    ],
    entry_points={"console_scripts": ["groundwork=groundwork.cli:entry_point"]},
    description="Ground surfaces from terrestrial point clouds",
    long_description=README,
    long_description_content_type="text/markdown",
    version=version,
)
