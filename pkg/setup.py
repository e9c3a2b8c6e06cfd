from setuptools import setup

with open("README.md") as f:
    long_description = f.read()

version = {}
with open("ipower/version.py") as fp:
    exec(fp.read(), version)

_extras_require = {
    "strategies": ["hypothesis >= 5.41.1"],
}
extras_require = {
    **_extras_require,
    "all": list(set(x for l in _extras_require.values() for x in l)),
}

setup(
    name="ipower",
    version=version["__version__"],
    description="Offline policy optimization by iterated maximization of "
    "concave lower bounds on importance-sampled returns.",
    long_description=long_description,
    long_description_content_type="text/markdown",
    keywords=[
        "reinforcement-learning",
        "policy-search",
        "importance-sampling",
        "off-policy",
    ],
    license="MIT",
    data_files=[("", ["LICENSE.txt"])],
    packages=["ipower"],
    install_requires=[
        "packaging >= 20.0",
        "numpy >= 1.17.0",
        "pandas >= 1.0.0",
        "scipy >= 1.8.0",
        "pyyaml >= 5.1",
        "wrapt",
    ],
    extras_require=extras_require,
    entry_points={"console_scripts": ["ipower = ipower.cli:main"]},
    python_requires=">=3.7",
    platforms="any",
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Operating System :: OS Independent",
        "License :: OSI Approved :: MIT License",
        "Intended Audience :: Science/Research",
        "Programming Language :: Python",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.7",
        "Programming Language :: Python :: 3.8",
        "Programming Language :: Python :: 3.9",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],
)
