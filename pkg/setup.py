from setuptools import setup, find_packages

setup(
    name="pyFedFlow",
    version="0.1.0",
    description="Federated autoencoders for Kuramoto-Sivashinsky flow data, with a POD baseline.",
    long_description=open("README.md", "r").read(),
    long_description_content_type="text/markdown",
    packages=find_packages(exclude=("tests",)),
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: GNU Affero General Public License v3",
        "Operating System :: OS Independent",
    ],
    python_requires=">=3.10",
    install_requires=["numpy"],
    extras_require={"test": ["pytest"]},
    entry_points={"console_scripts": ["pyfedflow = pyFedFlow.harness:main"]},
)
