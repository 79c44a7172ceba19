from setuptools import setup, find_packages

setup(
    name="subset-nas",
    version="1.0.0",
    description="Architecture and hyperparameter search on adaptively selected data subsets",
    author="Subset NAS",
    packages=find_packages(exclude=["tests", "examples", "examples.*"]),
    install_requires=[
        "numpy>=1.22",
        "scipy>=1.8",
        "python-dotenv>=1.0.0",
        "typing-extensions>=4.5.0",
    ],
    entry_points={"console_scripts": ["subset-nas=subset_nas.main:main"]},
    python_requires=">=3.8",
)
