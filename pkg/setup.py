from setuptools import setup, find_packages

setup(
    name="metastable-mdp",
    version="1.0.0",
    packages=find_packages(where="src"),
    package_dir={"": "src"},
    install_requires=[
        "numpy>=1.24",
        "scipy>=1.10",
        "click>=8.0.0",
        "pydantic>=2.5",
        "python-dotenv>=1.0.0",
        "filelock>=3.12",
    ],
    extras_require={
        "test": ["pytest>=7.4"],
    },
    entry_points={
        "console_scripts": [
            "metastable-mdp=metastable_mdp.cli:cli",
        ],
    },
    description="Optimal control of Kawasaki dynamics through an auxiliary MDP over rectangular clusters",
    python_requires=">=3.9",
)
