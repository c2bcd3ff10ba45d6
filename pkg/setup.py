from setuptools import find_packages, setup

with open("requirements.txt") as f:
    requirements = [line.strip() for line in f if line.strip() and not line.startswith("#")]

setup(
    name="polypnet",
    version="0.1.0",
    description="Coupled attention-gated UNets with a split-attention encoder for polyp segmentation",
    packages=find_packages(exclude=["tests"]),
    py_modules=["main"],
    install_requires=[r for r in requirements if r.split("==")[0] in ("numpy", "scipy", "Pillow", "python-dotenv")],
    extras_require={"dev": [r for r in requirements if r.split("==")[0] in ("pytest", "scikit-learn", "black", "flake8")]},
    entry_points={"console_scripts": ["polypnet=main:main"]},
    python_requires=">=3.9",
)
