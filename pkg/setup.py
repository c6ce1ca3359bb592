from setuptools import setup, find_packages

# This setup.py is maintained for backward compatibility.
# The primary build configuration is in pyproject.toml

setup(
    name="StateIS",
    packages=find_packages(include=["stateis", "stateis.*"]),
    python_requires=">=3.9",
)
