"""
Set up the demosynth module.
"""
from setuptools import setup, find_packages


def readme():
    "Returns the contents of the README.rst file"
    with open("README.rst") as readmefile:
        return readmefile.read()


setup(
    name='demosynth',
    version="0.1",
    description=(
        'Program synthesis from agent demonstrations with a visual token '
        'language and a transformer program generator'),
    long_description=readme(),
    packages=find_packages(exclude=['tests']),
    python_requires='>=3.8',
    install_requires=[
        'docopt',
        'PyYAML',
        'numpy',
        'pandas',
        'torch',
    ],
    extras_require={
        'test': ['pytest', 'hypothesis'],
    },
    scripts=[
        'bin/demosynth',
    ],
)
