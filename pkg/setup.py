#
# Copyright (C) 2026  The depolab developers.  All rights reserved.
#
# This library is free software; you can redistribute it and/or
# modify it under the terms of the GNU Lesser General Public
# License as published by the Free Software Foundation; either
# version 2.1 of the License, or (at your option) any later version.
#
# This library is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the GNU
# Lesser General Public License for more details.
#
# You should have received a copy of the GNU Lesser General Public
# License along with this library; if not, write to the Free Software
# Foundation, Inc., 51 Franklin Street, Fifth Floor, Boston, MA  02110-1301
# USA
#
from setuptools import setup, find_packages

with open("README.md", "r") as f:
    long_description = f.read()

setup(
    name="depolab",
    version="0.1",
    author="The depolab developers",
    description="Decoupled policy optimization of hybrid latent-reasoning "
                "policies at desk scale",
    long_description=long_description,
    long_description_content_type="text/markdown",
    keywords='reinforcement learning latent reasoning vmf ppo',
    packages=find_packages(include=['depolab', 'depolab.*']),
    install_requires=[
        "numpy>=1.17",
    ],
    extras_require={
        "test": ["scipy"],
    },
    entry_points={
        "console_scripts": [
            "depolab = depolab.cli:main",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: GNU Lesser General"
        " Public License v2 or later (LGPLv2+)",
        "Programming Language :: Python :: 3",
    ],
    python_requires='>=3.6',
)
