#!/usr/bin/env python
# encoding: utf-8

from setuptools import setup

setup(name='mfsocial', version='0.1',
      description=('Model-free design of mean-field social controls for '
                   'stochastic linear-quadratic populations'),
      packages=['mfsocial'],
      install_requires=['numpy>=1.22', 'scipy>=1.12', 'pandas>=1.4'],
      extras_require={'test': ['pytest>=7']},
      entry_points={'console_scripts': ['mfsocial = mfsocial.cli:main']},
      zip_safe=False)
