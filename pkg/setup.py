#!/usr/bin/env python

import re
import sys

from setuptools import setup

python_version = sys.version_info[:2]
if python_version < (3, 8):
    sys.exit("Python %s.%s is not supported by cloudcast." % python_version)

with open("cloudcast/__init__.py") as init_file:
    init = init_file.read()
    description = re.search('"""(.*)', init).group(1)
    version = re.search("__version__ = '(.*)'", init).group(1)

with open("README.md") as readme_file:
    readme = readme_file.read()

require_cloudcast = [
    'numpy>=1.21,<3', 'pandas>=1.3,<3', 'scipy>=1.7,<2',
    'statsmodels>=0.13,<1', 'torch>=1.10,<3', 'matplotlib>=3.4,<4',
    'pyparsing>=3.0.9,<4']
require_docs = ['sphinx>=4,<8', 'sphinx_rtd_theme>=1,<3']
require_tests = ['pytest>=6,<9']


def main():

    setup(
        name='cloudcast',

        version=version,
        description=description,

        license='MIT',

        packages=['cloudcast', 'cloudcast.adapters'],

        entry_points=dict(console_scripts=[
            'cloudcast=cloudcast.shell:main']),

        long_description=readme,
        long_description_content_type='text/markdown',

        classifiers=[
            'Development Status :: 4 - Beta',
            'Environment :: Console',
            'Intended Audience :: Science/Research',
            'Intended Audience :: System Administrators',
            'License :: OSI Approved :: MIT License',
            'Natural Language :: English',
            'Operating System :: OS Independent',
            'Programming Language :: Python',
            'Programming Language :: Python :: 3',
            'Programming Language :: Python :: 3.8',
            'Programming Language :: Python :: 3.9',
            'Programming Language :: Python :: 3.10',
            'Programming Language :: Python :: 3.11',
            'Topic :: Scientific/Engineering :: Artificial Intelligence',
            'Topic :: System :: Distributed Computing'
        ],

        install_requires=require_cloudcast,
        extras_require={
            'docs': require_docs,
            'tests': require_tests
        },
    )


if __name__ == '__main__':
    main()
